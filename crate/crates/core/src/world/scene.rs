use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::vocab::{encode_sentence, L_MAX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Square,
    Disk,
}

impl Shape {
    pub const ALL: [Shape; 2] = [Shape::Square, Shape::Disk];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Disk => "disk",
        }
    }
}

pub const COLOR_WORDS: [&str; 6] = ["red", "green", "blue", "yellow", "cyan", "magenta"];
pub const PALETTE: [[u8; 3]; 6] = [
    [220, 40, 40],
    [40, 200, 60],
    [50, 80, 230],
    [230, 220, 50],
    [40, 210, 220],
    [210, 50, 200],
];
pub const BACKGROUND: [u8; 3] = [30, 30, 30];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Index into [`PALETTE`].
    pub color: usize,
    /// Side length (square) or diameter (disk) in pixels.
    pub size: usize,
    /// Top-left corner of the bounding box at frame 0, `(x, y)`.
    pub start: (i64, i64),
    /// Pixels per frame, `(u, v)`.
    pub velocity: (i64, i64),
    pub is_target: bool,
}

impl ObjectSpec {
    pub fn origin_at(&self, t: usize) -> (i64, i64) {
        (self.start.0 + self.velocity.0 * t as i64, self.start.1 + self.velocity.1 * t as i64)
    }

    /// Whether pixel `(x, y)` is covered at frame `t`.
    pub fn covers(&self, t: usize, x: i64, y: i64) -> bool {
        let (ox, oy) = self.origin_at(t);
        let (dx, dy) = (x - ox, y - oy);
        let s = self.size as i64;
        if dx < 0 || dy < 0 || dx >= s || dy >= s {
            return false;
        }
        match self.shape {
            Shape::Square => true,
            Shape::Disk => {
                // Pixel centres against a circle centred in the box, in half-pixel units.
                let (cx, cy) = (2 * dx + 1 - s, 2 * dy + 1 - s);
                cx * cx + cy * cy <= s * s
            }
        }
    }

    /// Motion phrase from the dominant velocity axis.
    pub fn motion_words(&self) -> &'static str {
        let (u, v) = self.velocity;
        if u == 0 && v == 0 {
            "that is still"
        } else if u.abs() >= v.abs() {
            if u > 0 { "moving right" } else { "moving left" }
        } else if v > 0 {
            "moving down"
        } else {
            "moving up"
        }
    }
}

/// A fully specified clip. Later objects are drawn over earlier ones.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Half-width of uniform pixel noise, as a fraction of 255.
    pub noise: f64,
}

impl SceneSpec {
    /// Checks the invariants: one target, at least one frame, every object
    /// inside the canvas in every frame, and the target drawn last so its
    /// mask equals its occupancy.
    pub fn new(objects: Vec<ObjectSpec>, height: usize, width: usize, frames: usize, noise: f64) -> Result<Self> {
        let spec = SceneSpec { objects, height, width, frames, noise };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Scene(format!("empty canvas or clip: {}x{}x{}", self.frames, self.height, self.width)));
        }
        let targets = self.objects.iter().filter(|o| o.is_target).count();
        if targets != 1 {
            return Err(Error::Scene(format!("expected exactly one target, found {targets}")));
        }
        if !self.objects.last().is_some_and(|o| o.is_target) {
            return Err(Error::Scene("the target must be the last (topmost) object".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Scene(format!("noise {} outside [0, 1]", self.noise)));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.size == 0 || o.color >= PALETTE.len() {
                return Err(Error::Scene(format!("object {i}: size {} colour {}", o.size, o.color)));
            }
            for t in 0..self.frames {
                let (x, y) = o.origin_at(t);
                let s = o.size as i64;
                if x < 0 || y < 0 || x + s > self.width as i64 || y + s > self.height as i64 {
                    return Err(Error::Scene(format!("object {i} leaves the canvas at frame {t} (origin {x},{y})")));
                }
            }
        }
        Ok(())
    }

    pub fn target(&self) -> &ObjectSpec {
        self.objects.last().expect("validated scene has a target")
    }

    /// "the <colour> <shape> <motion>".
    pub fn sentence(&self) -> String {
        let t = self.target();
        format!("the {} {} {}", COLOR_WORDS[t.color], t.shape.word(), t.motion_words())
    }
}

/// One generated clip. Frames are stored as bytes so files round-trip exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// `[T, 3, H, W]`
    pub pixels: Vec<u8>,
    /// `[T, 2, H, W]`, `(u, v)` pixels per frame.
    pub flow: Vec<f32>,
    /// `[T, H, W]`
    pub masks: Vec<bool>,
    pub text: String,
    /// Padded to the configured maximum, `[CLS]` first.
    pub tokens: Vec<usize>,
}

impl ClipSample {
    /// `[T, 3, H, W]` in `[0, 1]`.
    pub fn frames_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Tensor::new([self.frames, 3, self.height, self.width], data).expect("consistent clip")
    }

    pub fn flow_tensor(&self) -> Tensor {
        let data = self.flow.iter().map(|&f| f64::from(f)).collect();
        Tensor::new([self.frames, 2, self.height, self.width], data).expect("consistent clip")
    }

    pub fn mask(&self, t: usize) -> &[bool] {
        let p = self.height * self.width;
        &self.masks[t * p..(t + 1) * p]
    }
}

/// Renders a scene. Only the pixel noise depends on `seed`.
pub fn generate_clip(spec: &SceneSpec, seed: u64) -> Result<ClipSample> {
    generate_clip_with_len(spec, seed, L_MAX)
}

pub fn generate_clip_with_len(spec: &SceneSpec, seed: u64, l_max: usize) -> Result<ClipSample> {
    spec.validate()?;
    let (h, w, n) = (spec.height, spec.width, spec.frames);
    let plane = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0u8; n * 3 * plane];
    let mut flow = vec![0f32; n * 2 * plane];
    let mut masks = vec![false; n * plane];
    let amp = spec.noise * 255.0;
    for t in 0..n {
        for y in 0..h {
            for x in 0..w {
                let owner = spec.objects.iter().rev().find(|o| o.covers(t, x as i64, y as i64));
                let (rgb, vel) = match owner {
                    Some(o) => (PALETTE[o.color], o.velocity),
                    None => (BACKGROUND, (0, 0)),
                };
                let i = y * w + x;
                for (ch, &base) in rgb.iter().enumerate() {
                    let noise = if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
                    pixels[(t * 3 + ch) * plane + i] = (f64::from(base) + noise).round().clamp(0.0, 255.0) as u8;
                }
                flow[(t * 2) * plane + i] = vel.0 as f32;
                flow[(t * 2 + 1) * plane + i] = vel.1 as f32;
                masks[t * plane + i] = owner.is_some_and(|o| o.is_target);
            }
        }
    }
    let text = spec.sentence();
    let tokens = encode_sentence(&text, l_max)?;
    Ok(ClipSample { height: h, width: w, frames: n, pixels, flow, masks, text, tokens })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// One object, which is the target.
    Easy,
    /// Target plus an appearance-identical distractor with different motion.
    MotionNecessity,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Easy => "easy",
            Preset::MotionNecessity => "motion-necessity",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Preset::Easy),
            "motion-necessity" => Ok(Preset::MotionNecessity),
            _ => Err(Error::Config(format!("unknown dataset preset {s:?} (easy, motion-necessity)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub noise: f64,
    pub min_size: usize,
    pub max_size: usize,
    pub max_speed: i64,
    /// Minimum pixel gap between the bounding boxes of two objects in every frame.
    pub min_gap: i64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams { height: 64, width: 64, frames: 3, noise: 0.04, min_size: 12, max_size: 20, max_speed: 3, min_gap: 12 }
    }
}

const DIRECTIONS: [(i64, i64); 5] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];

fn random_object(rng: &mut ChaCha8Rng, p: &SceneParams, shape: Shape, color: usize, size: usize, dir: (i64, i64)) -> ObjectSpec {
    let speed = rng.gen_range(1..=p.max_speed);
    let velocity = (dir.0 * speed, dir.1 * speed);
    let span = (p.frames as i64 - 1).max(0);
    // Start positions that keep the box inside the canvas over the whole clip.
    let range = |extent: usize, v: i64| {
        let travel = v * span;
        let lo = (-travel).max(0);
        let hi = extent as i64 - size as i64 - travel.max(0);
        (lo, hi)
    };
    let (xl, xh) = range(p.width, velocity.0);
    let (yl, yh) = range(p.height, velocity.1);
    ObjectSpec {
        shape,
        color,
        size,
        start: (rng.gen_range(xl..=xh.max(xl)), rng.gen_range(yl..=yh.max(yl))),
        velocity,
        is_target: false,
    }
}

fn boxes_overlap(a: &ObjectSpec, b: &ObjectSpec, frames: usize, gap: i64) -> bool {
    (0..frames).any(|t| {
        let (ax, ay) = a.origin_at(t);
        let (bx, by) = b.origin_at(t);
        let (sa, sb) = (a.size as i64, b.size as i64);
        ax < bx + sb + gap && bx < ax + sa + gap && ay < by + sb + gap && by < ay + sa + gap
    })
}

/// Samples a valid scene for `preset`, deterministic in `rng`.
pub fn sample_scene(preset: Preset, p: &SceneParams, rng: &mut ChaCha8Rng) -> Result<SceneSpec> {
    if p.min_size == 0 || p.min_size > p.max_size || p.max_speed < 1 {
        return Err(Error::Scene(format!("bad scene parameters {p:?}")));
    }
    let shape = *Shape::ALL.choose(rng).unwrap();
    let color = rng.gen_range(0..PALETTE.len());
    let size = rng.gen_range(p.min_size..=p.max_size);
    match preset {
        Preset::Easy => {
            let dir = *DIRECTIONS.choose(rng).unwrap();
            let mut target = random_object(rng, p, shape, color, size, dir);
            target.is_target = true;
            SceneSpec::new(vec![target], p.height, p.width, p.frames, p.noise)
        }
        Preset::MotionNecessity => {
            let mut dirs = DIRECTIONS;
            dirs.shuffle(rng);
            let (dt, dd) = (dirs[0], dirs[1]);
            for _ in 0..10_000 {
                let mut target = random_object(rng, p, shape, color, size, dt);
                let other = random_object(rng, p, shape, color, size, dd);
                target.is_target = true;
                if !boxes_overlap(&target, &other, p.frames, p.min_gap) {
                    return SceneSpec::new(vec![other, target], p.height, p.width, p.frames, p.noise);
                }
            }
            Err(Error::Scene("could not place two non-overlapping objects".into()))
        }
    }
}

/// Per-clip seed for clip `k` of a dataset with base seed `seed`.
pub fn clip_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64).rotate_left(17) ^ 0xD1B5_4A32_D192_ED03
}

/// `n` clips; clip `k` depends only on `(preset, params, seed, k)`.
pub fn generate_dataset(preset: Preset, p: &SceneParams, n: usize, seed: u64, l_max: usize) -> Result<Vec<ClipSample>> {
    (0..n)
        .map(|k| {
            let cs = clip_seed(seed, k);
            let mut rng = ChaCha8Rng::seed_from_u64(cs);
            let spec = sample_scene(preset, p, &mut rng)?;
            generate_clip_with_len(&spec, cs, l_max)
        })
        .collect()
}
