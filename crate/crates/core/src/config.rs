//! Run configuration (`key = value` files) and ablation presets.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::world::{Preset, SceneParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (sgd, adam)"))),
        }
    }
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Model width `C`.
    pub channels: usize,
    /// Alignment embedding width `c`.
    pub align_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
    pub text_width: usize,
    pub l_max: usize,
    pub stem_stride: usize,
    /// Stem and four stage widths.
    pub enc_widths: [usize; 5],
    pub aspp_dilations: Vec<usize>,
    /// Flow is multiplied by this before the motion encoder.
    pub flow_scale: f64,
    pub lambda: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub warmup: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub preset: Preset,
    pub train_clips: usize,
    pub val_clips: usize,
    pub noise: f64,
    pub min_size: usize,
    pub max_size: usize,
    pub max_speed: i64,
    pub min_gap: i64,
    /// Read training clips from here instead of generating them.
    pub train_dir: Option<String>,
    pub val_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneParams::default();
        RunConfig {
            seed: 0,
            frames: scene.frames,
            height: scene.height,
            width: scene.width,
            channels: 32,
            align_dim: 32,
            heads: 4,
            layers: 1,
            mlp_ratio: 2,
            text_width: 32,
            l_max: crate::world::vocab::L_MAX,
            stem_stride: 2,
            enc_widths: [16, 16, 32, 32, 32],
            aspp_dilations: vec![1, 2, 3],
            flow_scale: 0.25,
            lambda: 0.1,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            grad_clip: 5.0,
            warmup: 0,
            steps: 2000,
            eval_every: 500,
            preset: Preset::Easy,
            train_clips: 512,
            val_clips: 64,
            noise: scene.noise,
            min_size: scene.min_size,
            max_size: scene.max_size,
            max_speed: scene.max_speed,
            min_gap: scene.min_gap,
            train_dir: None,
            val_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)));
            };
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "frames" => self.frames = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "align_dim" => self.align_dim = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, v)?,
            "text_width" => self.text_width = parse(key, v)?,
            "l_max" => self.l_max = parse(key, v)?,
            "stem_stride" => self.stem_stride = parse(key, v)?,
            "enc_widths" => {
                let w = parse_list(key, v)?;
                self.enc_widths = w
                    .try_into()
                    .map_err(|_| Error::Config("enc_widths: expected five comma-separated widths".into()))?;
            }
            "aspp_dilations" => self.aspp_dilations = parse_list(key, v)?,
            "flow_scale" => self.flow_scale = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "warmup" => self.warmup = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "preset" => self.preset = v.parse()?,
            "train_clips" => self.train_clips = parse(key, v)?,
            "val_clips" => self.val_clips = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "min_size" => self.min_size = parse(key, v)?,
            "max_size" => self.max_size = parse(key, v)?,
            "max_speed" => self.max_speed = parse(key, v)?,
            "min_gap" => self.min_gap = parse(key, v)?,
            "train_dir" => self.train_dir = Some(v.to_string()),
            "val_dir" => self.val_dir = Some(v.to_string()),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("align_dim", self.align_dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("text_width", self.text_width),
            ("l_max", self.l_max),
            ("stem_stride", self.stem_stride),
            ("train_clips", self.train_clips),
            ("val_clips", self.val_clips),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.enc_widths.contains(&0) || self.aspp_dilations.contains(&0) {
            return Err(Error::Config("encoder widths and dilations must be positive".into()));
        }
        if self.channels % self.heads != 0 || self.text_width % self.heads != 0 {
            return Err(Error::Config(format!(
                "channels {} and text_width {} must be divisible by heads {}",
                self.channels, self.text_width, self.heads
            )));
        }
        let reals = [("lr", self.lr), ("lambda", self.lambda), ("grad_clip", self.grad_clip), ("weight_decay", self.weight_decay)];
        for (k, v) in reals {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{k} must be finite and non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("momentum and beta2 must lie in [0, 1)".into()));
        }
        if !self.flow_scale.is_finite() {
            return Err(Error::Config("flow_scale must be finite".into()));
        }
        Ok(())
    }

    pub fn scene(&self) -> SceneParams {
        SceneParams {
            height: self.height,
            width: self.width,
            frames: self.frames,
            noise: self.noise,
            min_size: self.min_size,
            max_size: self.max_size,
            max_speed: self.max_speed,
            min_gap: self.min_gap,
        }
    }

    /// Seed of the validation split, disjoint from the training seed stream.
    pub fn val_seed(&self) -> u64 {
        self.seed ^ 0x5A5A_0000_0000_0001
    }

    /// Canonical text form; [`RunConfig::parse`] of it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("frames", self.frames.to_string());
        kv("height", self.height.to_string());
        kv("width", self.width.to_string());
        kv("channels", self.channels.to_string());
        kv("align_dim", self.align_dim.to_string());
        kv("heads", self.heads.to_string());
        kv("layers", self.layers.to_string());
        kv("mlp_ratio", self.mlp_ratio.to_string());
        kv("text_width", self.text_width.to_string());
        kv("l_max", self.l_max.to_string());
        kv("stem_stride", self.stem_stride.to_string());
        kv("enc_widths", join(&self.enc_widths));
        kv("aspp_dilations", join(&self.aspp_dilations));
        kv("flow_scale", format!("{:?}", self.flow_scale));
        kv("lambda", format!("{:?}", self.lambda));
        kv("optimizer", self.optimizer.name().to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("momentum", format!("{:?}", self.momentum));
        kv("beta2", format!("{:?}", self.beta2));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("grad_clip", format!("{:?}", self.grad_clip));
        kv("warmup", self.warmup.to_string());
        kv("steps", self.steps.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("preset", self.preset.name().to_string());
        kv("train_clips", self.train_clips.to_string());
        kv("val_clips", self.val_clips.to_string());
        kv("noise", format!("{:?}", self.noise));
        kv("min_size", self.min_size.to_string());
        kv("max_size", self.max_size.to_string());
        kv("max_speed", self.max_speed.to_string());
        kv("min_gap", self.min_gap.to_string());
        if let Some(d) = &self.train_dir {
            kv("train_dir", d.clone());
        }
        if let Some(d) = &self.val_dir {
            kv("val_dir", d.clone());
        }
        s
    }
}

/// Component switches of one ablation row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AblationConfig {
    pub motion: bool,
    pub mmvt: bool,
    pub lgff: bool,
    pub align: bool,
    /// MMVT layers without temporal attention.
    pub cma_only: bool,
    /// Concat+conv fusion in place of cross-modal attention, then temporal attention.
    pub cat_plus_ta: bool,
    /// Concatenation decoder over both streams (the baseline decoder uses appearance only).
    pub cat_decoder: bool,
    /// Auxiliary per-stream BCE heads on the level-1 enhanced maps.
    pub aux_bce: bool,
    /// Only the language/vision alignment terms.
    pub l2am_only: bool,
}

pub const PRESET_NAMES: [&str; 12] =
    ["B", "B+M", "B+T", "B+M+T", "B+T+L", "B+M+T+L", "B+M+T+L+A", "+CMA", "+CAT+TA", "CAT", "+bce", "+l2am"];

/// The component ladder, in order.
pub const LADDER: [&str; 5] = ["B", "B+M", "B+M+T", "B+M+T+L", "B+M+T+L+A"];

impl AblationConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let none = AblationConfig::default();
        let bmtl = AblationConfig { motion: true, mmvt: true, lgff: true, ..none };
        let cfg = match name {
            "B" => none,
            "B+M" => AblationConfig { motion: true, ..none },
            "B+T" => AblationConfig { mmvt: true, ..none },
            "B+M+T" => AblationConfig { motion: true, mmvt: true, ..none },
            "B+T+L" => AblationConfig { mmvt: true, lgff: true, ..none },
            "B+M+T+L" => bmtl,
            "B+M+T+L+A" => AblationConfig { align: true, ..bmtl },
            "+CMA" => AblationConfig { motion: true, mmvt: true, cma_only: true, ..none },
            "+CAT+TA" => AblationConfig { motion: true, mmvt: true, cat_plus_ta: true, ..none },
            "CAT" => AblationConfig { motion: true, mmvt: true, cat_decoder: true, ..none },
            "+bce" => AblationConfig { aux_bce: true, ..bmtl },
            "+l2am" => AblationConfig { align: true, l2am_only: true, ..bmtl },
            _ => {
                return Err(Error::Config(format!("unknown ablation preset {name:?}; expected one of {}", PRESET_NAMES.join(", "))))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ablation: {m}")));
        if self.align && !(self.lgff && self.motion) {
            return bad("the alignment loss needs the LGFF decoder and the motion stream");
        }
        if self.aux_bce && !(self.lgff && self.motion) {
            return bad("auxiliary BCE heads need the LGFF decoder and the motion stream");
        }
        if self.l2am_only && !self.align {
            return bad("l2am_only needs align");
        }
        if (self.cma_only || self.cat_plus_ta) && !self.mmvt {
            return bad("cma_only and cat_plus_ta modify MMVT, which is disabled");
        }
        if self.cma_only && self.cat_plus_ta {
            return bad("cma_only and cat_plus_ta are exclusive");
        }
        if self.lgff && self.cat_decoder {
            return bad("lgff and cat_decoder are exclusive");
        }
        if self.cat_decoder && !self.motion {
            return bad("cat_decoder concatenates both streams and needs motion");
        }
        Ok(())
    }

    /// Names of the flags that differ.
    pub fn diff(&self, other: &AblationConfig) -> Vec<&'static str> {
        let a = self.flags();
        let b = other.flags();
        a.iter().zip(b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect()
    }

    pub fn flags(&self) -> [(&'static str, bool); 9] {
        [
            ("motion", self.motion),
            ("mmvt", self.mmvt),
            ("lgff", self.lgff),
            ("align", self.align),
            ("cma_only", self.cma_only),
            ("cat_plus_ta", self.cat_plus_ta),
            ("cat_decoder", self.cat_decoder),
            ("aux_bce", self.aux_bce),
            ("l2am_only", self.l2am_only),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig { lr: 0.003, optimizer: OptimizerKind::Sgd, train_dir: Some("d".into()), ..RunConfig::default() };
        cfg.aspp_dilations = vec![1, 2];
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(RunConfig::parse("colour = red"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("steps = many"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("heads = 3"), Err(Error::Config(_))));
        assert!(RunConfig::parse("# comment only\n\nsteps = 5 # trailing\n").unwrap().steps == 5);
    }

    #[test]
    fn all_presets_valid() {
        for p in PRESET_NAMES {
            AblationConfig::preset(p).unwrap();
        }
        assert!(AblationConfig::preset("B+A").is_err());
        let bad = AblationConfig { align: true, ..AblationConfig::default() };
        assert!(bad.validate().is_err());
    }
}
