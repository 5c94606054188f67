//! Multi-modal alignment loss: language/appearance, language/motion and
//! appearance/motion agreement scored as `σ(tan(π/2 · cos))` under BCE.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::autodiff::{sigmoid, Reduction, Var};
use crate::error::{Error, Result};
use crate::lgff::{upsample_to, LgffTrace};
use crate::mmvt::maps_to_tokens;
use crate::nn::Mlp;
use crate::params::{Init, ParamStore, Session};

/// Cosine similarities are clamped to `±(1 − SIM_CLAMP)` before `tan`.
pub const SIM_CLAMP: f64 = 1e-6;

/// Exhaustive pairs when `P² ≤` this, otherwise [`SAMPLED_PAIRS`] per frame.
pub const EXHAUSTIVE_PAIR_LIMIT: usize = 4096;
pub const SAMPLED_PAIRS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Appearance,
    Motion,
}

/// Which alignment terms contribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignTerms {
    pub l2am: bool,
    pub a2m: bool,
}

impl AlignTerms {
    pub const ALL: AlignTerms = AlignTerms { l2am: true, a2m: true };
}

/// The three projection MLPs into the shared `c`-wide space.
#[derive(Clone, Debug)]
pub struct AlignProj {
    pub a: Mlp,
    pub m: Mlp,
    pub l: Mlp,
    pub c: usize,
}

impl AlignProj {
    /// `width` is the decoder channel count, `c` the embedding width.
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, width: usize, c: usize) -> Result<Self> {
        Ok(AlignProj {
            a: Mlp::with_dims(store, init, &format!("{name}.a"), 3 * width, c, c)?,
            m: Mlp::with_dims(store, init, &format!("{name}.m"), 3 * width, c, c)?,
            l: Mlp::with_dims(store, init, &format!("{name}.l"), width, c, c)?,
            c,
        })
    }

    /// `[C]` sentence vector to `[c]`.
    pub fn language(&self, s: &mut Session, cls: Var) -> Result<Var> {
        let n = s.shape(cls).iter().product::<usize>();
        let row = s.reshape(cls, &[1, n])?;
        let y = self.l.forward(s, row)?;
        s.reshape(y, &[self.c])
    }
}

/// Upsamples the level-2 and level-3 enhanced maps to level-1 size,
/// concatenates with level 1 and projects every position: `[T, P, c]`.
pub fn aggregate(s: &mut Session, trace: &LgffTrace, stream: Stream, proj: &AlignProj) -> Result<Var> {
    let pick = |i: usize| match stream {
        Stream::Appearance => trace.levels[i].f_ea,
        Stream::Motion => trace.levels[i].f_em,
    };
    if trace.levels.len() != 3 {
        return Err(Error::Dimension(format!("alignment: trace has {} levels, expected 3", trace.levels.len())));
    }
    let maps = (0..3)
        .map(|i| pick(i).ok_or_else(|| Error::Config(format!("alignment: no enhanced {stream:?} map at level {}", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    let sh = s.shape(maps[0]).to_vec();
    let (h, w) = (sh[2], sh[3]);
    let up2 = upsample_to(s, maps[1], h, w)?;
    let up3 = upsample_to(s, maps[2], h, w)?;
    let cat = s.concat(&[maps[0], up2, up3], 1)?;
    let tokens = maps_to_tokens(s, cat)?;
    let mlp = match stream {
        Stream::Appearance => &proj.a,
        Stream::Motion => &proj.m,
    };
    mlp.forward(s, tokens)
}

/// `σ(tan(π/2 · clamp(sim)))`.
pub fn score_from_sim(sim: f64) -> f64 {
    sigmoid(logit_from_sim(sim))
}

fn logit_from_sim(sim: f64) -> f64 {
    (FRAC_PI_2 * sim.clamp(-1.0 + SIM_CLAMP, 1.0 - SIM_CLAMP)).tan()
}

/// Scalar score of two vectors; a zero-norm operand gives 0.5 and `true`.
pub fn alignment_score(u: &[f64], v: &[f64]) -> (f64, bool) {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return (0.5, true);
    }
    (score_from_sim(dot / (nu * nv)), false)
}

/// Graph version: cosine rows, clamp, `tan(π/2 ·)` logits.
pub fn score_logits(s: &mut Session, a: Var, b: Var) -> Result<Var> {
    let sim = s.cosine_rows(a, b)?;
    let sim = s.clamp(sim, -1.0 + SIM_CLAMP, 1.0 - SIM_CLAMP);
    let x = s.scale(sim, FRAC_PI_2);
    Ok(s.tan(x))
}

fn labels(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&b| f64::from(u8::from(b))).collect()
}

/// BCE of every row of `fv` (`[P, c]`) against `fl` (`[c]`), label = foreground.
pub fn vision_language_loss(s: &mut Session, fv: Var, fl: Var, fore: &[bool], red: Reduction) -> Result<Var> {
    let logits = score_logits(s, fv, fl)?;
    s.bce_with_logits(logits, &labels(fore), red)
}

/// BCE over pairs `(i, j)` of appearance row `i` and motion row `j`, label =
/// both foreground or both background.
pub fn cross_vision_loss(
    s: &mut Session,
    fa: Var,
    fm: Var,
    fore: &[bool],
    pairs: &[(usize, usize)],
    red: Reduction,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Usage("cross-vision alignment needs at least one pair".into()));
    }
    let (ii, jj): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let ra = s.embedding(fa, &ii)?;
    let rm = s.embedding(fm, &jj)?;
    let logits = score_logits(s, ra, rm)?;
    let y: Vec<f64> = pairs.iter().map(|&(i, j)| f64::from(u8::from(fore[i] == fore[j]))).collect();
    s.bce_with_logits(logits, &y, red)
}

/// All `P²` pairs when small, otherwise [`SAMPLED_PAIRS`] uniform draws.
pub fn sample_pairs(p: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if p * p <= EXHAUSTIVE_PAIR_LIMIT {
        (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).collect()
    } else {
        (0..SAMPLED_PAIRS).map(|_| (rng.gen_range(0..p), rng.gen_range(0..p))).collect()
    }
}

/// Per-clip alignment terms, each averaged over frames.
#[derive(Clone, Copy, Debug)]
pub struct AlignLosses {
    pub l_al: Option<Var>,
    pub l_ml: Option<Var>,
    pub l_am: Option<Var>,
    pub total: Var,
}

/// `fa`, `fm`: `[T, P, c]`; `fl`: `[c]`; `fore`: `T·P` level-1 labels.
#[allow(clippy::too_many_arguments)]
pub fn total_alignment_loss(
    s: &mut Session,
    fa: Var,
    fm: Var,
    fl: Var,
    fore: &[bool],
    terms: AlignTerms,
    red: Reduction,
    rng: &mut impl Rng,
) -> Result<AlignLosses> {
    let sh = s.shape(fa).to_vec();
    let [t, p, c] = sh[..] else {
        return Err(Error::Dimension(format!("alignment: expected [T, P, c] embeddings, got {sh:?}")));
    };
    if s.shape(fm) != sh.as_slice() || fore.len() != t * p {
        return Err(Error::Dimension(format!(
            "alignment: appearance {sh:?}, motion {:?}, {} labels",
            s.shape(fm),
            fore.len()
        )));
    }
    // Frames are stacked; with equal P per frame the batched mean is the
    // frame average, and a batched sum divided by T is the frame average of sums.
    let per_frame = |s: &mut Session, v: Var| match red {
        Reduction::Mean => v,
        Reduction::Sum => s.scale(v, 1.0 / t as f64),
    };
    let fa2 = s.reshape(fa, &[t * p, c])?;
    let fm2 = s.reshape(fm, &[t * p, c])?;
    let mut parts = Vec::new();
    let (mut l_al, mut l_ml, mut l_am) = (None, None, None);
    if terms.l2am {
        let a = vision_language_loss(s, fa2, fl, fore, red)?;
        let m = vision_language_loss(s, fm2, fl, fore, red)?;
        let (a, m) = (per_frame(s, a), per_frame(s, m));
        l_al = Some(a);
        l_ml = Some(m);
        parts.extend([a, m]);
    }
    if terms.a2m {
        let mut pairs = Vec::new();
        for f in 0..t {
            pairs.extend(sample_pairs(p, rng).into_iter().map(|(i, j)| (f * p + i, f * p + j)));
        }
        let am = cross_vision_loss(s, fa2, fm2, fore, &pairs, red)?;
        let am = per_frame(s, am);
        l_am = Some(am);
        parts.push(am);
    }
    let Some((&first, rest)) = parts.split_first() else {
        return Err(Error::Config("alignment: no terms enabled".into()));
    };
    let mut total = first;
    for &v in rest {
        total = s.add(total, v)?;
    }
    Ok(AlignLosses { l_al, l_ml, l_am, total })
}

/// Area-majority downsampling of a `[h, w]` mask by `factor`: a cell is
/// foreground when at least half its pixels are.
pub fn downsample_mask(mask: &[bool], h: usize, w: usize, factor: usize) -> Result<Vec<bool>> {
    if factor == 0 || h % factor != 0 || w % factor != 0 || mask.len() != h * w {
        return Err(Error::Dimension(format!("cannot downsample {h}x{w} mask by {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let mut count = 0;
            for dy in 0..factor {
                for dx in 0..factor {
                    count += usize::from(mask[(y * factor + dy) * w + x * factor + dx]);
                }
            }
            out.push(2 * count >= factor * factor);
        }
    }
    Ok(out)
}
