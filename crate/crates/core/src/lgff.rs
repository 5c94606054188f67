//! Language-guided feature fusion decoder, the plain concatenation decoder
//! used by the baselines, and the segmentation head.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{coordinate_features, Conv};
use crate::params::{Init, ParamStore, Session};

pub const COORD_CHANNELS: usize = 8;

/// Intermediate maps of one decoder level, all `[T, C, H, W]` except the
/// attention maps (`[T, 1, H, W]`).
#[derive(Clone, Copy, Debug)]
pub struct LevelTrace {
    pub f: Var,
    pub f_ea: Option<Var>,
    pub f_em: Option<Var>,
    pub att_a: Option<Var>,
    pub att_m: Option<Var>,
    pub g_ea: Option<Var>,
    pub g_em: Option<Var>,
}

/// Per-level traces, index 0 is level 1 (finest).
#[derive(Clone, Debug, Default)]
pub struct LgffTrace {
    pub levels: Vec<LevelTrace>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    Lgff,
    /// Plain concatenation of all inputs followed by two 3×3 convs.
    Cat,
}

#[derive(Clone, Debug)]
pub struct DecoderLevel {
    pub reduce_a: Conv,
    pub reduce_m: Option<Conv>,
    pub fuse_a: Option<Conv>,
    pub fuse_m: Option<Conv>,
    pub att_a: Option<Conv>,
    pub att_m: Option<Conv>,
    pub out1: Conv,
    pub out2: Conv,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub kind: DecoderKind,
    pub c: usize,
    /// Index 0 is level 1.
    pub levels: Vec<DecoderLevel>,
}

impl Decoder {
    /// `chan_a[i]`, `chan_m[i]` are the encoder channels at level `i + 1` (three levels).
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        kind: DecoderKind,
        c: usize,
        chan_a: &[usize],
        chan_m: Option<&[usize]>,
    ) -> Result<Self> {
        if chan_a.len() != 3 || chan_m.is_some_and(|m| m.len() != 3) {
            return Err(Error::Config("decoder: expected channel counts for three levels".into()));
        }
        let motion = chan_m.is_some();
        let mut levels = Vec::new();
        for i in 0..3 {
            let p = format!("{name}.l{}", i + 1);
            let reduce_a = Conv::pointwise(store, init, &format!("{p}.reduce_a"), chan_a[i], c)?;
            let reduce_m = match chan_m {
                Some(m) => Some(Conv::pointwise(store, init, &format!("{p}.reduce_m"), m[i], c)?),
                None => None,
            };
            let fuse_in = COORD_CHANNELS + 2 * c;
            let level = match kind {
                DecoderKind::Lgff => {
                    let streams = if motion { 2 } else { 1 };
                    DecoderLevel {
                        reduce_a,
                        reduce_m,
                        fuse_a: Some(Conv::new(store, init, &format!("{p}.fuse_a"), fuse_in, c, 3, 1, 1)?),
                        fuse_m: if motion {
                            Some(Conv::new(store, init, &format!("{p}.fuse_m"), fuse_in, c, 3, 1, 1)?)
                        } else {
                            None
                        },
                        att_a: Some(Conv::pointwise(store, init, &format!("{p}.att_a"), c, 1)?),
                        att_m: if motion { Some(Conv::pointwise(store, init, &format!("{p}.att_m"), c, 1)?) } else { None },
                        out1: Conv::new(store, init, &format!("{p}.out1"), streams * c, c, 3, 1, 1)?,
                        out2: Conv::new(store, init, &format!("{p}.out2"), c, c, 3, 1, 1)?,
                    }
                }
                DecoderKind::Cat => {
                    let cat_in = COORD_CHANNELS + c + c * if motion { 2 } else { 1 } + c;
                    DecoderLevel {
                        reduce_a,
                        reduce_m,
                        fuse_a: None,
                        fuse_m: None,
                        att_a: None,
                        att_m: None,
                        out1: Conv::new(store, init, &format!("{p}.out1"), cat_in, c, 3, 1, 1)?,
                        out2: Conv::new(store, init, &format!("{p}.out2"), c, c, 3, 1, 1)?,
                    }
                }
            };
            levels.push(level);
        }
        Ok(Decoder { kind, c, levels })
    }

    pub fn motion(&self) -> bool {
        self.levels[0].reduce_m.is_some()
    }

    /// Runs levels 3, 2, 1 starting from `f4` (`[T, C, H⁴, W⁴]`).
    ///
    /// `pyr_a[i]` / `pyr_m[i]` are the level-`i + 1` encoder maps; `cls` is `[C]`.
    pub fn decode(&self, s: &mut Session, pyr_a: &[Var], pyr_m: Option<&[Var]>, f4: Var, cls: Var) -> Result<(Var, LgffTrace)> {
        if pyr_a.len() < 3 || pyr_m.is_some_and(|m| m.len() < 3) {
            return Err(Error::Dimension("decoder: pyramid needs three levels".into()));
        }
        if pyr_m.is_some() != self.motion() {
            return Err(Error::Config("decoder: motion pyramid presence does not match configuration".into()));
        }
        let mut f = f4;
        let mut levels = vec![None; 3];
        for i in (0..3).rev() {
            let fm = pyr_m.map(|m| m[i]);
            let tr = self.fuse_level(s, i, pyr_a[i], fm, f, cls)?;
            f = tr.f;
            levels[i] = Some(tr);
        }
        Ok((f, LgffTrace { levels: levels.into_iter().map(Option::unwrap).collect() }))
    }

    /// One level; `level` is 0-based (0 = finest).
    pub fn fuse_level(&self, s: &mut Session, level: usize, fa: Var, fm: Option<Var>, f_prev: Var, cls: Var) -> Result<LevelTrace> {
        let p = &self.levels[level];
        let sa = s.shape(fa).to_vec();
        let [t, _, h, w] = sa[..] else {
            return Err(Error::Dimension(format!("decoder: expected [T, C, H, W] features, got {sa:?}")));
        };
        let up = upsample_to(s, f_prev, h, w)?;
        let pc = coordinate_features(h, w).reshape([1, COORD_CHANNELS, h, w])?;
        let pc = s.constant(pc);
        let pc = s.expand(pc, &[t, COORD_CHANNELS, h, w])?;
        let cls4 = s.reshape(cls, &[1, self.c, 1, 1])?;
        let ra = p.reduce_a.forward(s, fa)?;
        let rm = match (&p.reduce_m, fm) {
            (Some(conv), Some(fm)) => Some(conv.forward(s, fm)?),
            (None, None) => None,
            _ => return Err(Error::Config("decoder: motion stream mismatch".into())),
        };
        match self.kind {
            DecoderKind::Lgff => {
                let enhance = |s: &mut Session, conv: &Conv, reduced: Var| -> Result<Var> {
                    let x = s.concat(&[pc, up, reduced], 1)?;
                    let x = conv.forward(s, x)?;
                    s.mul(x, cls4)
                };
                let f_ea = enhance(s, p.fuse_a.as_ref().unwrap(), ra)?;
                let f_em = match rm {
                    Some(rm) => Some(enhance(s, p.fuse_m.as_ref().unwrap(), rm)?),
                    None => None,
                };
                let gate = |s: &mut Session, conv: &Conv, fe: Var| -> Result<(Var, Var)> {
                    let logit = conv.forward(s, f_ea)?;
                    let att = s.sigmoid(logit);
                    let g = s.mul(att, fe)?;
                    Ok((att, s.add(g, fe)?))
                };
                let (att_a, g_ea) = gate(s, p.att_a.as_ref().unwrap(), f_ea)?;
                let (att_m, g_em) = match f_em {
                    Some(fe) => {
                        let (a, g) = gate(s, p.att_m.as_ref().unwrap(), fe)?;
                        (Some(a), Some(g))
                    }
                    None => (None, None),
                };
                let mut streams = vec![g_ea];
                streams.extend(g_em);
                let cat = s.concat(&streams, 1)?;
                let f = two_convs(s, p, cat)?;
                Ok(LevelTrace { f, f_ea: Some(f_ea), f_em, att_a: Some(att_a), att_m, g_ea: Some(g_ea), g_em })
            }
            DecoderKind::Cat => {
                let tiled = s.expand(cls4, &[t, self.c, h, w])?;
                let mut parts = vec![pc, up, ra];
                parts.extend(rm);
                parts.push(tiled);
                let cat = s.concat(&parts, 1)?;
                let f = two_convs(s, p, cat)?;
                Ok(LevelTrace { f, f_ea: None, f_em: None, att_a: None, att_m: None, g_ea: None, g_em: None })
            }
        }
    }
}

fn two_convs(s: &mut Session, p: &DecoderLevel, x: Var) -> Result<Var> {
    let y = p.out1.forward(s, x)?;
    let y = s.relu(y);
    let y = p.out2.forward(s, y)?;
    Ok(s.relu(y))
}

/// Bilinear upsampling of `[.., h', w']` to `[.., h, w]` by an integer factor.
pub fn upsample_to(s: &mut Session, x: Var, h: usize, w: usize) -> Result<Var> {
    let sh = s.shape(x).to_vec();
    let (hp, wp) = (sh[sh.len() - 2], sh[sh.len() - 1]);
    if h % hp != 0 || w % wp != 0 || h / hp != w / wp {
        return Err(Error::Dimension(format!("cannot upsample {hp}x{wp} to {h}x{w} by one integer factor")));
    }
    s.upsample(x, h / hp)
}

/// 1×1 conv to one channel, sigmoid, bilinear upsample to frame resolution.
#[derive(Clone, Debug)]
pub struct SegHead {
    pub conv: Conv,
}

pub struct HeadOutput {
    /// `[T, 1, H¹, W¹]`
    pub logits: Var,
    /// `[T, 1, H_img, W_img]`
    pub probs: Var,
}

impl SegHead {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize) -> Result<Self> {
        Ok(SegHead { conv: Conv::pointwise(store, init, &format!("{name}.conv"), c, 1)? })
    }

    pub fn forward(&self, s: &mut Session, f1: Var, frame_h: usize, frame_w: usize) -> Result<HeadOutput> {
        let logits = self.conv.forward(s, f1)?;
        let p = s.sigmoid(logits);
        let probs = upsample_to(s, p, frame_h, frame_w)?;
        Ok(HeadOutput { logits, probs })
    }
}

/// Binary mask from probabilities; ties at 0.5 are foreground.
pub fn threshold(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p >= 0.5).collect()
}
