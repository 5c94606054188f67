//! Full model assembly for every ablation preset, and the per-clip objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{aggregate, downsample_mask, total_alignment_loss, AlignProj, AlignTerms, Stream};
use crate::autodiff::{Reduction, Var};
use crate::config::{AblationConfig, RunConfig};
use crate::error::{Error, Result};
use crate::lgff::{threshold, Decoder, DecoderKind, LgffTrace, SegHead};
use crate::mmvt::{maps_to_tokens, tokens_to_maps, ModalTokenBundle, Mmvt, MmvtVariant};
use crate::nn::Conv;
use crate::params::{Init, ParamStore, Session};
use crate::tensor::Tensor;
use crate::world::{ClipSample, TextEncoder, VisualEncoder};

/// Per-frame `Cat(A⁴, M⁴, tile(cls))` followed by two 3×3 conv + ReLU layers,
/// the non-transformer fusion.
#[derive(Clone, Debug)]
pub struct ConcatFusion {
    pub conv1: Conv,
    pub conv2: Conv,
    pub c: usize,
}

impl ConcatFusion {
    pub fn forward(&self, s: &mut Session, a4: Var, m4: Option<Var>, cls: Var) -> Result<Var> {
        let sh = s.shape(a4).to_vec();
        let cls4 = s.reshape(cls, &[1, self.c, 1, 1])?;
        let tiled = s.expand(cls4, &[sh[0], self.c, sh[2], sh[3]])?;
        let mut parts = vec![a4];
        parts.extend(m4);
        parts.push(tiled);
        let cat = s.concat(&parts, 1)?;
        let y = self.conv1.forward(s, cat)?;
        let y = s.relu(y);
        let y = self.conv2.forward(s, y)?;
        Ok(s.relu(y))
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: RunConfig,
    pub abl: AblationConfig,
    pub enc_a: VisualEncoder,
    pub enc_m: Option<VisualEncoder>,
    pub text: TextEncoder,
    pub fusion: Option<ConcatFusion>,
    pub mmvt: Option<Mmvt>,
    pub decoder: Decoder,
    pub head: SegHead,
    pub align: Option<AlignProj>,
    pub aux: Option<(Conv, Conv)>,
}

/// Each module draws its initial weights from its own stream, so switching
/// one component on or off leaves the others' initialisation unchanged.
fn module_init(seed: u64, module: &str) -> Init {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in module.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    Init::new(seed ^ h)
}

/// Scalar losses of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub seg: Var,
    pub align: Option<Var>,
    pub aux: Option<Var>,
    pub total: Var,
}

pub struct Forward {
    /// `[T, 1, H, W]`
    pub probs: Var,
    pub trace: LgffTrace,
    /// Level-1 spatial size.
    pub level1: (usize, usize),
    /// Sentence vector `[C]`.
    pub cls: Var,
}

impl Model {
    pub fn new(cfg: &RunConfig, abl: AblationConfig) -> Result<(Model, ParamStore)> {
        cfg.validate()?;
        abl.validate()?;
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let seed = cfg.seed;
        let enc = |store: &mut ParamStore, name: &str, c_in: usize| {
            VisualEncoder::new(store, &mut module_init(seed, name), name, c_in, cfg.stem_stride, &cfg.enc_widths, c, &cfg.aspp_dilations)
        };
        let enc_a = enc(&mut store, "enc_a", 3)?;
        let enc_m = if abl.motion { Some(enc(&mut store, "enc_m", 2)?) } else { None };
        let text =
            TextEncoder::new(&mut store, &mut module_init(seed, "text"), "text", cfg.text_width, cfg.heads, cfg.l_max, c)?;
        let streams = if abl.motion { 2 } else { 1 };
        let fusion = if !abl.mmvt || abl.cat_plus_ta {
            let mut init = module_init(seed, "fusion");
            let conv1 = Conv::new(&mut store, &mut init, "fusion.conv1", c * streams + c, c, 3, 1, 1)?;
            let conv2 = Conv::new(&mut store, &mut init, "fusion.conv2", c, c, 3, 1, 1)?;
            Some(ConcatFusion { conv1, conv2, c })
        } else {
            None
        };
        let mmvt = if abl.mmvt {
            let variant = MmvtVariant { cma: !abl.cat_plus_ta, ta: !abl.cma_only };
            Some(Mmvt::new(&mut store, &mut module_init(seed, "mmvt"), "mmvt", c, cfg.heads, cfg.mlp_ratio, cfg.layers, variant)?)
        } else {
            None
        };
        let kind = if abl.lgff { DecoderKind::Lgff } else { DecoderKind::Cat };
        let chan = enc_a.level_channels();
        let chan_m = enc_m.as_ref().map(|e| e.level_channels());
        let dec_m = if abl.lgff || abl.cat_decoder { chan_m.as_ref().map(|m| &m[..]) } else { None };
        let decoder = Decoder::new(&mut store, &mut module_init(seed, "dec"), "dec", kind, c, &chan, dec_m)?;
        let head = SegHead::new(&mut store, &mut module_init(seed, "head"), "head", c)?;
        let align = if abl.align {
            Some(AlignProj::new(&mut store, &mut module_init(seed, "align"), "align", c, cfg.align_dim)?)
        } else {
            None
        };
        let aux = if abl.aux_bce {
            let mut init = module_init(seed, "aux");
            Some((Conv::pointwise(&mut store, &mut init, "aux.a", c, 1)?, Conv::pointwise(&mut store, &mut init, "aux.m", c, 1)?))
        } else {
            None
        };
        let model = Model { cfg: cfg.clone(), abl, enc_a, enc_m, text, fusion, mmvt, decoder, head, align, aux };
        Ok((model, store))
    }

    pub fn check_clip(&self, clip: &ClipSample) -> Result<()> {
        if clip.tokens.len() != self.cfg.l_max {
            return Err(Error::Config(format!(
                "clip has {} tokens but the model expects l_max = {}",
                clip.tokens.len(),
                self.cfg.l_max
            )));
        }
        let (have, want) = ([clip.frames, clip.height, clip.width], [self.cfg.frames, self.cfg.height, self.cfg.width]);
        if have != want {
            return Err(Error::Config(format!("clip shape [T, H, W] = {have:?} but the model was configured for {want:?}")));
        }
        Ok(())
    }

    /// Builds the forward graph of one clip.
    pub fn forward(&self, s: &mut Session, clip: &ClipSample) -> Result<Forward> {
        self.check_clip(clip)?;
        let frames = s.constant(clip.frames_tensor());
        let pa = self.enc_a.forward(s, frames)?;
        let pm = match &self.enc_m {
            Some(enc) => {
                let mut flow = clip.flow_tensor();
                flow.data_mut().iter_mut().for_each(|v| *v *= self.cfg.flow_scale);
                let fv = s.constant(flow);
                Some(enc.forward(s, fv)?)
            }
            None => None,
        };
        let text = self.text.forward(s, &clip.tokens)?;
        let top_shape = s.shape(pa.top).to_vec();
        let (h4, w4) = (top_shape[2], top_shape[3]);
        let fused = match &self.fusion {
            Some(f) => Some(f.forward(s, pa.top, pm.map(|p| p.top), text.cls)?),
            None => None,
        };
        let f4 = match (&self.mmvt, fused) {
            (Some(mmvt), Some(fused)) => {
                let z_a = maps_to_tokens(s, fused)?;
                let out = mmvt.forward(s, &ModalTokenBundle { z_a, z_m: None, z_l: text.z_l })?;
                tokens_to_maps(s, out.z_a, h4, w4)?
            }
            (Some(mmvt), None) => {
                let z_a = maps_to_tokens(s, pa.top)?;
                let z_m = match pm {
                    Some(p) => Some(maps_to_tokens(s, p.top)?),
                    None => None,
                };
                let out = mmvt.forward(s, &ModalTokenBundle { z_a, z_m, z_l: text.z_l })?;
                tokens_to_maps(s, out.z_a, h4, w4)?
            }
            (None, Some(fused)) => fused,
            (None, None) => unreachable!("model without fusion"),
        };
        let pyr_m = if self.decoder.motion() { pm.map(|p| p.levels) } else { None };
        let (f1, trace) = self.decoder.decode(s, &pa.levels, pyr_m.as_ref().map(|m| &m[..]), f4, text.cls)?;
        let sh = s.shape(f1).to_vec();
        let out = self.head.forward(s, f1, clip.height, clip.width)?;
        Ok(Forward { probs: out.probs, trace, level1: (sh[2], sh[3]), cls: text.cls })
    }

    /// `L_seg + λ·L_align (+ auxiliary BCE)` for one clip. `step_seed` drives
    /// the alignment pair sampling.
    pub fn loss(&self, s: &mut Session, clip: &ClipSample, step_seed: u64) -> Result<(Forward, LossParts)> {
        let fwd = self.forward(s, clip)?;
        let gt: Vec<f64> = clip.masks.iter().map(|&m| f64::from(u8::from(m))).collect();
        let seg = s.bce_probs(fwd.probs, &gt, Reduction::Mean)?;
        let mut total = seg;
        let needs_level1 = self.align.is_some() || self.aux.is_some();
        let fore = if needs_level1 { Some(self.level1_labels(clip, fwd.level1)?) } else { None };
        let mut align = None;
        if let Some(proj) = &self.align {
            let fore = fore.as_ref().unwrap();
            let fa = aggregate(s, &fwd.trace, Stream::Appearance, proj)?;
            let fm = aggregate(s, &fwd.trace, Stream::Motion, proj)?;
            let fl = proj.language(s, fwd.cls)?;
            let terms = if self.abl.l2am_only { AlignTerms { l2am: true, a2m: false } } else { AlignTerms::ALL };
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
            let l = total_alignment_loss(s, fa, fm, fl, fore, terms, Reduction::Mean, &mut rng)?;
            let weighted = s.scale(l.total, self.cfg.lambda);
            total = s.add(total, weighted)?;
            align = Some(l.total);
        }
        let mut aux = None;
        if let Some((ca, cm)) = &self.aux {
            let fore = fore.as_ref().unwrap();
            let y: Vec<f64> = fore.iter().map(|&m| f64::from(u8::from(m))).collect();
            let l1 = &fwd.trace.levels[0];
            let (Some(fea), Some(fem)) = (l1.f_ea, l1.f_em) else {
                return Err(Error::Config("auxiliary BCE needs both enhanced level-1 maps".into()));
            };
            let la = ca.forward(s, fea)?;
            let lm = cm.forward(s, fem)?;
            let ba = s.bce_with_logits(la, &y, Reduction::Mean)?;
            let bm = s.bce_with_logits(lm, &y, Reduction::Mean)?;
            let both = s.add(ba, bm)?;
            total = s.add(total, both)?;
            aux = Some(both);
        }
        Ok((fwd, LossParts { seg, align, aux, total }))
    }

    /// Ground-truth masks downsampled to level-1 resolution, frames stacked.
    pub fn level1_labels(&self, clip: &ClipSample, level1: (usize, usize)) -> Result<Vec<bool>> {
        let factor = clip.height / level1.0;
        if factor * level1.0 != clip.height || factor * level1.1 != clip.width {
            return Err(Error::Dimension(format!("level-1 size {level1:?} does not divide {}x{}", clip.height, clip.width)));
        }
        let mut out = Vec::with_capacity(clip.frames * level1.0 * level1.1);
        for t in 0..clip.frames {
            out.extend(downsample_mask(clip.mask(t), clip.height, clip.width, factor)?);
        }
        Ok(out)
    }

    /// Full-resolution probabilities `[T, 1, H, W]`.
    pub fn predict_probs(&self, store: &ParamStore, clip: &ClipSample) -> Result<Tensor> {
        let mut s = Session::new(store);
        let fwd = self.forward(&mut s, clip)?;
        Ok(s.value(fwd.probs).clone())
    }

    /// Binary masks `[T, H, W]`, foreground where probability ≥ 0.5.
    pub fn predict(&self, store: &ParamStore, clip: &ClipSample) -> Result<Vec<bool>> {
        Ok(threshold(self.predict_probs(store, clip)?.data()))
    }
}
