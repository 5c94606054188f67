use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::mmvt::{AttnBlock, MlpBlock};
use crate::nn::{coordinate_features, Aspp, Conv, Linear};
use crate::params::{Init, ParamId, ParamStore, Session};

use super::vocab::vocab_size;

pub const STAGE_STRIDES: [usize; 4] = [2, 2, 2, 1];

/// Encoder output for one stream.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    /// Levels 1 to 3, `[T, C_i, H_i, W_i]`.
    pub levels: [Var; 3],
    /// Level 4 after coordinate concat and ASPP, `[T, C, H⁴, W⁴]`.
    pub top: Var,
}

#[derive(Clone, Debug)]
pub struct VisualEncoder {
    pub stem: Conv,
    pub stages: Vec<Conv>,
    pub aspp: Aspp,
    pub c_in: usize,
}

impl VisualEncoder {
    /// `widths` = stem and the four stage widths.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        stem_stride: usize,
        widths: &[usize; 5],
        c: usize,
        dilations: &[usize],
    ) -> Result<Self> {
        if stem_stride == 0 {
            return Err(Error::Config("stem stride must be positive".into()));
        }
        let stem = Conv::new(store, init, &format!("{name}.stem"), c_in, widths[0], 3, stem_stride, 1)?;
        let stages = (0..4)
            .map(|i| Conv::new(store, init, &format!("{name}.s{}", i + 1), widths[i], widths[i + 1], 3, STAGE_STRIDES[i], 1))
            .collect::<Result<Vec<_>>>()?;
        let aspp = Aspp::new(store, init, &format!("{name}.aspp"), widths[4] + 8, c, dilations)?;
        Ok(VisualEncoder { stem, stages, aspp, c_in })
    }

    /// Channels of levels 1 to 3.
    pub fn level_channels(&self) -> [usize; 3] {
        [self.stages[0].c_out, self.stages[1].c_out, self.stages[2].c_out]
    }

    /// Total downsampling of levels 1 to 4.
    pub fn level_strides(&self) -> [usize; 4] {
        let mut acc = self.stem.stride;
        STAGE_STRIDES.map(|s| {
            acc *= s;
            acc
        })
    }

    /// `x`: `[T, c_in, H, W]`; `H` and `W` must be multiples of the level-3 stride.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<FeaturePyramid> {
        let sh = s.shape(x).to_vec();
        let [t, c, h, w] = sh[..] else {
            return Err(Error::Dimension(format!("encoder: expected [T, C, H, W], got {sh:?}")));
        };
        if c != self.c_in {
            return Err(Error::Dimension(format!("encoder: expected {} input channels, got {c}", self.c_in)));
        }
        let total = self.level_strides()[3];
        if h < total || w < total || h % total != 0 || w % total != 0 {
            return Err(Error::Dimension(format!("encoder: {h}x{w} input is too small or not a multiple of {total}")));
        }
        let y = self.stem.forward(s, x)?;
        let mut y = s.relu(y);
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            let z = stage.forward(s, y)?;
            y = s.relu(z);
            outs.push(y);
        }
        let (h4, w4) = (h / total, w / total);
        let pc = coordinate_features(h4, w4).reshape([1, 8, h4, w4])?;
        let pc = s.constant(pc);
        let pc = s.expand(pc, &[t, 8, h4, w4])?;
        let cat = s.concat(&[outs[3], pc], 1)?;
        let top = self.aspp.forward(s, cat)?;
        Ok(FeaturePyramid { levels: [outs[0], outs[1], outs[2]], top })
    }
}

/// Embedding with learned positions, one pre-LN transformer block, and a
/// pointwise 1-D convolution to the model width.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub embed: ParamId,
    pub pos: ParamId,
    pub attn: AttnBlock,
    pub mlp: MlpBlock,
    pub proj: Linear,
    pub l_max: usize,
    pub width: usize,
}

pub struct TextFeatures {
    /// `[L, C]`
    pub z_l: Var,
    /// `[C]`, row 0.
    pub cls: Var,
}

impl TextEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        width: usize,
        heads: usize,
        l_max: usize,
        c: usize,
    ) -> Result<Self> {
        let v = vocab_size();
        let embed = store.add(format!("{name}.embed"), init.uniform([v, width], 1.0))?;
        let pos = store.add(format!("{name}.pos"), init.uniform([l_max, width], 0.1))?;
        Ok(TextEncoder {
            embed,
            pos,
            attn: AttnBlock::new(store, init, &format!("{name}.attn"), width, heads)?,
            mlp: MlpBlock::new(store, init, &format!("{name}.mlp"), width, 2)?,
            proj: Linear::new(store, init, &format!("{name}.proj"), width, c)?,
            l_max,
            width,
        })
    }

    pub fn forward(&self, s: &mut Session, tokens: &[usize]) -> Result<TextFeatures> {
        if tokens.len() != self.l_max {
            return Err(Error::Dimension(format!("text: expected {} token ids, got {}", self.l_max, tokens.len())));
        }
        if let Some(&bad) = tokens.iter().find(|&&id| id >= vocab_size()) {
            return Err(Error::Vocabulary(format!("token id {bad} outside the vocabulary")));
        }
        let table = s.param(self.embed);
        let e = s.embedding(table, tokens)?;
        let pos = s.param(self.pos);
        let x = s.add(e, pos)?;
        let x = self.attn.forward(s, x)?;
        let x = self.mlp.forward(s, x)?;
        let z_l = self.proj.forward(s, x)?;
        let row = s.slice(z_l, 0, 0, 1)?;
        let cls = s.reshape(row, &[self.proj.d_out])?;
        Ok(TextFeatures { z_l, cls })
    }
}

/// Hue from flow direction, saturation from magnitude relative to the
/// largest in the map, full value. Planar `[3, H, W]` bytes.
pub fn flow_color_preview(flow: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    let plane = h * w;
    if flow.len() != 2 * plane {
        return Err(Error::Dimension(format!("flow preview: {} values for 2x{h}x{w}", flow.len())));
    }
    let mag = |i: usize| f64::from(flow[i]).hypot(f64::from(flow[plane + i]));
    let max = (0..plane).map(mag).fold(0.0, f64::max);
    let mut out = vec![0u8; 3 * plane];
    for i in 0..plane {
        let (u, v) = (f64::from(flow[i]), f64::from(flow[plane + i]));
        let sat = if max > 0.0 { mag(i) / max } else { 0.0 };
        let hue = v.atan2(u).to_degrees().rem_euclid(360.0);
        let rgb = hsv_to_rgb(hue, sat, 1.0);
        for c in 0..3 {
            out[c * plane + i] = (rgb[c] * 255.0).round() as u8;
        }
    }
    Ok(out)
}

/// `hue` in degrees, `sat` and `val` in `[0, 1]`.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let c = val * sat;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}
