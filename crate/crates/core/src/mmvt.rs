//! Multi-modal video transformer: per-frame cross-modal attention over
//! appearance, motion and language tokens, then temporal attention over the
//! appearance tokens of all frames, then a token-wise MLP.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Mlp, Msa};
use crate::params::{Init, ParamStore, Session};

/// Row layout of an assembled `[T, S, C]` token tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub t: usize,
    pub hw: usize,
    pub motion: bool,
    pub l: usize,
    pub c: usize,
}

impl TokenLayout {
    /// Tokens per frame: `2·HW + L` with motion, `HW + L` without.
    pub fn tokens(&self) -> usize {
        self.hw * if self.motion { 2 } else { 1 } + self.l
    }

    fn language_start(&self) -> usize {
        self.tokens() - self.l
    }
}

/// Per-clip token features. `z_a`, `z_m` are `[T, HW, C]`, `z_l` is `[L, C]`.
#[derive(Clone, Copy, Debug)]
pub struct ModalTokenBundle {
    pub z_a: Var,
    pub z_m: Option<Var>,
    pub z_l: Var,
}

/// Outputs after the last layer, chunked back per modality.
#[derive(Clone, Copy, Debug)]
pub struct MmvtOutput {
    pub z_a: Var,
    pub z_m: Option<Var>,
    /// `[T, L, C]`; rows may differ per frame after cross-modal attention.
    pub z_l: Var,
}

pub fn layout_of(s: &Session, b: &ModalTokenBundle) -> Result<TokenLayout> {
    let sa = s.shape(b.z_a).to_vec();
    let sl = s.shape(b.z_l).to_vec();
    let [t, hw, c] = sa[..] else {
        return Err(Error::Dimension(format!("appearance tokens must be [T, HW, C], got {sa:?}")));
    };
    if sl.len() != 2 || sl[1] != c {
        return Err(Error::Dimension(format!("language tokens {sl:?} do not match appearance {sa:?}")));
    }
    if let Some(m) = b.z_m {
        if s.shape(m) != sa.as_slice() {
            return Err(Error::Dimension(format!(
                "motion tokens {:?} do not match appearance {sa:?}",
                s.shape(m)
            )));
        }
    }
    Ok(TokenLayout { t, hw, motion: b.z_m.is_some(), l: sl[0], c })
}

/// `Cat(z_A, z_M, z_L)` per frame with `z_L` broadcast over time: `[T, S, C]`.
pub fn assemble_tokens(s: &mut Session, b: &ModalTokenBundle) -> Result<(Var, TokenLayout)> {
    let lay = layout_of(s, b)?;
    let zl = s.reshape(b.z_l, &[1, lay.l, lay.c])?;
    let zl = s.expand(zl, &[lay.t, lay.l, lay.c])?;
    let mut parts = vec![b.z_a];
    parts.extend(b.z_m);
    parts.push(zl);
    Ok((s.concat(&parts, 1)?, lay))
}

/// Inverse of [`assemble_tokens`]; language comes back as `[T, L, C]`.
pub fn chunk_tokens(s: &mut Session, z: Var, lay: &TokenLayout) -> Result<MmvtOutput> {
    check_tokens(s, z, lay)?;
    let z_a = s.slice(z, 1, 0, lay.hw)?;
    let z_m = if lay.motion { Some(s.slice(z, 1, lay.hw, lay.hw)?) } else { None };
    let z_l = s.slice(z, 1, lay.language_start(), lay.l)?;
    Ok(MmvtOutput { z_a, z_m, z_l })
}

fn check_tokens(s: &Session, z: Var, lay: &TokenLayout) -> Result<()> {
    let expect = [lay.t, lay.tokens(), lay.c];
    if s.shape(z) != expect {
        return Err(Error::Dimension(format!(
            "token tensor {:?} inconsistent with layout {expect:?}",
            s.shape(z)
        )));
    }
    Ok(())
}

/// Pre-LN attention block with residual: `MSA(LN(z)) + z`.
#[derive(Clone, Debug)]
pub struct AttnBlock {
    pub ln: LayerNorm,
    pub msa: Msa,
}

impl AttnBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize) -> Result<Self> {
        Ok(AttnBlock {
            ln: LayerNorm::new(store, &format!("{name}.ln"), c)?,
            msa: Msa::new(store, init, &format!("{name}.msa"), c, heads)?,
        })
    }

    pub fn forward(&self, s: &mut Session, z: Var) -> Result<Var> {
        let h = self.ln.forward(s, z)?;
        let h = self.msa.forward(s, h)?;
        s.add(h, z)
    }
}

#[derive(Clone, Debug)]
pub struct MlpBlock {
    pub ln: LayerNorm,
    pub mlp: Mlp,
}

impl MlpBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, ratio: usize) -> Result<Self> {
        Ok(MlpBlock {
            ln: LayerNorm::new(store, &format!("{name}.ln"), c)?,
            mlp: Mlp::new(store, init, &format!("{name}.mlp"), c, ratio)?,
        })
    }

    pub fn forward(&self, s: &mut Session, z: Var) -> Result<Var> {
        let h = self.ln.forward(s, z)?;
        let h = self.mlp.forward(s, h)?;
        s.add(h, z)
    }
}

/// Cross-modal attention: each frame's `S` tokens attend to each other.
pub fn cross_modal_attention(s: &mut Session, z: Var, block: &AttnBlock) -> Result<Var> {
    block.forward(s, z)
}

/// Temporal attention over the appearance tokens of all frames as one
/// `[T·HW, C]` sequence; motion and language rows are passed through.
pub fn temporal_attention(s: &mut Session, z: Var, lay: &TokenLayout, block: &AttnBlock) -> Result<Var> {
    check_tokens(s, z, lay)?;
    let za = s.slice(z, 1, 0, lay.hw)?;
    let rest = s.slice(z, 1, lay.hw, lay.tokens() - lay.hw)?;
    let flat = s.reshape(za, &[lay.t * lay.hw, lay.c])?;
    let out = block.forward(s, flat)?;
    let out = s.reshape(out, &[lay.t, lay.hw, lay.c])?;
    s.concat(&[out, rest], 1)
}

/// Which sub-blocks a layer contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MmvtVariant {
    pub cma: bool,
    pub ta: bool,
}

impl Default for MmvtVariant {
    fn default() -> Self {
        MmvtVariant { cma: true, ta: true }
    }
}

#[derive(Clone, Debug)]
pub struct MmvtLayer {
    pub cma: Option<AttnBlock>,
    pub ta: Option<AttnBlock>,
    pub mlp: MlpBlock,
}

impl MmvtLayer {
    pub fn forward(&self, s: &mut Session, z: Var, lay: &TokenLayout) -> Result<Var> {
        let mut z = z;
        if let Some(cma) = &self.cma {
            z = cross_modal_attention(s, z, cma)?;
        }
        if let Some(ta) = &self.ta {
            z = temporal_attention(s, z, lay, ta)?;
        }
        self.mlp.forward(s, z)
    }
}

#[derive(Clone, Debug)]
pub struct Mmvt {
    pub layers: Vec<MmvtLayer>,
}

impl Mmvt {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c: usize,
        heads: usize,
        mlp_ratio: usize,
        n_layers: usize,
        variant: MmvtVariant,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let p = format!("{name}.{i}");
            let cma = if variant.cma { Some(AttnBlock::new(store, init, &format!("{p}.cma"), c, heads)?) } else { None };
            let ta = if variant.ta { Some(AttnBlock::new(store, init, &format!("{p}.ta"), c, heads)?) } else { None };
            let mlp = MlpBlock::new(store, init, &format!("{p}.mlp"), c, mlp_ratio)?;
            layers.push(MmvtLayer { cma, ta, mlp });
        }
        Ok(Mmvt { layers })
    }

    pub fn forward(&self, s: &mut Session, b: &ModalTokenBundle) -> Result<MmvtOutput> {
        let (mut z, lay) = assemble_tokens(s, b)?;
        for layer in &self.layers {
            z = layer.forward(s, z, &lay)?;
        }
        chunk_tokens(s, z, &lay)
    }
}

/// `[T, HW, C]` tokens to `[T, C, H, W]` maps.
pub fn tokens_to_maps(s: &mut Session, z: Var, h: usize, w: usize) -> Result<Var> {
    let sh = s.shape(z).to_vec();
    if sh.len() != 3 || sh[1] != h * w {
        return Err(Error::Dimension(format!("cannot view tokens {sh:?} as {h}x{w} maps")));
    }
    let p = s.permute(z, &[0, 2, 1])?;
    s.reshape(p, &[sh[0], sh[2], h, w])
}

/// `[T, C, H, W]` maps to `[T, HW, C]` tokens.
pub fn maps_to_tokens(s: &mut Session, x: Var) -> Result<Var> {
    let sh = s.shape(x).to_vec();
    let [t, c, h, w] = sh[..] else {
        return Err(Error::Dimension(format!("expected [T, C, H, W] maps, got {sh:?}")));
    };
    let r = s.reshape(x, &[t, c, h * w])?;
    s.permute(r, &[0, 2, 1])
}
