//! Parameterised building blocks: linear, layer norm, multi-head
//! self-attention, MLP, convolution, coordinate features and a small ASPP.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Affine map over the last axis: `x · W + b`, `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let w = store.add(format!("{name}.w"), init.xavier([d_in, d_out], d_in, d_out))?;
        let b = Some(store.add(format!("{name}.b"), Tensor::zeros([d_out]))?);
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn without_bias(store: &mut ParamStore, init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let w = store.add(format!("{name}.w"), init.xavier([d_in, d_out], d_in, d_out))?;
        Ok(Linear { w, b: None, d_in, d_out })
    }

    /// `[..., d_in] -> [..., d_out]`.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.shape(x).to_vec();
        if shape.last() != Some(&self.d_in) {
            return Err(Error::Dimension(format!(
                "linear: expected last axis {}, got shape {shape:?}",
                self.d_in
            )));
        }
        let rows = shape.iter().product::<usize>() / self.d_in;
        let flat = s.reshape(x, &[rows, self.d_in])?;
        let w = s.param(self.w);
        let mut y = s.matmul(flat, w)?;
        if let Some(b) = self.b {
            let b = s.param(b);
            y = s.add(y, b)?;
        }
        let mut out = shape;
        *out.last_mut().unwrap() = self.d_out;
        s.reshape(y, &out)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full([c], 1.0))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([c]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let g = s.param(self.gamma);
        let b = s.param(self.beta);
        s.layer_norm(x, g, b, LN_EPS)
    }
}

/// Multi-head self-attention without positional encoding.
///
/// The key projection has no bias: it would add the same `q·b` to every logit
/// of a query row, which softmax cancels exactly.
#[derive(Clone, Debug)]
pub struct Msa {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub c: usize,
}

impl Msa {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, heads: usize) -> Result<Self> {
        if heads == 0 || c % heads != 0 {
            return Err(Error::Config(format!("msa: channels {c} not divisible by {heads} heads")));
        }
        Ok(Msa {
            q: Linear::new(store, init, &format!("{name}.q"), c, c)?,
            k: Linear::without_bias(store, init, &format!("{name}.k"), c, c)?,
            v: Linear::new(store, init, &format!("{name}.v"), c, c)?,
            o: Linear::new(store, init, &format!("{name}.o"), c, c)?,
            heads,
            c,
        })
    }

    /// `[N, C]` or batched `[B, N, C]`; attention runs within each batch entry.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(s, x)?.0)
    }

    /// Output plus the attention weights `[B·heads, N, N]`.
    pub fn forward_with_weights(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let shape = s.shape(x).to_vec();
        let (b, n) = match shape.as_slice() {
            [n, c] if *c == self.c => (1, *n),
            [b, n, c] if *c == self.c => (*b, *n),
            _ => return Err(Error::Dimension(format!("msa: expected [.., N, {}], got {shape:?}", self.c))),
        };
        let (h, d) = (self.heads, self.c / self.heads);
        let x3 = s.reshape(x, &[b, n, self.c])?;
        let split = |s: &mut Session, lin: &Linear| -> Result<Var> {
            let y = lin.forward(s, x3)?;
            let y = s.reshape(y, &[b, n, h, d])?;
            let y = s.permute(y, &[0, 2, 1, 3])?;
            s.reshape(y, &[b * h, n, d])
        };
        let q = split(s, &self.q)?;
        let k = split(s, &self.k)?;
        let v = split(s, &self.v)?;
        let scores = s.bmm_nt(q, k)?;
        let scores = s.scale(scores, 1.0 / (d as f64).sqrt());
        let attn = s.softmax(scores);
        let ctx = s.bmm(attn, v)?;
        let ctx = s.reshape(ctx, &[b, h, n, d])?;
        let ctx = s.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = s.reshape(ctx, &[b, n, self.c])?;
        let out = self.o.forward(s, ctx)?;
        Ok((s.reshape(out, &shape)?, attn))
    }
}

/// Two-layer perceptron with ReLU: `C -> r·C -> C`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, c: usize, ratio: usize) -> Result<Self> {
        Self::with_dims(store, init, name, c, ratio * c, c)
    }

    pub fn with_dims(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("mlp: hidden width must be positive".into()));
        }
        Ok(Mlp {
            fc1: Linear::new(store, init, &format!("{name}.fc1"), d_in, hidden)?,
            fc2: Linear::new(store, init, &format!("{name}.fc2"), hidden, d_out)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.fc1.forward(s, x)?;
        let h = s.relu(h);
        self.fc2.forward(s, h)
    }
}

/// 2-D convolution layer with "same"-style padding `dilation·(k−1)/2`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv {name}: kernel size {k} must be odd")));
        }
        let w = store.add(format!("{name}.w"), init.xavier([c_out, c_in, k, k], c_in * k * k, c_out * k * k))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros([c_out]))?;
        Ok(Conv { w, b, c_in, c_out, k, stride, dilation })
    }

    pub fn pointwise(store: &mut ParamStore, init: &mut Init, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Self::new(store, init, name, c_in, c_out, 1, 1, 1)
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.k - 1) / 2
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.w);
        let b = s.param(self.b);
        s.conv2d(x, w, Some(b), self.stride, self.dilation, self.padding())
    }
}

/// 8-channel coordinate map `[8, H, W]`: centre, cell edges and inverse size.
pub fn coordinate_features(h: usize, w: usize) -> Tensor {
    let centre = |i: usize, n: usize| if n == 1 { 0.0 } else { 2.0 * i as f64 / (n - 1) as f64 - 1.0 };
    let mut out = Tensor::zeros([8, h, w]);
    let plane = h * w;
    let data = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            let values = [
                centre(j, w),
                centre(i, h),
                2.0 * j as f64 / w as f64 - 1.0,
                2.0 * (j + 1) as f64 / w as f64 - 1.0,
                2.0 * i as f64 / h as f64 - 1.0,
                2.0 * (i + 1) as f64 / h as f64 - 1.0,
                1.0 / w as f64,
                1.0 / h as f64,
            ];
            for (ch, v) in values.into_iter().enumerate() {
                data[ch * plane + i * w + j] = v;
            }
        }
    }
    out
}

/// Parallel 1×1 and dilated 3×3 branches, concatenated and fused by a 1×1 conv.
#[derive(Clone, Debug)]
pub struct Aspp {
    pub branches: Vec<Conv>,
    pub fuse: Conv,
    pub c: usize,
}

impl Aspp {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        c_in: usize,
        c: usize,
        dilations: &[usize],
    ) -> Result<Self> {
        let mut branches = vec![Conv::pointwise(store, init, &format!("{name}.b0"), c_in, c)?];
        for (i, &d) in dilations.iter().enumerate() {
            if d == 0 {
                return Err(Error::Config("aspp: dilation must be positive".into()));
            }
            branches.push(Conv::new(store, init, &format!("{name}.b{}", i + 1), c_in, c, 3, 1, d)?);
        }
        let fuse = Conv::pointwise(store, init, &format!("{name}.fuse"), c * branches.len(), c)?;
        Ok(Aspp { branches, fuse, c })
    }

    /// `[C_in, H, W]` or `[B, C_in, H, W]` to the same spatial size with `C` channels.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.shape(x).to_vec();
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        for br in &self.branches[1..] {
            if br.dilation >= h.max(w) {
                return Err(Error::Dimension(format!(
                    "aspp: dilation {} too large for {h}x{w} input",
                    br.dilation
                )));
            }
        }
        let outs = self.branches.iter().map(|br| br.forward(s, x)).collect::<Result<Vec<_>>>()?;
        let cat = s.concat(&outs, shape.len() - 3)?;
        self.fuse.forward(s, cat)
    }
}
