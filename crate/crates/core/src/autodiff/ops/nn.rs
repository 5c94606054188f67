use super::Op;
use crate::autodiff::kernels::{gemm, upsample_taps, ConvGeom};
use crate::autodiff::{GradSink, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Graph {
    /// Softmax over the last axis, stabilised by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = *t.shape().last().expect("softmax of a rank-0 tensor");
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        self.push_op(value, Op::Softmax { x }, &[x])
    }

    /// Layer normalisation over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let c = *t.shape().last().ok_or_else(|| Error::dim("layer_norm of a rank-0 tensor"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "layer_norm: affine shapes {:?}/{:?} do not match channel count {c}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = t.len() / c;
        let mut xhat = vec![0.0; t.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; t.len()];
        for (r, row) in t.data().chunks(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[r * c + j] = xh;
                out[r * c + j] = xh * gv[j] + bv[j];
            }
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.push_op(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Cross-correlation of `x` (`[C_in,H,W]` or `[B,C_in,H,W]`) with `w`
    /// (`[C_out,C_in,kh,kw]`), zero padding on both axes.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, dilation: usize, padding: usize) -> Result<Var> {
        self.conv2d_padded(x, w, b, stride, dilation, (padding, padding))
    }

    /// [`Graph::conv2d`] with separate vertical and horizontal padding.
    pub fn conv2d_padded(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
        (pad_h, pad_w): (usize, usize),
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (batch, c_in, h, wd) = match sx[..] {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::dim(format!("conv2d: input must be [C,H,W] or [B,C,H,W], got {sx:?}"))),
        };
        let [c_out, wc_in, kh, kw] = sw[..] else {
            return Err(Error::dim(format!("conv2d: weights must be [C_out,C_in,kh,kw], got {sw:?}")));
        };
        if wc_in != c_in {
            return Err(Error::dim(format!("conv2d: input {sx:?} has {c_in} channels but weights {sw:?} expect {wc_in}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::dim(format!("conv2d: bias {:?} for {c_out} outputs", self.shape(b))));
            }
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Config("conv2d: stride and dilation must be positive".into()));
        }
        let out_h = ConvGeom::out_extent(h, kh, stride, dilation, pad_h);
        let out_w = ConvGeom::out_extent(wd, kw, stride, dilation, pad_w);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::dim(format!(
                "conv2d: non-positive output extent for input {sx:?}, kernel {kh}x{kw}, stride {stride}, dilation {dilation}, padding ({pad_h},{pad_w})"
            )));
        };
        let geom = ConvGeom { c_in, h, w: wd, kh, kw, stride, dilation, pad_h, pad_w, out_h, out_w };
        let (k, p) = (geom.cols_rows(), geom.out_len());
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; batch * c_out * p];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        for n in 0..batch {
            let xn = &xv[n * c_in * h * wd..(n + 1) * c_in * h * wd];
            let on = &mut out[n * c_out * p..(n + 1) * c_out * p];
            if geom.is_pointwise() {
                gemm(c_out, k, p, wv, false, xn, false, on, false);
            } else {
                geom.im2col(xn, &mut cols);
                gemm(c_out, k, p, wv, false, &cols, false, on, false);
            }
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (co, row) in on.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[co]);
                }
            }
        }
        let shape = if sx.len() == 3 { vec![c_out, out_h, out_w] } else { vec![batch, c_out, out_h, out_w] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_op(Tensor::from_parts(shape, out), Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Bilinear upsampling of `[C,H,W]` or `[B,C,H,W]` by an integer factor
    /// (half-pixel sample centres, edges clamped).
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Config("upsample factor must be at least 1".into()));
        }
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(Error::dim(format!("upsample needs spatial axes, got {sx:?}")));
        }
        let r = sx.len();
        let (h, w) = (sx[r - 2], sx[r - 1]);
        let planes = sx[..r - 2].iter().product::<usize>();
        let (ty, tx) = (upsample_taps(h, factor), upsample_taps(w, factor));
        let (oh, ow) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = vec![0.0; planes * oh * ow];
        for pl in 0..planes {
            let src = &xv[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
            for (oy, a) in ty.iter().enumerate() {
                for (ox, b) in tx.iter().enumerate() {
                    let top = src[a.lo * w + b.lo] * (1.0 - b.frac) + src[a.lo * w + b.hi] * b.frac;
                    let bot = src[a.hi * w + b.lo] * (1.0 - b.frac) + src[a.hi * w + b.hi] * b.frac;
                    dst[oy * ow + ox] = top * (1.0 - a.frac) + bot * a.frac;
                }
            }
        }
        let mut shape = sx;
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Ok(self.push_op(Tensor::from_parts(shape, out), Op::Upsample { x, factor }, &[x]))
    }

    /// Row lookup: `table[V, E]`, `ids` → `[len(ids), E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        let [v, e] = st[..] else {
            return Err(Error::dim(format!("embedding table must be [V,E], got {st:?}")));
        };
        if ids.is_empty() {
            return Err(Error::dim("embedding lookup of an empty id list"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::dim(format!("embedding id {bad} out of range for {v} rows")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            out.extend_from_slice(&tv[i * e..(i + 1) * e]);
        }
        let value = Tensor::from_parts(vec![ids.len(), e], out);
        Ok(self.push_op(value, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }
}

pub(super) fn backward_softmax(x: Var, out: &Tensor, g: &[f64], sink: &mut GradSink) {
    let n = *out.shape().last().expect("rank");
    if let Some(dx) = sink.buf(x) {
        for ((y, gy), d) in out.data().chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
            let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
            for j in 0..n {
                d[j] += y[j] * (gy[j] - dot);
            }
        }
    }
}

pub(super) fn backward_layer_norm(x: Var, gamma: Var, beta: Var, xhat: &[f64], rstd: &[f64], g: &[f64], sink: &mut GradSink) {
    let c = sink.value(gamma).len();
    let gv = sink.value(gamma).data();
    if let Some(dg) = sink.buf(gamma) {
        for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
            for j in 0..c {
                dg[j] += gr[j] * xr[j];
            }
        }
    }
    if let Some(db) = sink.buf(beta) {
        for gr in g.chunks(c) {
            for j in 0..c {
                db[j] += gr[j];
            }
        }
    }
    if let Some(dx) = sink.buf(x) {
        let mut dxhat = vec![0.0; c];
        for (r, (gr, xr)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
            for j in 0..c {
                dxhat[j] = gr[j] * gv[j];
            }
            let mean_d = dxhat.iter().sum::<f64>() / c as f64;
            let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
            for j in 0..c {
                dx[r * c + j] += rstd[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
            }
        }
    }
}

pub(super) fn backward_conv2d(x: Var, w: Var, b: Option<Var>, geom: &ConvGeom, g: &[f64], sink: &mut GradSink) {
    let (k, p) = (geom.cols_rows(), geom.out_len());
    let c_out = sink.value(w).shape()[0];
    let in_len = geom.c_in * geom.h * geom.w;
    let batch = g.len() / (c_out * p);
    if let Some(b) = b {
        if let Some(db) = sink.buf(b) {
            for gn in g.chunks(c_out * p) {
                for (co, row) in gn.chunks(p).enumerate() {
                    db[co] += row.iter().sum::<f64>();
                }
            }
        }
    }
    let xv = sink.value(x).data();
    let wv = sink.value(w).data();
    if sink.wants(w) {
        let dw = sink.buf(w).expect("wants w");
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        for n in 0..batch {
            let xn = &xv[n * in_len..(n + 1) * in_len];
            let gn = &g[n * c_out * p..(n + 1) * c_out * p];
            let cols_n: &[f64] = if geom.is_pointwise() {
                xn
            } else {
                geom.im2col(xn, &mut cols);
                &cols
            };
            // dW[c_out, k] += dY[c_out, p] · colsᵀ
            gemm(c_out, p, k, gn, false, cols_n, true, dw, true);
        }
    }
    if let Some(dx) = sink.buf(x) {
        let mut dcols = vec![0.0; k * p];
        for n in 0..batch {
            let gn = &g[n * c_out * p..(n + 1) * c_out * p];
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if geom.is_pointwise() {
                gemm(k, c_out, p, wv, true, gn, false, dxn, true);
            } else {
                gemm(k, c_out, p, wv, true, gn, false, &mut dcols, false);
                geom.col2im(&dcols, dxn);
            }
        }
    }
}

pub(super) fn backward_upsample(x: Var, factor: usize, g: &[f64], sink: &mut GradSink) {
    let sx = sink.value(x).shape();
    let r = sx.len();
    let (h, w) = (sx[r - 2], sx[r - 1]);
    let (ty, tx) = (upsample_taps(h, factor), upsample_taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    if let Some(dx) = sink.buf(x) {
        for (pl, gp) in g.chunks(oh * ow).enumerate() {
            let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
            for (oy, a) in ty.iter().enumerate() {
                for (ox, b) in tx.iter().enumerate() {
                    let v = gp[oy * ow + ox];
                    dst[a.lo * w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                    dst[a.lo * w + b.hi] += v * (1.0 - a.frac) * b.frac;
                    dst[a.hi * w + b.lo] += v * a.frac * (1.0 - b.frac);
                    dst[a.hi * w + b.hi] += v * a.frac * b.frac;
                }
            }
        }
    }
}

pub(super) fn backward_embedding(table: Var, ids: &[usize], g: &[f64], sink: &mut GradSink) {
    let e = sink.value(table).shape()[1];
    if let Some(dt) = sink.buf(table) {
        for (r, &i) in ids.iter().enumerate() {
            for j in 0..e {
                dt[i * e + j] += g[r * e + j];
            }
        }
    }
}
