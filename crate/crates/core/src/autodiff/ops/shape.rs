use super::Op;
use crate::autodiff::kernels::permute;
use crate::autodiff::{GradSink, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

/// (outer, inner) block sizes around `axis`.
fn blocks(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if numel(shape) != t.len() || shape.contains(&0) {
            return Err(Error::dim(format!("reshape: {:?} cannot become {shape:?}", t.shape())));
        }
        let value = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        Ok(self.push_op(value, Op::Reshape { x }, &[x]))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!("permute: {perm:?} is not a permutation of the axes of {shape:?}")));
        }
        let (out_shape, out) = permute(self.value(x).data(), &shape, perm);
        Ok(self.push_op(Tensor::from_parts(out_shape, out), Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::dim("transpose needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::dim("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim(format!("concat: axis {axis} out of range for {first:?}")));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat on axis {axis}: {first:?} vs {s:?}")));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, inner) = blocks(&out_shape, axis);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let op = Op::Concat { inputs: inputs.to_vec(), axis };
        Ok(self.push_op(Tensor::from_parts(out_shape, out), op, inputs))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(format!("slice [{start}, {start}+{len}) on axis {axis} of {shape:?}")));
        }
        let (outer, inner) = blocks(&shape, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push_op(Tensor::from_parts(out_shape, out), Op::Slice { x, axis, start }, &[x]))
    }
}

pub(super) fn backward_permute(x: Var, perm: &[usize], out: &Tensor, g: &[f64], sink: &mut GradSink) {
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let (_, back) = permute(g, out.shape(), &inverse);
    sink.add(x, &back);
}

pub(super) fn backward_concat(inputs: &[Var], axis: usize, out: &Tensor, g: &[f64], sink: &mut GradSink) {
    let (outer, inner) = blocks(out.shape(), axis);
    let total = out.shape()[axis] * inner;
    let mut offset = 0;
    for &v in inputs {
        let chunk = sink.value(v).shape()[axis] * inner;
        if let Some(dv) = sink.buf(v) {
            for o in 0..outer {
                let src = &g[o * total + offset..o * total + offset + chunk];
                for (d, s) in dv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        offset += chunk;
    }
}

pub(super) fn backward_slice(x: Var, axis: usize, start: usize, out: &Tensor, g: &[f64], sink: &mut GradSink) {
    let full = sink.value(x).shape()[axis];
    let (outer, inner) = blocks(out.shape(), axis);
    let len = out.shape()[axis];
    if let Some(dx) = sink.buf(x) {
        for o in 0..outer {
            let base = (o * full + start) * inner;
            for (d, s) in dx[base..base + len * inner].iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                *d += s;
            }
        }
    }
}
