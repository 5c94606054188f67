use super::Op;
use crate::autodiff::kernels::{broadcast_shape, broadcast_strides, for_each_broadcast};
use crate::autodiff::{GradSink, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Sigmoid,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl UnaryKind {
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Tan => x.tan(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Sqrt => x.sqrt(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Tan => 1.0 + y * y,
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Sqrt => 0.5 / y,
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)
            .ok_or_else(|| Error::dim(format!("{kind:?}: shapes {sa:?} and {sb:?} do not broadcast")))?;
        let f = match kind {
            BinaryKind::Add => |x: f64, y: f64| x + y,
            BinaryKind::Sub => |x: f64, y: f64| x - y,
            BinaryKind::Mul => |x: f64, y: f64| x * y,
            BinaryKind::Div => |x: f64, y: f64| x / y,
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = if sa == sb {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let (ta, tb) = (broadcast_strides(&sa, &out_shape), broadcast_strides(&sb, &out_shape));
            let mut out = Vec::with_capacity(crate::tensor::numel(&out_shape));
            for_each_broadcast(&out_shape, &ta, &tb, |_, ia, ib| out.push(f(av[ia], bv[ib])));
            out
        };
        Ok(self.push_op(Tensor::from_parts(out_shape, out), Op::Binary { kind, a, b }, &[a, b]))
    }

    /// Broadcasts `x` to `shape` (right-aligned numpy rules).
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if broadcast_shape(&sx, shape).as_deref() != Some(shape) {
            return Err(Error::dim(format!("expand: {sx:?} cannot broadcast to {shape:?}")));
        }
        let tx = broadcast_strides(&sx, shape);
        let zeros = vec![0; shape.len()];
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(crate::tensor::numel(shape));
        for_each_broadcast(shape, &tx, &zeros, |_, ix, _| out.push(xv[ix]));
        Ok(self.push_op(Tensor::from_parts(shape.to_vec(), out), Op::Expand { x }, &[x]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        self.push_op(value, Op::Scale { x, factor }, &[x])
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        self.push_op(value, Op::Unary { kind, x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tan(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tan, x)
    }

    /// Clamps into `[lo, hi]`; the gradient is passed only where no clamping happened.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        self.push_op(value, Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_op(Tensor::scalar(m), Op::Mean { x }, &[x])
    }
}

pub(super) fn backward_binary(kind: BinaryKind, a: Var, b: Var, out: &Tensor, g: &[f64], sink: &mut GradSink) {
    let (ta, tb) = (sink.value(a), sink.value(b));
    let same = ta.shape() == tb.shape();
    let (sa, sb) = if same {
        (Vec::new(), Vec::new())
    } else {
        (broadcast_strides(ta.shape(), out.shape()), broadcast_strides(tb.shape(), out.shape()))
    };
    let (av, bv) = (ta.data(), tb.data());
    let visit = |f: &mut dyn FnMut(usize, usize, usize)| {
        if same {
            (0..g.len()).for_each(|i| f(i, i, i));
        } else {
            for_each_broadcast(out.shape(), &sa, &sb, f);
        }
    };
    if let Some(da) = sink.buf(a) {
        match kind {
            BinaryKind::Add | BinaryKind::Sub => visit(&mut |o, ia, _| da[ia] += g[o]),
            BinaryKind::Mul => visit(&mut |o, ia, ib| da[ia] += g[o] * bv[ib]),
            BinaryKind::Div => visit(&mut |o, ia, ib| da[ia] += g[o] / bv[ib]),
        }
    }
    if let Some(db) = sink.buf(b) {
        match kind {
            BinaryKind::Add => visit(&mut |o, _, ib| db[ib] += g[o]),
            BinaryKind::Sub => visit(&mut |o, _, ib| db[ib] -= g[o]),
            BinaryKind::Mul => visit(&mut |o, ia, ib| db[ib] += g[o] * av[ia]),
            BinaryKind::Div => visit(&mut |o, ia, ib| db[ib] -= g[o] * av[ia] / (bv[ib] * bv[ib])),
        }
    }
}

pub(super) fn backward_expand(x: Var, out: &Tensor, g: &[f64], sink: &mut GradSink) {
    let sx = broadcast_strides(sink.value(x).shape(), out.shape());
    let zeros = vec![0; out.shape().len()];
    if let Some(dx) = sink.buf(x) {
        for_each_broadcast(out.shape(), &sx, &zeros, |o, ix, _| dx[ix] += g[o]);
    }
}

pub(super) fn backward_unary(kind: UnaryKind, x: Var, out: &Tensor, g: &[f64], sink: &mut GradSink) {
    let xv = sink.value(x).data();
    if let Some(dx) = sink.buf(x) {
        for (i, d) in dx.iter_mut().enumerate() {
            *d += g[i] * kind.derivative(xv[i], out.data()[i]);
        }
    }
}

pub(super) fn backward_clamp(x: Var, lo: f64, hi: f64, g: &[f64], sink: &mut GradSink) {
    let xv = sink.value(x).data();
    if let Some(dx) = sink.buf(x) {
        for (i, d) in dx.iter_mut().enumerate() {
            if xv[i] >= lo && xv[i] <= hi {
                *d += g[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn relu_clips_negatives() {
        let mut g = Graph::new();
        let x = g.constant(t(&[4], &[-2.0, -0.5, 0.5, 3.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.5, 3.0]);
    }

    #[test]
    fn broadcast_mul_backward_reduces() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.leaf(t(&[3], &[1.0, 10.0, 100.0]));
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 20.0, 300.0, 4.0, 50.0, 600.0]);
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(b).data(), &[5.0, 7.0, 9.0]);
        assert_eq!(grads.wrt(a).data(), &[1.0, 10.0, 100.0, 1.0, 10.0, 100.0]);
    }

    #[test]
    fn mismatched_shapes_are_dimension_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[-2.0, 0.0, 2.0]));
        let y = g.clamp(x, -1.0, 1.0);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 1.0, 0.0]);
    }
}
