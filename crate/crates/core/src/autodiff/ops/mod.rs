mod elementwise;
mod linalg;
mod loss;
mod nn;
mod shape;

pub use elementwise::{sigmoid, UnaryKind};
pub use loss::Reduction;

use super::kernels::ConvGeom;
use super::{GradSink, Var};
use crate::tensor::Tensor;

/// Recorded operation of one node, with whatever the backward rule needs.
pub(crate) enum Op {
    Leaf,
    MatMul { a: Var, b: Var, batch: usize, trans_b: bool },
    Binary { kind: elementwise::BinaryKind, a: Var, b: Var },
    Expand { x: Var },
    Scale { x: Var, factor: f64 },
    Unary { kind: UnaryKind, x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum { x: Var },
    Mean { x: Var },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Upsample { x: Var, factor: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Cosine { a: Var, b: Var, norms_a: Vec<f64>, norms_b: Vec<f64> },
    BceLogits { logits: Var, targets: Vec<f64>, reduction: Reduction },
    BceProbs { probs: Var, targets: Vec<f64>, reduction: Reduction },
}

pub(super) fn backward(op: &Op, out: &Tensor, g: &[f64], sink: &mut GradSink) {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b, batch, trans_b } => linalg::backward_matmul(*a, *b, *batch, *trans_b, g, sink),
        Op::Binary { kind, a, b } => elementwise::backward_binary(*kind, *a, *b, out, g, sink),
        Op::Expand { x } => elementwise::backward_expand(*x, out, g, sink),
        Op::Scale { x, factor } => {
            let scaled: Vec<f64> = g.iter().map(|v| v * factor).collect();
            sink.add(*x, &scaled);
        }
        Op::Unary { kind, x } => elementwise::backward_unary(*kind, *x, out, g, sink),
        Op::Clamp { x, lo, hi } => elementwise::backward_clamp(*x, *lo, *hi, g, sink),
        Op::Sum { x } => {
            let n = sink.value(*x).len();
            sink.add(*x, &vec![g[0]; n]);
        }
        Op::Mean { x } => {
            let n = sink.value(*x).len();
            sink.add(*x, &vec![g[0] / n as f64; n]);
        }
        Op::Reshape { x } => sink.add(*x, g),
        Op::Permute { x, perm } => shape::backward_permute(*x, perm, out, g, sink),
        Op::Concat { inputs, axis } => shape::backward_concat(inputs, *axis, out, g, sink),
        Op::Slice { x, axis, start } => shape::backward_slice(*x, *axis, *start, out, g, sink),
        Op::Softmax { x } => nn::backward_softmax(*x, out, g, sink),
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => nn::backward_layer_norm(*x, *gamma, *beta, xhat, rstd, g, sink),
        Op::Conv2d { x, w, b, geom } => nn::backward_conv2d(*x, *w, *b, geom, g, sink),
        Op::Upsample { x, factor } => nn::backward_upsample(*x, *factor, g, sink),
        Op::Embedding { table, ids } => nn::backward_embedding(*table, ids, g, sink),
        Op::Cosine { a, b, norms_a, norms_b } => loss::backward_cosine(*a, *b, norms_a, norms_b, out, g, sink),
        Op::BceLogits { logits, targets, reduction } => loss::backward_bce_logits(*logits, targets, *reduction, g, sink),
        Op::BceProbs { probs, targets, reduction } => loss::backward_bce_probs(*probs, targets, *reduction, g, sink),
    }
}
