use super::Op;
use crate::autodiff::{GradSink, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How per-element loss terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    fn apply(self, total: f64, n: usize) -> f64 {
        match self {
            Reduction::Mean => total / n as f64,
            Reduction::Sum => total,
        }
    }

    fn weight(self, n: usize) -> f64 {
        match self {
            Reduction::Mean => 1.0 / n as f64,
            Reduction::Sum => 1.0,
        }
    }
}

/// Probabilities are kept this far from 0 and 1 inside the log.
const PROB_EPS: f64 = 1e-12;

fn check_targets(n: usize, targets: &[f64]) -> Result<()> {
    if targets.len() != n {
        return Err(Error::dim(format!("{} targets for {n} predictions", targets.len())));
    }
    Ok(())
}

impl Graph {
    /// Row-wise cosine similarity of `a` (`[P, c]`) with `b` (`[P, c]`, or `[c]`
    /// shared by every row). A zero-norm operand yields similarity 0 and is
    /// counted in [`Graph::zero_norm_events`].
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let [p, c] = sa[..] else {
            return Err(Error::dim(format!("cosine_rows: lhs must be [P,c], got {sa:?}")));
        };
        let shared = sb == [c];
        if !shared && sb != sa {
            return Err(Error::dim(format!("cosine_rows: rhs {sb:?} does not match lhs {sa:?}")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let brow = |i: usize| if shared { &bv[..] } else { &bv[i * c..(i + 1) * c] };
        let norms_a: Vec<f64> = av.chunks(c).map(norm).collect();
        let norms_b: Vec<f64> = if shared { vec![norm(bv)] } else { bv.chunks(c).map(norm).collect() };
        let mut out = vec![0.0; p];
        let mut degenerate = 0;
        for i in 0..p {
            let nb = norms_b[if shared { 0 } else { i }];
            if norms_a[i] == 0.0 || nb == 0.0 {
                degenerate += 1;
                continue;
            }
            let dot: f64 = av[i * c..(i + 1) * c].iter().zip(brow(i)).map(|(x, y)| x * y).sum();
            out[i] = (dot / (norms_a[i] * nb)).clamp(-1.0, 1.0);
        }
        self.zero_norm_events += degenerate;
        let op = Op::Cosine { a, b, norms_a, norms_b };
        Ok(self.push_op(Tensor::from_parts(vec![p], out), op, &[a, b]))
    }

    /// Binary cross-entropy of `sigmoid(logits)` against `targets`, computed
    /// stably as `softplus(x) - y·x`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], reduction: Reduction) -> Result<Var> {
        let xv = self.value(logits).data();
        check_targets(xv.len(), targets)?;
        let total: f64 = xv
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - y * x + (-x.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(reduction.apply(total, xv.len()));
        let op = Op::BceLogits { logits, targets: targets.to_vec(), reduction };
        Ok(self.push_op(value, op, &[logits]))
    }

    /// Binary cross-entropy of probabilities against `targets`.
    pub fn bce_probs(&mut self, probs: Var, targets: &[f64], reduction: Reduction) -> Result<Var> {
        let pv = self.value(probs).data();
        check_targets(pv.len(), targets)?;
        let total: f64 = pv
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let value = Tensor::scalar(reduction.apply(total, pv.len()));
        let op = Op::BceProbs { probs, targets: targets.to_vec(), reduction };
        Ok(self.push_op(value, op, &[probs]))
    }
}

pub(super) fn backward_cosine(a: Var, b: Var, norms_a: &[f64], norms_b: &[f64], out: &Tensor, g: &[f64], sink: &mut GradSink) {
    let c = sink.value(a).shape()[1];
    let shared = sink.value(b).shape().len() == 1;
    let (av, bv) = (sink.value(a).data(), sink.value(b).data());
    let p = norms_a.len();
    let bi = |i: usize| if shared { 0 } else { i };
    let valid = |i: usize| norms_a[i] > 0.0 && norms_b[bi(i)] > 0.0;
    if let Some(da) = sink.buf(a) {
        for i in (0..p).filter(|&i| valid(i)) {
            let (na, nb, s) = (norms_a[i], norms_b[bi(i)], out.data()[i]);
            for j in 0..c {
                let (x, y) = (av[i * c + j], bv[bi(i) * c + j]);
                da[i * c + j] += g[i] * (y / (na * nb) - s * x / (na * na));
            }
        }
    }
    if let Some(db) = sink.buf(b) {
        for i in (0..p).filter(|&i| valid(i)) {
            let (na, nb, s) = (norms_a[i], norms_b[bi(i)], out.data()[i]);
            for j in 0..c {
                let (x, y) = (av[i * c + j], bv[bi(i) * c + j]);
                db[bi(i) * c + j] += g[i] * (x / (na * nb) - s * y / (nb * nb));
            }
        }
    }
}

pub(super) fn backward_bce_logits(logits: Var, targets: &[f64], reduction: Reduction, g: &[f64], sink: &mut GradSink) {
    let xv = sink.value(logits).data();
    let w = g[0] * reduction.weight(xv.len());
    if let Some(dx) = sink.buf(logits) {
        for ((d, &x), &y) in dx.iter_mut().zip(xv).zip(targets) {
            *d += w * (super::elementwise::sigmoid(x) - y);
        }
    }
}

pub(super) fn backward_bce_probs(probs: Var, targets: &[f64], reduction: Reduction, g: &[f64], sink: &mut GradSink) {
    let pv = sink.value(probs).data();
    let w = g[0] * reduction.weight(pv.len());
    if let Some(dp) = sink.buf(probs) {
        for ((d, &p), &y) in dp.iter_mut().zip(pv).zip(targets) {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            *d += w * (p - y) / (p * (1.0 - p));
        }
    }
}
