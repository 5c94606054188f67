use super::Op;
use crate::autodiff::kernels::gemm;
use crate::autodiff::{GradSink, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Graph {
    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
        }
        self.matmul_impl(a, b, 1, sa[0], sa[1], sb[1], false)
    }

    /// Batched product `[B, m, k] · [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim(format!("bmm: cannot multiply {sa:?} by {sb:?}")));
        }
        self.matmul_impl(a, b, sa[0], sa[1], sa[2], sb[2], false)
    }

    /// Batched product with transposed right operand `[B, m, k] · [B, n, k]ᵀ -> [B, m, n]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::dim(format!("bmm_nt: cannot multiply {sa:?} by transpose of {sb:?}")));
        }
        self.matmul_impl(a, b, sa[0], sa[1], sa[2], sb[1], true)
    }

    #[allow(clippy::too_many_arguments)]
    fn matmul_impl(&mut self, a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool) -> Result<Var> {
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let shape = if self.shape(a).len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        Ok(self.push_op(Tensor::from_parts(shape, out), Op::MatMul { a, b, batch, trans_b }, &[a, b]))
    }
}

pub(super) fn backward_matmul(a: Var, b: Var, batch: usize, trans_b: bool, g: &[f64], sink: &mut GradSink) {
    let sa = sink.value(a).shape().to_vec();
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let n = g.len() / (batch * m);
    if sink.wants(a) {
        let bv = sink.value(b).data();
        let da = sink.buf(a).expect("wants a");
        for i in 0..batch {
            // dA = dC · Bᵀ, where B is stored [k, n] (or [n, k] when trans_b)
            gemm(
                m,
                n,
                k,
                &g[i * m * n..(i + 1) * m * n],
                false,
                &bv[i * k * n..(i + 1) * k * n],
                !trans_b,
                &mut da[i * m * k..(i + 1) * m * k],
                true,
            );
        }
    }
    if sink.wants(b) {
        let av = sink.value(a).data();
        let db = sink.buf(b).expect("wants b");
        for i in 0..batch {
            let ai = &av[i * m * k..(i + 1) * m * k];
            let gi = &g[i * m * n..(i + 1) * m * n];
            let dbi = &mut db[i * k * n..(i + 1) * k * n];
            if trans_b {
                // dB[n, k] = dCᵀ · A
                gemm(n, m, k, gi, true, ai, false, dbi, true);
            } else {
                // dB[k, n] = Aᵀ · dC
                gemm(k, m, n, ai, true, gi, false, dbi, true);
            }
        }
    }
}
