//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Var;
use crate::error::Result;
use crate::params::{ParamStore, Session};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Step is `h_rel · max(1, |p|)` per coordinate.
    pub h_rel: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter tensor (all of them if fewer).
    pub coords_per_param: usize,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h_rel: 1e-5, tol: 1e-4, coords_per_param: 64, seed: 0, floor: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub max_rel_error: f64,
    pub h_rel: f64,
    pub tol: f64,
    pub pass: bool,
}

/// |a − n| / max(1e-8, |a| + |n|)
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floor(analytic, numeric, 1e-8)
}

pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences, for every parameter in `store`.
pub fn finite_diff_check<F>(store: &mut ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Session) -> Result<Var>,
{
    let analytic = {
        let mut s = Session::new(store);
        let y = f(&mut s)?;
        let grads = s.backward(y)?;
        s.param_grads(&grads)
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut s = Session::new(store);
        let y = f(&mut s)?;
        Ok(s.value(y).item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        for &j in &coords {
            let p = store.get(id).data()[j];
            let h = opts.h_rel * p.abs().max(1.0);
            store.get_mut(id).data_mut()[j] = p + h;
            let up = eval(store);
            store.get_mut(id).data_mut()[j] = p - h;
            let down = eval(store);
            store.get_mut(id).data_mut()[j] = p;
            let numeric = (up? - down?) / (2.0 * h);
            worst = worst.max(relative_error_floor(analytic[id.index()].data()[j], numeric, opts.floor));
        }
        params.push(ParamError { name: store.name(id).to_string(), max_rel_error: worst, coords_checked: coords.len() });
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { params, max_rel_error, h_rel: opts.h_rel, tol: opts.tol, pass: max_rel_error <= opts.tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new([3], vec![0.3, -1.2, 2.5]).unwrap()).unwrap();
        let report = finite_diff_check(
            &mut store,
            |s| {
                let v = s.param(w);
                let sq = s.mul(v, v)?;
                Ok(s.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert!(report.pass);
    }

    #[test]
    fn dead_relu_matches_zero() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new([2], vec![-1.0, -0.5]).unwrap()).unwrap();
        let report = finite_diff_check(
            &mut store,
            |s| {
                let v = s.param(w);
                let r = s.relu(v);
                Ok(s.sum(r))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }
}
