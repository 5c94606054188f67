//! Oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use motionseg::autodiff::{finite_diff_check, GradCheckOptions, Var};
use motionseg::nn::{Conv, LayerNorm, Linear, Msa, LN_EPS};
use motionseg::params::{ParamStore, Session};
use motionseg::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

pub fn randomise(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

pub fn zero_all(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().fill(0.0);
    }
}

/// Row-vector affine map `x·W + b` by explicit loops.
pub fn affine(store: &ParamStore, lin: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(lin.w);
    let bias = |j: usize| lin.b.map_or(0.0, |b| store.get(b).data()[j]);
    (0..lin.d_out)
        .map(|j| bias(j) + (0..lin.d_in).map(|i| x[i] * w.at(&[i, j])).sum::<f64>())
        .collect()
}

pub fn naive_msa(store: &ParamStore, m: &Msa, x: &Tensor) -> Tensor {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let d = c / m.heads;
    let rows: Vec<&[f64]> = x.data().chunks(c).collect();
    let q: Vec<Vec<f64>> = rows.iter().map(|r| affine(store, &m.q, r)).collect();
    let k: Vec<Vec<f64>> = rows.iter().map(|r| affine(store, &m.k, r)).collect();
    let v: Vec<Vec<f64>> = rows.iter().map(|r| affine(store, &m.v, r)).collect();
    let mut ctx = vec![vec![0.0; c]; n];
    for h in 0..m.heads {
        let lo = h * d;
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|e| q[i][lo + e] * k[j][lo + e]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            for e in 0..d {
                ctx[i][lo + e] = (0..n).map(|j| ex[j] / z * v[j][lo + e]).sum();
            }
        }
    }
    let out: Vec<f64> = ctx.iter().flat_map(|r| affine(store, &m.o, r)).collect();
    Tensor::new([n, c], out).unwrap()
}

pub fn run<F: FnOnce(&mut Session) -> Result<Var>>(store: &ParamStore, f: F) -> Tensor {
    let mut s = Session::new(store);
    let v = f(&mut s).unwrap();
    s.value(v).clone()
}


/// Direct 3×3 / 1×1 convolution with "same" padding, single image.
pub fn naive_same_conv(store: &ParamStore, conv: &Conv, x: &Tensor) -> Vec<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (wt, b) = (store.get(conv.w), store.get(conv.b));
    let (k, d, pad) = (conv.k, conv.dilation, conv.padding() as isize);
    let mut out = vec![0.0; conv.c_out * h * w];
    for o in 0..conv.c_out {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b.data()[o];
                for c in 0..ci {
                    for i in 0..k {
                        for j in 0..k {
                            let iy = y as isize + (i * d) as isize - pad;
                            let ix = xx as isize + (j * d) as isize - pad;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += wt.at(&[o, c, i, j]) * x.at(&[c, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

pub fn probe_check(store: &mut ParamStore, seed: u64, f: &dyn Fn(&mut Session) -> Result<Var>) -> f64 {
    let report = finite_diff_check(
        store,
        |s| {
            let out = f(s)?;
            let shape = s.shape(out).to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = s.constant(Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)));
            let p = s.mul(out, r)?;
            Ok(s.sum(p))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.pass, "{:?}", report.params);
    report.max_rel_error
}

/// Layer norm over the last axis of row-major `rows`, computed per row.
pub fn naive_layer_norm(store: &ParamStore, ln: &LayerNorm, x: &[f64], c: usize) -> Vec<f64> {
    let (g, b) = (store.get(ln.gamma).data(), store.get(ln.beta).data());
    x.chunks(c)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter().enumerate().map(move |(i, v)| (v - mean) * inv * g[i] + b[i]).collect::<Vec<_>>()
        })
        .collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Bilinear ×`f` upsampling of row-major `[C, h, w]` planes, per output pixel.
pub fn naive_upsample(x: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let src = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        (i0, (i0 + 1).min(n - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(c * h * w * f * f);
    for ch in 0..c {
        let p = |y: usize, xx: usize| x[(ch * h + y) * w + xx];
        for oy in 0..h * f {
            let (y0, y1, fy) = src(oy, h);
            for ox in 0..w * f {
                let (x0, x1, fx) = src(ox, w);
                out.push((1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1)));
            }
        }
    }
    out
}
