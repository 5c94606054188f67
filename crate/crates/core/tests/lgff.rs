//! Language-guided fusion decoder and segmentation head.

mod common;

use common::*;
use motionseg::lgff::{threshold, Decoder, DecoderKind, SegHead};
use motionseg::nn::coordinate_features;
use motionseg::params::{Init, ParamStore, Session};
use motionseg::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const C: usize = 4;

struct Pyramid {
    a: Vec<Tensor>,
    m: Vec<Tensor>,
    f4: Tensor,
    cls: Tensor,
}

/// Levels 8x8, 4x4, 2x2 and a 2x2 top map, `t` frames.
fn pyramid(seed: u64, t: usize) -> Pyramid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [8, 4, 2];
    let ca = [3, 5, 6];
    let cm = [2, 3, 4];
    Pyramid {
        a: (0..3).map(|i| rand_tensor(&mut rng, &[t, ca[i], sizes[i], sizes[i]])).collect(),
        m: (0..3).map(|i| rand_tensor(&mut rng, &[t, cm[i], sizes[i], sizes[i]])).collect(),
        f4: rand_tensor(&mut rng, &[t, C, 2, 2]),
        cls: rand_tensor(&mut rng, &[C]),
    }
}

fn decoder(kind: DecoderKind, motion: bool, seed: u64) -> (ParamStore, Decoder) {
    let mut store = ParamStore::new();
    let cm = [2, 3, 4];
    let d = Decoder::new(&mut store, &mut Init::new(seed), "dec", kind, C, &[3, 5, 6], motion.then_some(&cm[..])).unwrap();
    (store, d)
}

struct LevelOut {
    f: Tensor,
    f_ea: Tensor,
    f_em: Tensor,
    att_a: Tensor,
    g_ea: Tensor,
    g_em: Tensor,
}

fn run_level(store: &ParamStore, d: &Decoder, level: usize, p: &Pyramid, prev: &Tensor, cls: &Tensor) -> LevelOut {
    let mut s = Session::new(store);
    let fa = s.constant(p.a[level].clone());
    let fm = s.constant(p.m[level].clone());
    let fp = s.constant(prev.clone());
    let c = s.constant(cls.clone());
    let tr = d.fuse_level(&mut s, level, fa, Some(fm), fp, c).unwrap();
    let v = |x: Option<motionseg::autodiff::Var>| s.value(x.unwrap()).clone();
    LevelOut {
        f: s.value(tr.f).clone(),
        f_ea: v(tr.f_ea),
        f_em: v(tr.f_em),
        att_a: v(tr.att_a),
        g_ea: v(tr.g_ea),
        g_em: v(tr.g_em),
    }
}

#[test]
fn zero_cls_zeroes_enhanced_and_gated_streams() {
    let p = pyramid(1, 2);
    let (store, d) = decoder(DecoderKind::Lgff, true, 2);
    let out = run_level(&store, &d, 1, &p, &p.f4, &Tensor::zeros([C]));
    for x in [&out.f_ea, &out.f_em, &out.g_ea, &out.g_em] {
        assert!(x.data().iter().all(|&v| v == 0.0));
    }
    assert!(out.att_a.data().iter().all(|&v| v == 0.5));
}

fn set_att(store: &mut ParamStore, d: &Decoder, level: usize, bias: f64) {
    for conv in [d.levels[level].att_a.as_ref().unwrap(), d.levels[level].att_m.as_ref().unwrap()] {
        store.get_mut(conv.w).data_mut().fill(0.0);
        store.get_mut(conv.b).data_mut().fill(bias);
    }
}

#[test]
fn attention_residual_limits() {
    let p = pyramid(3, 2);
    let prev = rand_tensor(&mut ChaCha8Rng::seed_from_u64(4), &[2, C, 4, 4]);
    let (mut store, d) = decoder(DecoderKind::Lgff, true, 5);
    for (bias, k) in [(0.0, 1.5), (-1000.0, 1.0), (1000.0, 2.0)] {
        set_att(&mut store, &d, 0, bias);
        let out = run_level(&store, &d, 0, &p, &prev, &p.cls);
        let scaled = |x: &Tensor| x.data().iter().map(|v| v * k).collect::<Vec<_>>();
        assert_eq!(out.g_ea.data(), scaled(&out.f_ea).as_slice(), "bias {bias}");
        assert_eq!(out.g_em.data(), scaled(&out.f_em).as_slice(), "bias {bias}");
    }
}

#[test]
fn cls_scaling_covariance_and_att_range() {
    let p = pyramid(6, 2);
    let prev = rand_tensor(&mut ChaCha8Rng::seed_from_u64(7), &[2, C, 4, 4]);
    let (store, d) = decoder(DecoderKind::Lgff, true, 8);
    let base = run_level(&store, &d, 0, &p, &prev, &p.cls);
    assert!(base.att_a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    for alpha in [2.0, 0.37, 5.5] {
        let cls = Tensor::new([C], p.cls.data().iter().map(|v| v * alpha).collect()).unwrap();
        let out = run_level(&store, &d, 0, &p, &prev, &cls);
        for (x, y) in [(&base.f_ea, &out.f_ea), (&base.f_em, &out.f_em)] {
            let scaled: Vec<f64> = x.data().iter().map(|v| v * alpha).collect();
            assert!(max_diff(&scaled, y.data()) <= 1e-12 * alpha.max(1.0));
            if alpha == 2.0 {
                assert_eq!(scaled.as_slice(), y.data());
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Level fusion for one frame rebuilt from loop oracles.
fn level_oracle(store: &ParamStore, d: &Decoder, level: usize, fa: &Tensor, fm: &Tensor, prev: &Tensor, cls: &[f64]) -> Vec<f64> {
    let p = &d.levels[level];
    let (h, w) = (fa.shape()[1], fa.shape()[2]);
    let (hp, wp) = (prev.shape()[1], prev.shape()[2]);
    let up = naive_upsample(prev.data(), C, hp, wp, h / hp);
    let pc = coordinate_features(h, w);
    let plane = h * w;
    let enhance = |conv, reduced: Vec<f64>| {
        let cat = Tensor::new([8 + 2 * C, h, w], [pc.data().to_vec(), up.clone(), reduced].concat()).unwrap();
        let y = naive_same_conv(store, conv, &cat);
        y.iter().enumerate().map(|(i, v)| v * cls[i / plane]).collect::<Vec<_>>()
    };
    let ea = enhance(p.fuse_a.as_ref().unwrap(), naive_same_conv(store, &p.reduce_a, fa));
    let em = enhance(p.fuse_m.as_ref().unwrap(), naive_same_conv(store, p.reduce_m.as_ref().unwrap(), fm));
    let ea_t = Tensor::new([C, h, w], ea.clone()).unwrap();
    let gate = |conv, fe: &[f64]| {
        let logit = naive_same_conv(store, conv, &ea_t);
        fe.iter().enumerate().map(|(i, v)| sigmoid(logit[i % plane]) * v + v).collect::<Vec<_>>()
    };
    let g = [gate(p.att_a.as_ref().unwrap(), &ea), gate(p.att_m.as_ref().unwrap(), &em)].concat();
    let y = naive_same_conv(store, &p.out1, &Tensor::new([2 * C, h, w], g).unwrap());
    let y: Vec<f64> = y.into_iter().map(|v| v.max(0.0)).collect();
    let y = naive_same_conv(store, &p.out2, &Tensor::new([C, h, w], y).unwrap());
    y.into_iter().map(|v| v.max(0.0)).collect()
}

fn frame0(x: &Tensor) -> Tensor {
    let per = x.len() / x.shape()[0];
    Tensor::new(x.shape()[1..].to_vec(), x.data()[..per].to_vec()).unwrap()
}

#[test]
fn level_matches_step_by_step_oracle() {
    for seed in 0..20 {
        let p = pyramid(100 + seed, 1);
        let (mut store, d) = decoder(DecoderKind::Lgff, true, seed);
        randomise(&mut store, seed + 50);
        for (level, prev) in [(0usize, frame0(&p.a[1])), (2, p.f4.clone())] {
            let prev4 = if level == 0 {
                rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[1, C, 4, 4])
            } else {
                prev.reshape([1, C, 2, 2]).unwrap()
            };
            let out = run_level(&store, &d, level, &p, &prev4, &p.cls);
            let expect = level_oracle(&store, &d, level, &frame0(&p.a[level]), &frame0(&p.m[level]), &frame0(&prev4), p.cls.data());
            assert!(max_diff(out.f.data(), &expect) <= 1e-10, "seed {seed} level {level}");
        }
    }
}

fn decode(store: &ParamStore, d: &Decoder, p: &Pyramid, motion: bool) -> (Tensor, usize) {
    let mut s = Session::new(store);
    let a: Vec<_> = p.a.iter().map(|x| s.constant(x.clone())).collect();
    let m: Vec<_> = p.m.iter().map(|x| s.constant(x.clone())).collect();
    let f4 = s.constant(p.f4.clone());
    let cls = s.constant(p.cls.clone());
    let (f1, trace) = d.decode(&mut s, &a, motion.then_some(&m[..]), f4, cls).unwrap();
    (s.value(f1).clone(), trace.levels.len())
}

#[test]
fn decoded_f1_has_level_one_size_for_all_decoders() {
    let p = pyramid(9, 3);
    for (kind, motion) in [(DecoderKind::Lgff, true), (DecoderKind::Lgff, false), (DecoderKind::Cat, true), (DecoderKind::Cat, false)] {
        let (store, d) = decoder(kind, motion, 10);
        let (f1, n) = decode(&store, &d, &p, motion);
        assert_eq!(f1.shape(), &[3, C, 8, 8]);
        assert_eq!(n, 3);
    }
}

#[test]
fn decoder_passes_gradcheck() {
    let p = pyramid(11, 2);
    for kind in [DecoderKind::Lgff, DecoderKind::Cat] {
        let (mut store, d) = decoder(kind, true, 12);
        let e = probe_check(&mut store, 13, &|s| {
            let a: Vec<_> = p.a.iter().map(|x| s.constant(x.clone())).collect();
            let m: Vec<_> = p.m.iter().map(|x| s.constant(x.clone())).collect();
            let f4 = s.constant(p.f4.clone());
            let cls = s.constant(p.cls.clone());
            Ok(d.decode(s, &a, Some(&m[..]), f4, cls)?.0)
        });
        assert!(e < 1e-4, "{kind:?}: {e}");
    }
}

#[test]
fn head_examples_and_oracle() {
    let mut store = ParamStore::new();
    let head = SegHead::new(&mut store, &mut Init::new(0), "head", C).unwrap();
    let f1 = rand_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[2, C, 4, 4]);
    let probs = |store: &ParamStore| {
        let mut s = Session::new(store);
        let x = s.constant(f1.clone());
        let o = head.forward(&mut s, x, 16, 16).unwrap();
        (s.value(o.logits).clone(), s.value(o.probs).clone())
    };
    zero_all(&mut store);
    let (_, p) = probs(&store);
    assert_eq!(p.shape(), &[2, 1, 16, 16]);
    assert!(p.data().iter().all(|&v| v == 0.5));
    assert!(threshold(p.data()).iter().all(|&b| b));
    store.get_mut(head.conv.b).data_mut()[0] = 1000.0;
    let (_, p) = probs(&store);
    assert!(threshold(p.data()).iter().all(|&b| b));

    randomise(&mut store, 2);
    let (logits, p) = probs(&store);
    for t in 0..2 {
        let sig: Vec<f64> = logits.data()[t * 16..(t + 1) * 16].iter().map(|&v| sigmoid(v)).collect();
        let expect = naive_upsample(&sig, 1, 4, 4, 4);
        assert!(max_diff(&p.data()[t * 256..(t + 1) * 256], &expect) <= 1e-12);
    }
}
