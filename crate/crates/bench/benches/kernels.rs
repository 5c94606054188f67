use criterion::{black_box, criterion_group, criterion_main, Criterion};
use motionseg::config::{AblationConfig, RunConfig};
use motionseg::model::Model;
use motionseg::nn::Msa;
use motionseg::params::{Init, ParamStore, Session};
use motionseg::world::{generate_dataset, Preset};
use motionseg::Tensor;

fn filled(shape: &[usize], seed: usize) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |i| (((i + seed) * 7919) % 1000) as f64 / 500.0 - 1.0)
}

fn matmul(c: &mut Criterion) {
    let store = ParamStore::new();
    let (a, b) = (filled(&[128, 128], 1), filled(&[128, 128], 2));
    c.bench_function("matmul_128_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut s = Session::new(&store);
            let (x, y) = (s.constant(a.clone()), s.constant(b.clone()));
            let z = s.matmul(x, y).unwrap();
            let l = s.sum(z);
            black_box(s.backward(l).unwrap());
        })
    });
}

fn conv(c: &mut Criterion) {
    let store = ParamStore::new();
    let (x, w, b) = (filled(&[3, 16, 32, 32], 3), filled(&[32, 16, 3, 3], 4), filled(&[32], 5));
    c.bench_function("conv3x3_16to32_32px_t3_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut s = Session::new(&store);
            let (xv, wv, bv) = (s.constant(x.clone()), s.constant(w.clone()), s.constant(b.clone()));
            let y = s.conv2d(xv, wv, Some(bv), 1, 1, 1).unwrap();
            let l = s.sum(y);
            black_box(s.backward(l).unwrap());
        })
    });
}

fn attention(c: &mut Criterion) {
    let mut store = ParamStore::new();
    let m = Msa::new(&mut store, &mut Init::new(0), "msa", 32, 4).unwrap();
    let x = filled(&[3, 44, 32], 6);
    c.bench_function("msa_3x44_tokens_c32_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut s = Session::new(&store);
            let xv = s.constant(x.clone());
            let y = m.forward(&mut s, xv).unwrap();
            let l = s.sum(y);
            black_box(s.backward(l).unwrap());
        })
    });
}

fn training_step(c: &mut Criterion) {
    let cfg = RunConfig::default();
    let clip = generate_dataset(Preset::Easy, &cfg.scene(), 1, 0, cfg.l_max).unwrap().remove(0);
    let mut group = c.benchmark_group("train_step_64px_t3");
    group.sample_size(10);
    for name in ["B", "B+M+T+L+A"] {
        let (model, store) = Model::new(&cfg, AblationConfig::preset(name).unwrap()).unwrap();
        group.bench_function(name, |bench| {
            bench.iter(|| {
                let mut s = Session::new(&store);
                let (_, parts) = model.loss(&mut s, &clip, 0).unwrap();
                black_box(s.backward(parts.total).unwrap());
            })
        });
    }
    group.finish();
}

fn data(c: &mut Criterion) {
    let cfg = RunConfig::default();
    c.bench_function("generate_motion_necessity_clip", |bench| {
        bench.iter(|| black_box(generate_dataset(Preset::MotionNecessity, &cfg.scene(), 1, 3, cfg.l_max).unwrap()))
    });
}

criterion_group!(benches, matmul, conv, attention, training_step, data);
criterion_main!(benches);
