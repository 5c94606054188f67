//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Includes the full training runs, so expect
//! roughly half an hour on one core.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{naive_msa, rand_tensor, randomise};
use motionseg::align::score_from_sim;
use motionseg::autodiff::{Graph, Reduction};
use motionseg::checkpoint::Checkpoint;
use motionseg::config::{AblationConfig, RunConfig, LADDER};
use motionseg::gradsuite::run_suite;
use motionseg::metrics::map_50_95;
use motionseg::mmvt::{assemble_tokens, chunk_tokens, temporal_attention, AttnBlock, Mmvt, MmvtVariant, ModalTokenBundle};
use motionseg::model::Model;
use motionseg::nn::Msa;
use motionseg::params::{Init, ParamStore, Session};
use motionseg::train::{load_datasets, run_ablation_ladder, train, LadderRow};
use motionseg::world::io::{read_dataset, write_dataset};
use motionseg::world::{generate_dataset, Preset};
use motionseg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let results = run_suite(None, 1e-4).expect("gradient suite");
    let secs = start.elapsed().as_secs_f64();
    for r in &results {
        println!("    {}", r.line());
    }
    let worst = results.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    let pass = results.iter().all(|r| r.report.pass && r.report.max_rel_error < 1e-4) && secs < 120.0;
    outcome(pass, format!("{} checks, max relative error {worst:.2e}, {secs:.1}s", results.len()))
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a.at(&[i, p]) * b.at(&[p, j])).sum();
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, dil: usize, pad: usize) -> Vec<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let span = dil * (k - 1) + 1;
    let (oh, ow) = ((h + 2 * pad - span) / stride + 1, (wd + 2 * pad - span) / stride + 1);
    let mut out = Vec::with_capacity(co * oh * ow);
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b[o];
                for c in 0..ci {
                    for i in 0..k {
                        for j in 0..k {
                            let iy = (y * stride + i * dil) as isize - pad as isize;
                            let ix = (xx * stride + j * dil) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                acc += w.at(&[o, c, i, j]) * x.at(&[c, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_equivalence() -> Outcome {
    let seeds = 100u64;
    let mut worst = [0.0f64; 5];
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();

        let (m, k, n) = (rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..8));
        let (a, b) = (rand_tensor(&mut rng, &[m, k]), rand_tensor(&mut rng, &[k, n]));
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(av, bv).unwrap();
        worst[0] = worst[0].max(max_diff(g.value(c).data(), &naive_matmul(&a, &b)));

        let (ci, co, kk) = (rng.gen_range(1..4), rng.gen_range(1..4), [1, 3][rng.gen_range(0..2)]);
        let (stride, dil) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let pad = rng.gen_range(0..3);
        let (h, w) = (rng.gen_range(5..10), rng.gen_range(5..10));
        let x = rand_tensor(&mut rng, &[ci, h, w]);
        let wt = rand_tensor(&mut rng, &[co, ci, kk, kk]);
        let bias = rand_tensor(&mut rng, &[co]);
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(bias.clone()));
        let y = g.conv2d(xv, wv, Some(bv), stride, dil, pad).unwrap();
        worst[1] = worst[1].max(max_diff(g.value(y).data(), &naive_conv(&x, &wt, bias.data(), stride, dil, pad)));

        let heads = rng.gen_range(1..3);
        let ch = heads * rng.gen_range(1..4);
        let tokens = rng.gen_range(1..7);
        let mut store = ParamStore::new();
        let msa = Msa::new(&mut store, &mut Init::new(seed), "m", ch, heads).unwrap();
        randomise(&mut store, seed + 1000);
        let xt = rand_tensor(&mut rng, &[tokens, ch]);
        let mut s = Session::new(&store);
        let xv = s.constant(xt.clone());
        let out = msa.forward(&mut s, xv).unwrap();
        worst[2] = worst[2].max(s.value(out).max_abs_diff(&naive_msa(&store, &msa, &xt)));

        let nb = rng.gen_range(1..12);
        let logits: Vec<f64> = (0..nb).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let labels: Vec<f64> = (0..nb).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        let lv = g.constant(Tensor::new([nb], logits.clone()).unwrap());
        let bce = g.bce_with_logits(lv, &labels, Reduction::Mean).unwrap();
        let oracle: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(z, y)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / nb as f64;
        worst[3] = worst[3].max((g.value(bce).item() - oracle).abs());

        let ks: Vec<u64> = (0..rng.gen_range(1..15)).map(|_| rng.gen_range(0..=20)).collect();
        let ious: Vec<f64> = ks.iter().map(|&k| k as f64 / 20.0).collect();
        let passed: usize = (50..=95u64).step_by(5).map(|pct| ks.iter().filter(|&&k| k * 100 >= pct * 20).count()).sum();
        worst[4] = worst[4].max((map_50_95(&ious).unwrap() - passed as f64 / (10 * ks.len()) as f64).abs());
    }
    let example = map_50_95(&[0.9, 0.6, 0.4]).unwrap();
    // Attention chains several ops.
    let limits = [1e-12, 1e-12, 1e-10, 1e-12, 1e-12];
    let pass = worst.iter().zip(limits).all(|(w, l)| *w <= l) && example == 0.4;
    outcome(
        pass,
        format!(
            "{seeds} seeds; max |diff| matmul {:.1e}, conv {:.1e}, attention {:.1e}, bce {:.1e}, mAP {:.1e}; mAP[0.9,0.6,0.4] = {example}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn structural_invariants() -> Outcome {
    let (t, hw, l, c) = (3, 4, 3, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (za, zm, zl) = (rand_tensor(&mut rng, &[t, hw, c]), rand_tensor(&mut rng, &[t, hw, c]), rand_tensor(&mut rng, &[l, c]));
    let mut notes = Vec::new();

    let mut store = ParamStore::new();
    let block = AttnBlock::new(&mut store, &mut Init::new(1), "ta", c, 2).unwrap();
    randomise(&mut store, 2);
    let mut s = Session::new(&store);
    let b = ModalTokenBundle { z_a: s.constant(za.clone()), z_m: Some(s.constant(zm.clone())), z_l: s.constant(zl.clone()) };
    let (z, lay) = assemble_tokens(&mut s, &b).unwrap();
    let back = chunk_tokens(&mut s, z, &lay).unwrap();
    let round_trip = s.value(back.z_a) == &za && s.value(back.z_m.unwrap()) == &zm && (0..t).all(|f| {
        s.value(back.z_l).data()[f * l * c..(f + 1) * l * c] == zl.data()[..]
    });
    notes.push(format!("assemble/chunk exact {round_trip}"));
    let y = temporal_attention(&mut s, z, &lay, &block).unwrap();
    let (zv, yv) = (s.value(z).clone(), s.value(y).clone());
    let per_frame = lay.tokens() * c;
    let untouched = (0..t).all(|f| {
        let lo = f * per_frame + hw * c;
        zv.data()[lo..(f + 1) * per_frame] == yv.data()[lo..(f + 1) * per_frame]
    });
    let appearance_changed = (0..t).any(|f| zv.data()[f * per_frame..f * per_frame + hw * c] != yv.data()[f * per_frame..f * per_frame + hw * c]);
    notes.push(format!("TA keeps motion/language bit-identical {untouched}"));

    let mut zero = ParamStore::new();
    let mmvt = Mmvt::new(&mut zero, &mut Init::new(3), "mmvt", c, 2, 2, 2, MmvtVariant::default()).unwrap();
    for id in zero.ids().collect::<Vec<_>>() {
        zero.get_mut(id).data_mut().fill(0.0);
    }
    let mut s = Session::new(&zero);
    let b = ModalTokenBundle { z_a: s.constant(za.clone()), z_m: Some(s.constant(zm.clone())), z_l: s.constant(zl.clone()) };
    let o = mmvt.forward(&mut s, &b).unwrap();
    let identity = s.value(o.z_a) == &za && s.value(o.z_m.unwrap()) == &zm;
    notes.push(format!("zero MMVT identity {identity}"));

    let mut softmax_err: f64 = 0.0;
    let mut score_err: f64 = 0.0;
    let mut cos_err: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let (rows, cols) = (rng.gen_range(1..6), rng.gen_range(1..9));
        let x = g.constant(Tensor::from_fn(vec![rows, cols], |_| rng.gen_range(-30.0..30.0)));
        let sm = g.softmax(x);
        for r in g.value(sm).data().chunks(cols) {
            softmax_err = softmax_err.max((r.iter().sum::<f64>() - 1.0).abs());
        }
        let sim = rng.gen_range(-1.0..1.0);
        score_err = score_err.max((score_from_sim(sim) + score_from_sim(-sim) - 1.0).abs());
        let a = rand_tensor(&mut rng, &[rows, cols]);
        let bb = rand_tensor(&mut rng, &[rows, cols]);
        let k = rng.gen_range(0.01..100.0);
        let scaled = Tensor::from_fn(vec![rows, cols], |i| a.data()[i] * k);
        let (av, bv, sv) = (g.constant(a), g.constant(bb), g.constant(scaled));
        let c1 = g.cosine_rows(av, bv).unwrap();
        let c2 = g.cosine_rows(sv, bv).unwrap();
        cos_err = cos_err.max(max_diff(g.value(c1).data(), g.value(c2).data()));
    }
    notes.push(format!("softmax rows {softmax_err:.1e}, score symmetry {score_err:.1e}, cosine scale {cos_err:.1e}"));
    let pass = round_trip && untouched && appearance_changed && identity && softmax_err <= 1e-12 && score_err <= 1e-12 && cos_err <= 1e-12;
    outcome(pass, notes.join("; "))
}

fn trainability() -> Outcome {
    let cfg = RunConfig { preset: Preset::Easy, ..RunConfig::default() };
    let (tr, va) = load_datasets(&cfg).expect("easy data");
    let start = Instant::now();
    let out = train(&cfg, AblationConfig::preset("B+M+T+L+A").unwrap(), &tr, &va, &mut |l| {
        if l.starts_with("eval") {
            println!("    {l}");
        }
    })
    .expect("training");
    let secs = start.elapsed().as_secs_f64();
    let miou = out.final_eval.as_ref().unwrap().report.mean_iou;
    let window = |lo: usize| out.history[lo..lo + 25].iter().map(|r| r.seg).sum::<f64>() / 25.0;
    let (early, later) = (window(0), window(200));
    let pass = miou >= 0.70 && cfg.steps <= 2000 && secs <= 900.0 && tr.len() == 512;
    outcome(
        pass,
        format!(
            "easy set {} clips {}x{} T={}: mean IoU {miou:.4} after {} steps in {secs:.0}s (L_seg steps 0-24 {early:.4}, 200-224 {later:.4})",
            tr.len(),
            cfg.height,
            cfg.width,
            cfg.frames,
            cfg.steps
        ),
    )
}

fn ablation_direction() -> Outcome {
    let start = Instant::now();
    let mut tables: Vec<Vec<LadderRow>> = Vec::new();
    for seed in 0..3u64 {
        let cfg = RunConfig { seed, preset: Preset::MotionNecessity, ..RunConfig::default() };
        let (tr, va) = load_datasets(&cfg).expect("motion-necessity data");
        let rows = run_ablation_ladder(&cfg, &LADDER, &tr, &va, &mut |_| {}).expect("ladder");
        println!("    seed {seed}:");
        for line in motionseg::train::ladder_table(&rows).lines() {
            println!("      {line}");
        }
        tables.push(rows);
    }
    let secs = start.elapsed().as_secs_f64();
    let miou = |rows: &[LadderRow], p: &str| rows.iter().find(|r| r.preset == p).unwrap().report.mean_iou;
    let margins: Vec<f64> = tables.iter().map(|r| miou(r, "B+M+T+L+A") - miou(r, "B")).collect();
    let wins = margins.iter().filter(|&&m| m >= 0.03).count();
    let mean = |p: &str| tables.iter().map(|r| miou(r, p)).sum::<f64>() / tables.len() as f64;
    let (b, bm) = (mean("B"), mean("B+M"));
    let pass = wins >= 2 && bm >= b && secs <= 90.0 * 60.0;
    outcome(
        pass,
        format!(
            "full-minus-B margins {:?} ({wins}/3 >= 0.03); 3-seed mean IoU B {b:.4}, B+M {bm:.4}; ladder {secs:.0}s",
            margins.iter().map(|m| format!("{m:+.4}")).collect::<Vec<_>>()
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = RunConfig {
        preset: Preset::MotionNecessity,
        seed: 11,
        steps: 60,
        eval_every: 20,
        train_clips: 24,
        val_clips: 8,
        ..RunConfig::default()
    };
    let run = || {
        let (tr, va) = load_datasets(&cfg).unwrap();
        let out = train(&cfg, AblationConfig::preset("B+M+T+L+A").unwrap(), &tr, &va, &mut |_| {}).unwrap();
        let ck = Checkpoint::from_store(&cfg, "B+M+T+L+A", &out.store).encode();
        (ck, out.log.join("\n"), out.final_eval.unwrap().to_text())
    };
    let (a, b) = (run(), run());
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2];
    outcome(
        same.iter().all(|&x| x),
        format!("checkpoint {} bytes equal {}, log equal {}, report equal {}", a.0.len(), same[0], same[1], same[2]),
    )
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn format_round_trips() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for preset in [Preset::Easy, Preset::MotionNecessity] {
        let clips = generate_dataset(preset, &cfg.scene(), 6, 21, cfg.l_max).unwrap();
        let (d1, d2) = (tmp.path().join(format!("{}-1", preset.name())), tmp.path().join(format!("{}-2", preset.name())));
        write_dataset(&d1, &clips).unwrap();
        let back = read_dataset(&d1, cfg.l_max).unwrap();
        write_dataset(&d2, &back).unwrap();
        let (f1, f2) = (files(&d1), files(&d2));
        let kinds = ["ppm", "pgm", "flo"].map(|x| f1.iter().filter(|f| f.0.ends_with(x)).count());
        let ok = f1 == f2 && back == clips && kinds.iter().all(|&k| k == 6 * cfg.frames);
        pass &= ok;
        notes.push(format!("{}: {} files (ppm/pgm/flo {:?}) identical {ok}", preset.name(), f1.len(), kinds));
    }
    let (_, store) = Model::new(&cfg, AblationConfig::preset("B+M+T+L+A").unwrap()).unwrap();
    let p1 = tmp.path().join("a.ckpt");
    let p2 = tmp.path().join("b.ckpt");
    Checkpoint::from_store(&cfg, "B+M+T+L+A", &store).save(&p1).unwrap();
    Checkpoint::load(&p1).unwrap().save(&p2).unwrap();
    let ck_ok = fs::read(&p1).unwrap() == fs::read(&p2).unwrap();
    pass &= ck_ok;
    notes.push(format!("checkpoint identical {ck_ok}"));
    outcome(pass, notes.join("; "))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 gradient suite", gradient_suite),
        ("2 oracle equivalence", oracle_equivalence),
        ("3 structural invariants", structural_invariants),
        ("4 trainability", trainability),
        ("5 ablation direction", ablation_direction),
        ("6 determinism", determinism),
        ("7 format round-trips", format_round_trips),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        println!("criterion {name}: running");
        let o = f();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
