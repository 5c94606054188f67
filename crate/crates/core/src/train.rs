//! Training loop, evaluation and the ablation ladder.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AblationConfig, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{FrameScore, MetricsReport};
use crate::model::Model;
use crate::optim::{clip_global_norm, cosine_lr, Optimizer};
use crate::params::{ParamStore, Session};
use crate::world::io::read_dataset;
use crate::world::{generate_dataset, ClipSample};

/// Training and validation clips for `cfg`: read from the configured
/// directories, otherwise generated from disjoint seeds.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Vec<ClipSample>, Vec<ClipSample>)> {
    let get = |dir: &Option<String>, n: usize, seed: u64| match dir {
        Some(d) => read_dataset(Path::new(d), cfg.l_max),
        None => generate_dataset(cfg.preset, &cfg.scene(), n, seed, cfg.l_max),
    };
    Ok((get(&cfg.train_dir, cfg.train_clips, cfg.seed)?, get(&cfg.val_dir, cfg.val_clips, cfg.val_seed())?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub clip: usize,
    pub lr: f64,
    pub seg: f64,
    pub align: Option<f64>,
    pub aux: Option<f64>,
    pub total: f64,
    pub grad_norm: f64,
}

impl StepRecord {
    pub fn line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        format!(
            "step {} clip {} lr {:.6e} l_seg {:.6} l_align {} l_aux {} total {:.6} grad_norm {:.4}",
            self.step,
            self.clip,
            self.lr,
            self.seg,
            opt(self.align),
            opt(self.aux),
            self.total,
            self.grad_norm
        )
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<StepRecord>,
    /// Every emitted log line, in order.
    pub log: Vec<String>,
    pub final_eval: Option<Evaluation>,
}

/// Trains `abl` on `train` for `cfg.steps` single-clip steps. Each log line is
/// passed to `sink` as it is produced. A non-finite loss or gradient aborts
/// with a numerical error naming the step and clip.
pub fn train(
    cfg: &RunConfig,
    abl: AblationConfig,
    train: &[ClipSample],
    val: &[ClipSample],
    sink: &mut dyn FnMut(&str),
) -> Result<TrainOutcome> {
    if train.is_empty() && cfg.steps > 0 {
        return Err(Error::Usage("no training clips".into()));
    }
    let (model, mut store) = Model::new(cfg, abl)?;
    let mut opt = Optimizer::new(cfg, &store);
    let mut log = Vec::new();
    let mut emit = |line: String, log: &mut Vec<String>| {
        sink(&line);
        log.push(line);
    };
    emit(format!("train ablation flags {:?} params {}", abl.flags(), store.num_scalars()), &mut log);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_1A7E);
    for step in 0..cfg.steps {
        if step % train.len() == 0 {
            order = (0..train.len()).collect();
            order.shuffle(&mut rng);
        }
        let idx = order[step % train.len()];
        let clip = &train[idx];
        let lr = cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup);
        let (rec, mut grads) = {
            let mut s = Session::new(&store);
            let step_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(step as u64);
            let (_, parts) = model.loss(&mut s, clip, step_seed)?;
            let value = |v| s.value(v).item();
            let rec = StepRecord {
                step,
                clip: idx,
                lr,
                seg: value(parts.seg),
                align: parts.align.map(value),
                aux: parts.aux.map(value),
                total: value(parts.total),
                grad_norm: 0.0,
            };
            if !rec.total.is_finite() {
                return Err(nan_error(step, idx, clip, &rec));
            }
            let g = s.backward(parts.total)?;
            (rec, s.param_grads(&g))
        };
        let norm = clip_global_norm(&mut grads, cfg.grad_clip);
        let rec = StepRecord { grad_norm: norm, ..rec };
        if !norm.is_finite() {
            return Err(nan_error(step, idx, clip, &rec));
        }
        opt.step(&mut store, &grads, lr);
        emit(rec.line(), &mut log);
        history.push(rec);
        let done = step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.steps && !val.is_empty() {
            let ev = evaluate(&model, &store, val)?;
            emit(format!("eval step {done} {}", ev.report.key_values().trim_end().replace('\n', " ")), &mut log);
        }
    }
    let final_eval = if val.is_empty() { None } else { Some(evaluate(&model, &store, val)?) };
    if let Some(ev) = &final_eval {
        emit(format!("eval step {} {}", cfg.steps, ev.report.key_values().trim_end().replace('\n', " ")), &mut log);
    }
    Ok(TrainOutcome { model, store, history, log, final_eval })
}

fn nan_error(step: usize, idx: usize, clip: &ClipSample, rec: &StepRecord) -> Error {
    Error::Numerical(format!(
        "non-finite loss or gradient at step {step}, batch clip {idx} (text {:?}, {} frames {}x{}): {}",
        clip.text,
        clip.frames,
        clip.height,
        clip.width,
        rec.line()
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// `(clip, frame, score)` for every annotated frame.
    pub frames: Vec<(usize, usize, FrameScore)>,
}

impl Evaluation {
    /// Human table, `key = value` metrics, then one `frame.<clip>.<t> = inter union` line per frame.
    pub fn to_text(&self) -> String {
        let mut s = self.report.table();
        s.push('\n');
        s.push_str(&self.report.key_values());
        for (k, t, f) in &self.frames {
            writeln!(s, "frame.{k}.{t} = {} {}", f.inter, f.union).unwrap();
        }
        s
    }
}

pub fn evaluate(model: &Model, store: &ParamStore, clips: &[ClipSample]) -> Result<Evaluation> {
    let mut frames = Vec::new();
    for (k, clip) in clips.iter().enumerate() {
        let pred = model.predict(store, clip)?;
        let plane = clip.height * clip.width;
        for t in 0..clip.frames {
            frames.push((k, t, FrameScore::new(&pred[t * plane..(t + 1) * plane], clip.mask(t))?));
        }
    }
    let scores: Vec<FrameScore> = frames.iter().map(|f| f.2).collect();
    Ok(Evaluation { report: MetricsReport::from_scores(&scores)?, frames })
}

/// Reads back the per-frame lines of [`Evaluation::to_text`].
pub fn parse_frame_scores(report: &str) -> Result<Vec<FrameScore>> {
    report
        .lines()
        .filter(|l| l.starts_with("frame."))
        .map(|l| {
            let v = l.split_once('=').map(|x| x.1).unwrap_or("");
            let mut it = v.split_whitespace().map(str::parse::<u64>);
            match (it.next(), it.next()) {
                (Some(Ok(inter)), Some(Ok(union))) => Ok(FrameScore { inter, union }),
                _ => Err(Error::Format(format!("bad frame line {l:?}"))),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct LadderRow {
    pub preset: String,
    pub report: MetricsReport,
}

/// Trains every preset with the same config and data, returns one row per preset.
pub fn run_ablation_ladder(
    cfg: &RunConfig,
    presets: &[&str],
    train_set: &[ClipSample],
    val: &[ClipSample],
    sink: &mut dyn FnMut(&str),
) -> Result<Vec<LadderRow>> {
    let mut rows = Vec::new();
    for &p in presets {
        let abl = AblationConfig::preset(p)?;
        sink(&format!("preset {p}"));
        let out = train(cfg, abl, train_set, val, sink)?;
        let ev = out.final_eval.ok_or_else(|| Error::Usage("ablation needs validation clips".into()))?;
        rows.push(LadderRow { preset: p.to_string(), report: ev.report });
    }
    Ok(rows)
}

/// Aligned table with mean IoU, overall IoU and mAP per preset, and deltas
/// against the first row and the previous row.
pub fn ladder_table(rows: &[LadderRow]) -> String {
    let mut s = format!(
        "{:<12}{:>10}{:>10}{:>10}{:>12}{:>12}\n",
        "preset", "mean_iou", "overall", "mAP", "d_first", "d_prev"
    );
    for (i, r) in rows.iter().enumerate() {
        let d0 = r.report.mean_iou - rows[0].report.mean_iou;
        let dp = if i == 0 { 0.0 } else { r.report.mean_iou - rows[i - 1].report.mean_iou };
        writeln!(
            s,
            "{:<12}{:>10.4}{:>10.4}{:>10.4}{:>+12.4}{:>+12.4}",
            r.preset, r.report.mean_iou, r.report.overall_iou, r.report.map_50_95, d0, dp
        )
        .unwrap();
    }
    s
}
