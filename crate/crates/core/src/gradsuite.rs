//! Named finite-difference checks over every block and a micro model.
//!
//! Each check registers its inputs as parameters, so input gradients are
//! checked alongside weights, and contracts vector outputs with a fixed
//! random probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{cross_vision_loss, sample_pairs, vision_language_loss, AlignProj};
use crate::autodiff::{finite_diff_check, GradCheckOptions, GradCheckReport, Reduction, Var};
use crate::config::{AblationConfig, RunConfig};
use crate::error::{Error, Result};
use crate::lgff::{Decoder, DecoderKind};
use crate::mmvt::{Mmvt, MmvtVariant, ModalTokenBundle};
use crate::model::Model;
use crate::nn::{Aspp, Conv, LayerNorm, Mlp, Msa};
use crate::params::{Init, ParamId, ParamStore, Session};
use crate::tensor::Tensor;
use crate::world::scene::generate_clip_with_len;
use crate::world::{ObjectSpec, SceneSpec, Shape};

pub const CHECKS: [&str; 12] = [
    "msa",
    "layer_norm",
    "mlp",
    "conv",
    "upsample",
    "aspp",
    "mmvt_layer",
    "lgff_level",
    "align_al",
    "align_ml",
    "align_am",
    "model",
];

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{:<12} {} max_rel_error {:.3e} tol {:.0e} ({:.2}s)",
            self.name,
            if self.report.pass { "PASS" } else { "FAIL" },
            self.report.max_rel_error,
            self.report.tol,
            self.seconds
        )
    }
}

/// Runs the named checks (all of them when `only` is `None`).
pub fn run_suite(only: Option<&str>, tol: f64) -> Result<Vec<CheckResult>> {
    let names: Vec<&str> = match only {
        Some(n) if CHECKS.contains(&n) => vec![n],
        Some(n) => return Err(Error::Usage(format!("unknown gradcheck module {n:?} (one of {})", CHECKS.join(", ")))),
        None => CHECKS.to_vec(),
    };
    names.into_iter().map(|n| run_check(n, tol)).collect()
}

pub fn run_check(name: &str, tol: f64) -> Result<CheckResult> {
    let start = std::time::Instant::now();
    let opts = GradCheckOptions { tol, ..GradCheckOptions::default() };
    let report = match name {
        "msa" => msa(&opts),
        "layer_norm" => layer_norm(&opts),
        "mlp" => mlp(&opts),
        "conv" => conv(&opts),
        "upsample" => upsample(&opts),
        "aspp" => aspp(&opts),
        "mmvt_layer" => mmvt_layer(&opts),
        "lgff_level" => lgff_level(&opts),
        "align_al" => align_vl(&opts, 0),
        "align_ml" => align_vl(&opts, 1),
        "align_am" => align_am(&opts),
        "model" => model(&opts),
        _ => return Err(Error::Usage(format!("unknown gradcheck module {name:?}"))),
    }?;
    Ok(CheckResult { name: name.to_string(), report, seconds: start.elapsed().as_secs_f64() })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], a: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-a..a))
}

fn randomise(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
}

fn input(store: &mut ParamStore, name: &str, shape: &[usize], seed: u64) -> Result<ParamId> {
    store.add(name, uniform(&mut ChaCha8Rng::seed_from_u64(seed), shape, 1.0))
}

fn probed(store: &mut ParamStore, opts: &GradCheckOptions, seed: u64, f: &dyn Fn(&mut Session) -> Result<Var>) -> Result<GradCheckReport> {
    finite_diff_check(
        store,
        |s| {
            let out = f(s)?;
            let shape = s.shape(out).to_vec();
            let r = s.constant(uniform(&mut ChaCha8Rng::seed_from_u64(seed), &shape, 1.0));
            let p = s.mul(out, r)?;
            Ok(s.sum(p))
        },
        opts,
    )
}

fn msa(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let m = Msa::new(&mut store, &mut Init::new(1), "msa", 4, 2)?;
    randomise(&mut store, 2);
    let x = input(&mut store, "x", &[5, 4], 3)?;
    probed(&mut store, opts, 4, &|s| {
        let xv = s.param(x);
        m.forward(s, xv)
    })
}

fn layer_norm(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 5)?;
    randomise(&mut store, 5);
    let x = input(&mut store, "x", &[4, 5], 6)?;
    probed(&mut store, opts, 7, &|s| {
        let xv = s.param(x);
        ln.forward(s, xv)
    })
}

fn mlp(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let m = Mlp::new(&mut store, &mut Init::new(8), "mlp", 4, 2)?;
    randomise(&mut store, 9);
    let x = input(&mut store, "x", &[3, 4], 10)?;
    probed(&mut store, opts, 11, &|s| {
        let xv = s.param(x);
        m.forward(s, xv)
    })
}

fn conv(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let mut init = Init::new(12);
    let strided = Conv::new(&mut store, &mut init, "conv.s2", 3, 4, 3, 2, 1)?;
    let dilated = Conv::new(&mut store, &mut init, "conv.d2", 4, 3, 3, 1, 2)?;
    let point = Conv::pointwise(&mut store, &mut init, "conv.pw", 3, 2)?;
    randomise(&mut store, 13);
    let x = input(&mut store, "x", &[2, 3, 8, 8], 14)?;
    probed(&mut store, opts, 15, &|s| {
        let xv = s.param(x);
        let y = strided.forward(s, xv)?;
        let y = dilated.forward(s, y)?;
        point.forward(s, y)
    })
}

fn upsample(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let x = input(&mut store, "x", &[2, 3, 3, 4], 16)?;
    probed(&mut store, opts, 17, &|s| {
        let xv = s.param(x);
        let a = s.upsample(xv, 2)?;
        s.upsample(a, 3)
    })
}

fn aspp(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let a = Aspp::new(&mut store, &mut Init::new(18), "aspp", 3, 4, &[1, 2])?;
    randomise(&mut store, 19);
    let x = input(&mut store, "x", &[2, 3, 5, 5], 20)?;
    probed(&mut store, opts, 21, &|s| {
        let xv = s.param(x);
        a.forward(s, xv)
    })
}

fn mmvt_layer(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (t, hw, l, c) = (2, 4, 3, 4);
    let mut store = ParamStore::new();
    let m = Mmvt::new(&mut store, &mut Init::new(22), "mmvt", c, 2, 2, 1, MmvtVariant::default())?;
    let za = input(&mut store, "z_a", &[t, hw, c], 23)?;
    let zm = input(&mut store, "z_m", &[t, hw, c], 24)?;
    let zl = input(&mut store, "z_l", &[l, c], 25)?;
    probed(&mut store, opts, 26, &|s| {
        let b = ModalTokenBundle { z_a: s.param(za), z_m: Some(s.param(zm)), z_l: s.param(zl) };
        let o = m.forward(s, &b)?;
        let zl = s.reshape(o.z_l, &[t * l, c])?;
        let za = s.reshape(o.z_a, &[t * hw, c])?;
        let zm = s.reshape(o.z_m.expect("motion tokens"), &[t * hw, c])?;
        s.concat(&[za, zm, zl], 0)
    })
}

fn lgff_level(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (t, c) = (2, 4);
    let mut store = ParamStore::new();
    let d = Decoder::new(&mut store, &mut Init::new(27), "dec", DecoderKind::Lgff, c, &[3, 5, 6], Some(&[2, 3, 4]))?;
    let fa = input(&mut store, "f_a", &[t, 3, 6, 6], 28)?;
    let fm = input(&mut store, "f_m", &[t, 2, 6, 6], 29)?;
    let prev = input(&mut store, "f_prev", &[t, c, 3, 3], 30)?;
    let cls = input(&mut store, "cls", &[c], 31)?;
    probed(&mut store, opts, 32, &|s| {
        let (a, m, p, l) = (s.param(fa), s.param(fm), s.param(prev), s.param(cls));
        let tr = d.fuse_level(s, 0, a, Some(m), p, l)?;
        let parts = [tr.f, tr.f_ea.expect("lgff trace"), tr.f_em.expect("lgff trace")];
        s.concat(&parts, 1)
    })
}

fn foreground(n: usize) -> Vec<bool> {
    (0..n).map(|i| i % 3 == 0 || i % 5 == 1).collect()
}

/// Appearance/language (`which = 0`) or motion/language (`which = 1`) term
/// through the projection heads.
fn align_vl(opts: &GradCheckOptions, which: usize) -> Result<GradCheckReport> {
    let (p, width, c) = (12, 3, 4);
    let mut store = ParamStore::new();
    let proj = AlignProj::new(&mut store, &mut Init::new(33), "align", width, c)?;
    randomise(&mut store, 34);
    let fv = input(&mut store, "f_v", &[p, 3 * width], 35)?;
    let cls = input(&mut store, "cls", &[width], 36)?;
    let fore = foreground(p);
    probed(&mut store, opts, 37, &|s| {
        let x = s.param(fv);
        let head = if which == 0 { &proj.a } else { &proj.m };
        let e = head.forward(s, x)?;
        let cl = s.param(cls);
        let l = proj.language(s, cl)?;
        vision_language_loss(s, e, l, &fore, Reduction::Mean)
    })
}

fn align_am(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (p, width, c) = (10, 3, 4);
    let mut store = ParamStore::new();
    let proj = AlignProj::new(&mut store, &mut Init::new(38), "align", width, c)?;
    randomise(&mut store, 39);
    let fa = input(&mut store, "f_a", &[p, 3 * width], 40)?;
    let fm = input(&mut store, "f_m", &[p, 3 * width], 41)?;
    let fore = foreground(p);
    let pairs = sample_pairs(p, &mut ChaCha8Rng::seed_from_u64(42));
    probed(&mut store, opts, 43, &|s| {
        let (a, m) = (s.param(fa), s.param(fm));
        let ea = proj.a.forward(s, a)?;
        let em = proj.m.forward(s, m)?;
        cross_vision_loss(s, ea, em, &fore, &pairs, Reduction::Mean)
    })
}

/// Full-model configuration for a one-frame 16×16 clip.
pub fn micro_config() -> RunConfig {
    RunConfig {
        frames: 1,
        height: 16,
        width: 16,
        channels: 8,
        align_dim: 8,
        heads: 2,
        text_width: 8,
        stem_stride: 1,
        enc_widths: [4, 4, 6, 6, 6],
        aspp_dilations: vec![1],
        ..RunConfig::default()
    }
}

fn model(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = micro_config();
    let target = ObjectSpec { shape: Shape::Square, color: 0, size: 6, start: (3, 5), velocity: (2, 1), is_target: true };
    let other = ObjectSpec { shape: Shape::Disk, color: 2, size: 5, start: (9, 1), velocity: (0, 0), is_target: false };
    let spec = SceneSpec::new(vec![other, target], cfg.height, cfg.width, cfg.frames, 0.05)?;
    let clip = generate_clip_with_len(&spec, 44, cfg.l_max)?;
    let (m, mut store) = Model::new(&cfg, AblationConfig::preset("B+M+T+L+A")?)?;
    // Zero biases on zero flow put ReLU inputs exactly on the kink.
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
    // A loss near 1 leaves central differences with ~1e-11 of roundoff, so
    // gradients below ~1e-7 are compared against a 1e-6 floor.
    let opts = GradCheckOptions { coords_per_param: 16, floor: 1e-6, ..opts.clone() };
    finite_diff_check(&mut store, |s| Ok(m.loss(s, &clip, 45)?.1.total), &opts)
}
