//! `motionseg` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use motionseg::checkpoint::Checkpoint;
use motionseg::config::{AblationConfig, RunConfig, LADDER};
use motionseg::gradsuite;
use motionseg::train::{evaluate, ladder_table, load_datasets, run_ablation_ladder, train};
use motionseg::world::io::{read_dataset, write_dataset};
use motionseg::world::{generate_dataset, Preset};
use motionseg::Error;

#[derive(Parser)]
#[command(name = "motionseg", version, about = "Text-referred video segmentation on synthetic moving shapes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a clip dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        clips: usize,
        #[arg(long, default_value = "easy")]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config supplying canvas size, frame count and shape ranges.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one ablation preset; writes checkpoint, log and report to OUT.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "B+M+T+L+A")]
        ablation: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// One of the check names; all of them when omitted.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train several presets on shared data and tabulate them.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',')]
        presets: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(RunConfig::parse(&text)?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { out, clips, preset, seed, config } => {
            let cfg = load_config(config.as_deref())?;
            let data = generate_dataset(preset, &cfg.scene(), clips, seed, cfg.l_max)?;
            write_dataset(&out, &data)?;
            println!("wrote {clips} {} clips to {}", preset.name(), out.display());
        }
        Cmd::Train { config, ablation, out } => {
            let cfg = load_config(config.as_deref())?;
            let abl = AblationConfig::preset(&ablation)?;
            let (tr, va) = load_datasets(&cfg)?;
            fs::create_dir_all(&out)?;
            let result = train(&cfg, abl, &tr, &va, &mut |l| println!("{l}"))?;
            write(&out.join("train.log"), &(result.log.join("\n") + "\n"))?;
            write(&out.join("config.txt"), &cfg.to_text())?;
            Checkpoint::from_store(&cfg, &ablation, &result.store).save(&out.join("model.ckpt"))?;
            if let Some(ev) = result.final_eval {
                write(&out.join("report.txt"), &ev.to_text())?;
                print!("{}", ev.report.table());
            }
        }
        Cmd::Eval { checkpoint, data, report } => {
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let (model, store) = ck.into_model()?;
            let clips = read_dataset(&data, model.cfg.l_max)?;
            for clip in &clips {
                model.check_clip(clip)?;
            }
            let ev = evaluate(&model, &store, &clips)?;
            write(&report, &ev.to_text())?;
            print!("{}", ev.report.table());
        }
        Cmd::Gradcheck { module, tol } => {
            let results = gradsuite::run_suite(module.as_deref(), tol)?;
            for r in &results {
                println!("{}", r.line());
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.report.pass).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(Error::Numerical(format!("gradient check failed: {}", failed.join(", "))).into());
            }
        }
        Cmd::Ablate { config, presets, out } => {
            let cfg = load_config(config.as_deref())?;
            let presets = presets.unwrap_or_else(|| LADDER.iter().map(|s| s.to_string()).collect());
            for p in &presets {
                AblationConfig::preset(p)?;
            }
            let names: Vec<&str> = presets.iter().map(String::as_str).collect();
            let (tr, va) = load_datasets(&cfg)?;
            fs::create_dir_all(&out)?;
            let mut log = String::new();
            let rows = run_ablation_ladder(&cfg, &names, &tr, &va, &mut |l| {
                if !l.starts_with("step ") {
                    println!("{l}");
                }
                log.push_str(l);
                log.push('\n');
            })?;
            let mut report = ladder_table(&rows);
            for r in &rows {
                report.push('\n');
                report.push_str(&format!("[{}]\n", r.preset));
                report.push_str(&r.report.key_values());
            }
            write(&out.join("ablate.log"), &log)?;
            write(&out.join("ladder.txt"), &report)?;
            print!("{}", ladder_table(&rows));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) => e.exit_code() as u8,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
