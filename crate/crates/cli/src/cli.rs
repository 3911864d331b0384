//! Command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use denseformer::backbone::{Mode, ModelConfig};
use denseformer::complexity::{count_dct_stack, count_model, count_transformer, table1};
use denseformer::dct::DctConfig;
use denseformer::metrics::Summary;
use denseformer::suites::all_suites;

use crate::config::RunConfig;
use crate::data::{fold_split, load_dataset, write_dataset};
use crate::error::write_atomic;
use crate::evaluate::evaluate;
use crate::synth::synth_dataset;
use crate::train::train;

#[derive(Parser, Debug)]
#[command(name = "hdenseformer", version, about = "Multimodal tumor segmentation with densely connected transformer embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and a run configuration template.
    Synth(SynthArgs),
    /// Train one cross-validation fold.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Print parameter and FLOP counts.
    Count(CountArgs),
    /// Run the 64-bit gradient check suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    #[value(name = "2d")]
    Planar,
    #[value(name = "3d")]
    Volumetric,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Planar => Mode::Planar,
            ModeArg::Volumetric => Mode::Volumetric,
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub cases: usize,
    #[arg(long, value_enum, default_value = "3d")]
    pub mode: ModeArg,
    /// Comma-separated spatial extents, each a multiple of 16.
    #[arg(long, value_delimiter = ',', default_value = "32,32,32")]
    pub extents: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub modalities: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// With `--fold`, restricts scoring to that fold's held-out cases.
    #[arg(long, requires = "fold")]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "config")]
    pub fold: Option<usize>,
    /// Report table destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    /// Compare a 12-layer transformer with three stacked dense blocks at
    /// widths 256 and 512.
    #[arg(long)]
    pub table1: bool,
    /// Token width for the transformer and dense-stack reports.
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 1024)]
    pub tokens: usize,
    /// Full-model configuration to count; defaults to a two-modality 3D
    /// model at 144 cubed.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Run every suite (the only mode).
    #[arg(long, required = true)]
    pub all: bool,
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let outcome = train(&cfg, a.fold)?;
            println!(
                "fold {} epochs {} best_epoch {} best_val_dsc {:.6}{}",
                a.fold,
                outcome.epochs_run,
                outcome.best_epoch,
                outcome.best_val_dsc,
                if outcome.stopped_early { " (early stop)" } else { "" }
            );
            println!("checkpoint {}", outcome.checkpoint.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(a) => eval(a),
        Command::Count(a) => count(a),
        Command::Gradcheck(_) => gradcheck(),
    }
}

fn synth(a: SynthArgs) -> anyhow::Result<ExitCode> {
    let mode = Mode::from(a.mode);
    let cases = synth_dataset(a.cases, mode, &a.extents, a.modalities, a.seed)?;
    write_dataset(&a.out, &cases)?;
    let mut cfg = RunConfig::new(ModelConfig::new(mode, a.modalities, &a.extents), ".", "runs");
    cfg.seed = a.seed;
    let path = a.out.join("run.toml");
    write_atomic(&path, cfg.to_toml().as_bytes())?;
    println!("wrote {} cases and {}", cases.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let mut cases = load_dataset(&a.data)?;
    if let (Some(cfg_path), Some(fold)) = (&a.config, a.fold) {
        let cfg = RunConfig::load(cfg_path)?;
        let (_, held_out) = fold_split(cases.len(), cfg.train.folds, fold, cfg.seed)?;
        if held_out.is_empty() {
            bail!("fold {fold} of {} has no held-out cases", cfg.train.folds);
        }
        cases = held_out.into_iter().map(|i| cases[i].clone()).collect();
    }
    let report = evaluate(&a.checkpoint, &cases, Some(&a.out))?;
    let line = |name: &str, s: Option<Summary>| match s {
        Some(s) => println!("{name:<5} {:.6} ± {:.6} (n={})", s.mean, s.std, s.count),
        None => println!("{name:<5} undefined"),
    };
    line("dsc", report.dsc());
    line("ji", report.jaccard());
    line("hd95", report.hd95());
    println!("report {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn model_for_count(path: Option<&Path>) -> anyhow::Result<ModelConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?.model,
        None => ModelConfig::new(Mode::Volumetric, 2, &[144, 144, 144]),
    })
}

fn count(a: CountArgs) -> anyhow::Result<ExitCode> {
    if a.table1 {
        print!("{}", table1(&[256, 512], a.tokens)?);
        return Ok(ExitCode::SUCCESS);
    }
    let transformer = count_transformer(a.dim, 12, 2.0, 4, a.tokens)?;
    let stack = count_dct_stack(&DctConfig::new(a.dim), 3, a.tokens)?;
    let model = count_model(&model_for_count(a.config.as_deref())?)?;
    println!("# transformer (12 layers, width {}, {} tokens)", a.dim, a.tokens);
    print!("{transformer}");
    println!("# dct-stack (3 blocks, width {}, {} tokens)", a.dim, a.tokens);
    print!("{stack}");
    println!("# full-model");
    print!("{model}");
    Ok(ExitCode::SUCCESS)
}

fn gradcheck() -> anyhow::Result<ExitCode> {
    let results = all_suites();
    let mut failed = 0;
    for r in &results {
        let rep = &r.report;
        println!(
            "{:<4} {:<10} {:<28} max_rel {:.3e} tol {:.0e} checked {} kink_skipped {}",
            if rep.passed { "ok" } else { "FAIL" },
            r.suite,
            r.case,
            rep.max_relative_error,
            rep.tolerance,
            rep.checked,
            rep.kink_skipped
        );
        if let Some(f) = &rep.failure {
            println!("     {f}");
        }
        failed += usize::from(!rep.passed);
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
