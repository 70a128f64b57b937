use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use super::config::{Ablation, CorpusSource, ExperimentConfig};
use super::run::{
    build_split, cell_dir, evaluate_checkpoint, run_experiment, run_projection, run_synthesis, write_json,
    CheckpointContext,
};
use crate::data::{load_corpus_dir, synth_corpus, write_corpus, SynthSpec};
use crate::error::{Error, Result};
use crate::retrieval::{evaluate_domain, Domain};

#[derive(Debug, Parser)]
#[command(name = "xshot", version, about = "X-shot cross-modal retrieval with generated target features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus in the embedding file format.
    MakeData(MakeDataArgs),
    /// Run the full two-stage grid.
    Run(RunArgs),
    /// Train the generators for one cell and write pseudo features.
    Synth(RunArgs),
    /// Train the projection for one cell, optionally on a pseudo corpus.
    TrainProj(TrainProjArgs),
    /// Evaluate a projection checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    /// Config whose `corpus.synthetic` section describes the data.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblationFlags {
    #[arg(long)]
    pub no_vae: bool,
    #[arg(long)]
    pub no_generation: bool,
    #[arg(long)]
    pub no_gate: bool,
    #[arg(long)]
    pub no_l1: bool,
    #[arg(long)]
    pub no_l2: bool,
    #[arg(long)]
    pub no_l3: bool,
}

impl AblationFlags {
    fn merge_into(&self, a: &mut Ablation) {
        a.no_vae |= self.no_vae;
        a.no_generation |= self.no_generation;
        a.no_gate |= self.no_gate;
        a.no_l1 |= self.no_l1;
        a.no_l2 |= self.no_l2;
        a.no_l3 |= self.no_l3;
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config; the synthetic preset when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict the grid to this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict the grid to this shot count.
    #[arg(long)]
    pub x_shot: Option<usize>,
    /// Corpus directory in the embedding file format, overriding the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub ablation: AblationFlags,
}

#[derive(Debug, Args)]
pub struct TrainProjArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Pseudo corpus directory written by `synth`.
    #[arg(long)]
    pub pseudo: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Where to write the JSON report; next to the checkpoint by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn resolve(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset("synthetic")?,
    };
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(x) = args.x_shot {
        cfg.x_shots = vec![x];
    }
    if let Some(d) = &args.data {
        cfg.corpus = CorpusSource::Files(super::config::FileCorpus {
            dir: Some(d.clone()),
            ..Default::default()
        });
    }
    args.ablation.merge_into(&mut cfg.ablation);
    cfg.validate()?;
    Ok(cfg)
}

fn single_cell(cfg: &ExperimentConfig) -> Result<(usize, u64)> {
    match (cfg.x_shots.as_slice(), cfg.seeds.as_slice()) {
        ([x], [s]) => Ok((*x, *s)),
        _ => Err(Error::config("this command runs one cell; pass --x-shot and --seed")),
    }
}

fn make_data(args: &MakeDataArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(p) => match ExperimentConfig::load(p)?.corpus {
            CorpusSource::Synthetic(s) => s,
            CorpusSource::Files(_) => return Err(Error::config("config does not describe a synthetic corpus")),
        },
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.n_classes {
        spec.n_classes = n;
    }
    if let Some(n) = args.per_class {
        spec.per_class = n;
    }
    if let Some(d) = args.dim {
        spec.dim = d;
        if spec.prototype_rank > d {
            spec.prototype_rank = d;
        }
    }
    let corpus = synth_corpus(&spec)?;
    write_corpus(&corpus, &args.out)?;
    println!("wrote {} instances of dim {} to {}", corpus.len(), corpus.dim(), args.out.display());
    Ok(())
}

fn run(args: &RunArgs) -> Result<bool> {
    let cfg = resolve(args)?;
    let record = run_experiment(&cfg)?;
    for cell in &record.cells {
        match (&cell.error, &cell.target, &cell.raw_baseline) {
            (None, Some(t), Some(raw)) => println!(
                "x={} seed={}: target img2txt {:.4} txt2img {:.4} avg {:.4} (raw features {:.4})",
                cell.x_shot, cell.seed, t.img2txt.map, t.txt2img.map, t.avg, raw.avg
            ),
            (Some(e), _, _) => println!("x={} seed={}: FAILED: {e}", cell.x_shot, cell.seed),
            _ => {}
        }
    }
    println!("run record: {}", cfg.output_dir.join("run.json").display());
    Ok(record.failed_cells() == 0)
}

fn synth(args: &RunArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let (x, seed) = single_cell(&cfg)?;
    let corpus = cfg.load_corpus()?;
    let out = cell_dir(&cfg, x, seed);
    let pseudo = run_synthesis(&cfg, &corpus, x, seed, &out)?;
    println!("wrote {} pseudo pairs to {}", pseudo.len(), out.join("pseudo").display());
    Ok(())
}

fn train_proj(args: &TrainProjArgs) -> Result<()> {
    let cfg = resolve(&args.run)?;
    let (x, seed) = single_cell(&cfg)?;
    let corpus = cfg.load_corpus()?;
    let pseudo = args.pseudo.as_ref().map(load_corpus_dir).transpose()?;
    let split = build_split(&cfg, &corpus, x, seed)?;
    let (model, curves) = run_projection(&cfg, &corpus, &split, pseudo.as_ref(), seed)?;
    let out = cell_dir(&cfg, x, seed);
    std::fs::create_dir_all(&out)?;
    let ctx = CheckpointContext {
        split: split.clone(),
        corpus: corpus.name.clone(),
        fingerprint: cfg.fingerprint()?,
    };
    let path = out.join("projection.ckpt");
    model.to_checkpoint(serde_json::to_value(ctx)?).save(&path)?;
    let target = evaluate_domain(&model, &split, &corpus, Domain::Target)?;
    write_json(
        &out.join("projection_report.json"),
        &serde_json::json!({"curves": curves, "target": target}),
    )?;
    println!("target avg mAP {:.4}; checkpoint {}", target.avg, path.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let corpus = match (&args.data, &args.config) {
        (Some(d), _) => load_corpus_dir(d)?,
        (None, Some(c)) => ExperimentConfig::load(c)?.load_corpus()?,
        (None, None) => ExperimentConfig::preset("synthetic")?.load_corpus()?,
    };
    let (target, source, ctx) = evaluate_checkpoint(&args.checkpoint, &corpus)?;
    for r in [&target, &source] {
        println!(
            "{:?}: {:?} {:.4}, {:?} {:.4}, avg {:.4}",
            r.domain, r.img2txt.direction, r.img2txt.map, r.txt2img.direction, r.txt2img.map, r.avg
        );
    }
    let out = args.out.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval_report.json")
    });
    write_json(
        &out,
        &serde_json::json!({
            "checkpoint": args.checkpoint,
            "x_shot": ctx.split.x_shot,
            "seed": ctx.split.seed,
            "split": ctx.split,
            "fingerprint": ctx.fingerprint,
            "target": target,
            "source": source,
        }),
    )?;
    info!("report written to {}", out.display());
    Ok(())
}

/// Runs a parsed command line. `Ok(false)` means some grid cell failed.
pub fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::MakeData(a) => make_data(a).map(|_| true),
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a).map(|_| true),
        Command::TrainProj(a) => train_proj(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
