use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::checkpoint::Checkpoint;
use crate::data::{split_xshot_with, write_corpus, Corpus, XShotSplit};
use crate::error::{Error, Result};
use crate::generation::{synthesize_target_set, train_generation, GenCurves, TrainedGenerators, VaeGanModel};
use crate::projection::{train_projection, ProjCurves, ProjectionModel};
use crate::retrieval::{evaluate_domain, Domain, EvalReport, RawFeatures};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Wall-clock seconds per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub generation: f64,
    pub synthesis: f64,
    pub projection: f64,
    pub evaluation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPaths {
    pub image_generator: Option<PathBuf>,
    pub text_generator: Option<PathBuf>,
    pub projection: Option<PathBuf>,
}

/// Outcome of one `(x_shot, seed)` grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub x_shot: usize,
    pub seed: u64,
    pub error: Option<String>,
    /// Kept out of `report.json` so reports of identical runs are identical
    /// byte for byte; written to `timings.json` instead.
    #[serde(skip)]
    pub timings: StageTimings,
    pub checkpoints: CheckpointPaths,
    pub image_gen_curves: Option<GenCurves>,
    pub text_gen_curves: Option<GenCurves>,
    pub proj_curves: Option<ProjCurves>,
    /// Parameter fingerprints of the stage-one models before and after the
    /// projection stage.
    pub stage1_checksums: Option<[(String, String); 2]>,
    pub n_pseudo: usize,
    pub target: Option<EvalReport>,
    pub source: Option<EvalReport>,
    /// Retrieval on the untouched input features, same split.
    pub raw_baseline: Option<EvalReport>,
}

impl CellRecord {
    fn new(x_shot: usize, seed: u64) -> Self {
        Self {
            x_shot,
            seed,
            error: None,
            timings: StageTimings::default(),
            checkpoints: CheckpointPaths::default(),
            image_gen_curves: None,
            text_gen_curves: None,
            proj_curves: None,
            stage1_checksums: None,
            n_pseudo: 0,
            target: None,
            source: None,
            raw_baseline: None,
        }
    }

    pub fn target_avg(&self) -> Option<f64> {
        self.target.as_ref().map(|r| r.avg)
    }

    /// The retrieval results alone, without timings or paths.
    pub fn reports(&self) -> (Option<&EvalReport>, Option<&EvalReport>, Option<&EvalReport>) {
        (self.target.as_ref(), self.source.as_ref(), self.raw_baseline.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
}

impl RunRecord {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn cell(&self, x_shot: usize, seed: u64) -> Option<&CellRecord> {
        self.cells.iter().find(|c| c.x_shot == x_shot && c.seed == seed)
    }
}

/// Split descriptor stored alongside checkpoints so that `eval` can rebuild
/// the exact partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointContext {
    pub split: XShotSplit,
    pub corpus: String,
    pub fingerprint: String,
}

pub fn cell_dir(cfg: &ExperimentConfig, x_shot: usize, seed: u64) -> PathBuf {
    cfg.output_dir.join(format!("x{x_shot}_seed{seed}"))
}

pub fn build_split(cfg: &ExperimentConfig, corpus: &Corpus, x_shot: usize, seed: u64) -> Result<XShotSplit> {
    split_xshot_with(corpus, x_shot, seed, cfg.split)
}

/// Stage one for a cell: trains both generators and synthesizes the pseudo
/// target set.
pub fn run_generation(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    split: &XShotSplit,
    seed: u64,
) -> Result<(TrainedGenerators, Corpus)> {
    let mut hp = cfg.generation.clone();
    hp.seed = seed;
    let trained = train_generation(split, corpus, &cfg.gen_arch, &hp, !cfg.ablation.no_vae)?;
    let pseudo = synthesize_target_set(
        &trained.image,
        &trained.text,
        &split.target_classes,
        corpus.class_attrs(),
        cfg.gen_num,
        seed,
    )?;
    Ok((trained, pseudo))
}

/// Stage two for a cell.
pub fn run_projection(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    split: &XShotSplit,
    pseudo: Option<&Corpus>,
    seed: u64,
) -> Result<(ProjectionModel, ProjCurves)> {
    let mut hp = cfg.ablation.apply(&cfg.projection);
    hp.seed = seed;
    train_projection(split, corpus, pseudo, &hp, !cfg.ablation.no_gate)
}

fn save(ck: &Checkpoint, path: PathBuf) -> Result<PathBuf> {
    ck.save(&path)?;
    Ok(path)
}

/// Runs one grid cell. Failures are recorded in the returned record.
pub fn run_cell(cfg: &ExperimentConfig, corpus: &Corpus, fingerprint: &str, x_shot: usize, seed: u64) -> CellRecord {
    let mut rec = CellRecord::new(x_shot, seed);
    if let Err(e) = fill_cell(cfg, corpus, fingerprint, &mut rec) {
        error!("cell x={x_shot} seed={seed} failed: {e}");
        rec.error = Some(e.to_string());
    }
    rec
}

fn fill_cell(cfg: &ExperimentConfig, corpus: &Corpus, fingerprint: &str, rec: &mut CellRecord) -> Result<()> {
    let (x_shot, seed) = (rec.x_shot, rec.seed);
    let dir = cell_dir(cfg, x_shot, seed);
    fs::create_dir_all(&dir)?;
    let split = build_split(cfg, corpus, x_shot, seed)?;
    let context = serde_json::to_value(CheckpointContext {
        split: split.clone(),
        corpus: corpus.name.clone(),
        fingerprint: fingerprint.to_string(),
    })?;

    let mut stage1: Option<TrainedGenerators> = None;
    let mut pseudo = None;
    if !cfg.ablation.no_generation {
        let t = Instant::now();
        let mut hp = cfg.generation.clone();
        hp.seed = seed;
        let trained = train_generation(&split, corpus, &cfg.gen_arch, &hp, !cfg.ablation.no_vae)?;
        rec.timings.generation = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let set = synthesize_target_set(
            &trained.image,
            &trained.text,
            &split.target_classes,
            corpus.class_attrs(),
            cfg.gen_num,
            seed,
        )?;
        rec.timings.synthesis = t.elapsed().as_secs_f64();
        rec.n_pseudo = set.len();
        rec.checkpoints.image_generator =
            Some(save(&trained.image.to_checkpoint(context.clone()), dir.join("image_generator.ckpt"))?);
        rec.checkpoints.text_generator =
            Some(save(&trained.text.to_checkpoint(context.clone()), dir.join("text_generator.ckpt"))?);
        rec.image_gen_curves = Some(trained.image_curves.clone());
        rec.text_gen_curves = Some(trained.text_curves.clone());
        stage1 = Some(trained);
        pseudo = Some(set);
    }
    let before = stage1
        .as_ref()
        .map(|s| (s.image.param_checksum(), s.text.param_checksum()));

    let t = Instant::now();
    let (model, curves) = run_projection(cfg, corpus, &split, pseudo.as_ref(), seed)?;
    rec.timings.projection = t.elapsed().as_secs_f64();
    rec.proj_curves = Some(curves);
    rec.checkpoints.projection = Some(save(&model.to_checkpoint(context), dir.join("projection.ckpt"))?);

    if let (Some(s), Some((img, txt))) = (&stage1, before) {
        rec.stage1_checksums = Some([
            (img, s.image.param_checksum()),
            (txt, s.text.param_checksum()),
        ]);
    }

    let t = Instant::now();
    rec.target = Some(evaluate_domain(&model, &split, corpus, Domain::Target)?);
    rec.source = Some(evaluate_domain(&model, &split, corpus, Domain::Source)?);
    rec.raw_baseline = Some(evaluate_domain(&RawFeatures, &split, corpus, Domain::Target)?);
    rec.timings.evaluation = t.elapsed().as_secs_f64();
    info!(
        "cell x={x_shot} seed={seed}: target avg mAP {:.4} (raw {:.4})",
        rec.target.as_ref().unwrap().avg,
        rec.raw_baseline.as_ref().unwrap().avg
    );
    Ok(())
}

/// Runs every `(x_shot, seed)` cell of the grid and writes `run.json` plus
/// one report per cell under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let corpus = cfg.load_corpus()?;
    run_experiment_on(cfg, &corpus)
}

pub fn run_experiment_on(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<RunRecord> {
    fs::create_dir_all(&cfg.output_dir)?;
    let fingerprint = cfg.fingerprint()?;
    let grid: Vec<(usize, u64)> = cfg
        .x_shots
        .iter()
        .flat_map(|&x| cfg.seeds.iter().map(move |&s| (x, s)))
        .collect();
    let cells: Vec<CellRecord> = if cfg.parallel {
        grid.par_iter()
            .map(|&(x, s)| run_cell(cfg, corpus, &fingerprint, x, s))
            .collect()
    } else {
        grid.iter()
            .map(|&(x, s)| run_cell(cfg, corpus, &fingerprint, x, s))
            .collect()
    };
    let record = RunRecord {
        version: ARTIFACT_VERSION.to_string(),
        fingerprint,
        config: cfg.clone(),
        cells,
    };
    for cell in &record.cells {
        let dir = cell_dir(cfg, cell.x_shot, cell.seed);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("report.json"), cell)?;
        write_json(&dir.join("timings.json"), &cell.timings)?;
    }
    write_json(&cfg.output_dir.join("run.json"), &record)?;
    fs::write(cfg.output_dir.join("config.resolved.toml"), cfg.to_toml_string()?)?;
    Ok(record)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

/// Stage one alone: trains the generators for one cell and writes the
/// checkpoints and pseudo corpus into `out`.
pub fn run_synthesis(cfg: &ExperimentConfig, corpus: &Corpus, x_shot: usize, seed: u64, out: &Path) -> Result<Corpus> {
    fs::create_dir_all(out)?;
    let split = build_split(cfg, corpus, x_shot, seed)?;
    let context = serde_json::to_value(CheckpointContext {
        split: split.clone(),
        corpus: corpus.name.clone(),
        fingerprint: cfg.fingerprint()?,
    })?;
    let (trained, pseudo) = run_generation(cfg, corpus, &split, seed)?;
    trained.image.to_checkpoint(context.clone()).save(&out.join("image_generator.ckpt"))?;
    trained.text.to_checkpoint(context).save(&out.join("text_generator.ckpt"))?;
    write_corpus(&pseudo, out.join("pseudo"))?;
    write_json(
        &out.join("generation_curves.json"),
        &serde_json::json!({"image": trained.image_curves, "text": trained.text_curves}),
    )?;
    Ok(pseudo)
}

/// Loads a projection checkpoint and evaluates it on the split it was
/// trained with.
pub fn evaluate_checkpoint(path: &Path, corpus: &Corpus) -> Result<(EvalReport, EvalReport, CheckpointContext)> {
    let (model, extra) = ProjectionModel::from_checkpoint(Checkpoint::load(path)?)?;
    let ctx: CheckpointContext = serde_json::from_value(extra)
        .map_err(|e| Error::Checkpoint(format!("checkpoint lacks a split descriptor: {e}")))?;
    let target = evaluate_domain(&model, &ctx.split, corpus, Domain::Target)?;
    let source = evaluate_domain(&model, &ctx.split, corpus, Domain::Source)?;
    Ok((target, source, ctx))
}

/// Loads a generator checkpoint with its stored split descriptor.
pub fn load_generator(path: &Path) -> Result<(VaeGanModel, CheckpointContext)> {
    let (model, extra) = VaeGanModel::from_checkpoint(Checkpoint::load(path)?)?;
    let ctx = serde_json::from_value(extra)
        .map_err(|e| Error::Checkpoint(format!("checkpoint lacks a split descriptor: {e}")))?;
    Ok((model, ctx))
}
