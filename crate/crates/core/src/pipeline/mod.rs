//! Experiment orchestration: configuration, the two-stage grid, and the
//! command-line front end.

pub mod cli;
mod config;
mod run;

pub use config::{Ablation, CorpusSource, ExperimentConfig, FileCorpus, PRESETS};
pub use run::{
    build_split, cell_dir, evaluate_checkpoint, load_generator, run_cell, run_experiment, run_experiment_on,
    run_generation, run_projection, run_synthesis, write_json, CellRecord, CheckpointContext, CheckpointPaths,
    RunRecord, StageTimings, ARTIFACT_VERSION,
};
