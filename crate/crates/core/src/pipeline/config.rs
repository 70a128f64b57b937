use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_corpus, synth_corpus, Corpus, CorpusPaths, SplitOptions, SynthSpec};
use crate::error::{Error, Result};
use crate::generation::{GenArch, GenHyperParams};
use crate::projection::ProjHyperParams;

/// Where the corpus comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic(SynthSpec),
    Files(FileCorpus),
}

/// Embedding files on disk. Each path defaults to its standard name inside
/// `dir`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileCorpus {
    pub name: Option<String>,
    pub dir: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub attrs: Option<PathBuf>,
    pub attr_ids: Option<PathBuf>,
}

impl FileCorpus {
    pub fn paths(&self) -> Result<CorpusPaths> {
        let base = self.dir.as_ref().map(CorpusPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: Option<&PathBuf>, what: &str| {
            explicit
                .clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| Error::config(format!("corpus.files needs `dir` or `{what}`")))
        };
        Ok(CorpusPaths {
            image: pick(&self.image, base.as_ref().map(|b| &b.image), "image")?,
            text: pick(&self.text, base.as_ref().map(|b| &b.text), "text")?,
            labels: pick(&self.labels, base.as_ref().map(|b| &b.labels), "labels")?,
            attrs: pick(&self.attrs, base.as_ref().map(|b| &b.attrs), "attrs")?,
            attr_ids: pick(&self.attr_ids, base.as_ref().map(|b| &b.attr_ids), "attr_ids")?,
        })
    }

    fn rebase(&mut self, root: &Path) {
        for p in [
            &mut self.dir,
            &mut self.image,
            &mut self.text,
            &mut self.labels,
            &mut self.attrs,
            &mut self.attr_ids,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
    }
}

/// Ablation switches. All off is the full method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Drop the VAE terms and train a plain conditional WGAN-GP.
    pub no_vae: bool,
    /// Skip stage one; the projection trains on real data only.
    pub no_generation: bool,
    /// Use the projected features directly instead of the gated fusion.
    pub no_gate: bool,
    pub no_l1: bool,
    pub no_l2: bool,
    pub no_l3: bool,
}

impl Ablation {
    /// Projection hyperparameters with switched-off terms zeroed.
    pub fn apply(&self, hp: &ProjHyperParams) -> ProjHyperParams {
        let mut hp = hp.clone();
        if self.no_l1 {
            hp.alpha = 0.0;
        }
        if self.no_l2 {
            hp.beta = 0.0;
        }
        if self.no_l3 {
            hp.gamma = 0.0;
        }
        hp
    }
}

/// A fully resolved experiment. Every field is explicit after loading, so the
/// serialized form reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name of the preset the file was layered on.
    pub preset: String,
    pub corpus: CorpusSource,
    pub x_shots: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Pseudo pairs generated per target class.
    pub gen_num: usize,
    pub split: SplitOptions,
    pub gen_arch: GenArch,
    pub generation: GenHyperParams,
    pub projection: ProjHyperParams,
    pub ablation: Ablation,
    pub output_dir: PathBuf,
    /// Run grid cells on worker threads.
    pub parallel: bool,
}

pub const PRESETS: [&str; 5] = ["synthetic", "wikipedia", "pascal", "nuswide", "nuswide10k"];

fn preset_toml(name: &str) -> Result<&'static str> {
    Ok(match name {
        "synthetic" => SYNTHETIC,
        "wikipedia" => WIKIPEDIA,
        "pascal" => PASCAL,
        "nuswide" => NUSWIDE,
        "nuswide10k" => NUSWIDE10K,
        other => {
            return Err(Error::config(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    })
}

const SYNTHETIC: &str = r#"
preset = "synthetic"
x_shots = [0, 1, 3, 5, 7]
seeds = [0, 1, 2]
gen_num = 30
output_dir = "runs/synthetic"
parallel = true

[corpus.synthetic]
n_classes = 8
per_class = 50
dim = 64
modality_gap = 1.0
noise_sigma = 0.05
seed = 0
prototype_rank = 3
normalize = true

[split]
query_fraction = 0.5
source_holdout = 0.2
shots_in_gallery = false

[gen_arch]
enc_hidden = [128, 96, 64]
latent_dim = 32
gen_hidden = [128]
disc_hidden = [128]

[generation]
lambda_gp = 10.0
critic_steps = 5
lr = 1e-3
batch = 64
epochs = 200
seed = 0

[projection]
alpha = 1.0
beta = 0.1
gamma = 0.1
tau = 1.0
exclude_self = true
lr = 1e-3
batch = 64
epochs = 100
seed = 0

[ablation]
"#;

// Real-embedding presets: 1,024-d features, full-size networks, batch sizes,
// learning rates and per-class generation counts of the published setups.
const REAL_COMMON: &str = r#"
x_shots = [0, 1, 3, 5, 7]
seeds = [0]
parallel = false

[corpus.files]
dir = "data"

[split]

[gen_arch]
enc_hidden = [1024, 800, 512]
latent_dim = 512
gen_hidden = [800]
disc_hidden = [1024]

[generation]
lambda_gp = 10.0
critic_steps = 5
epochs = 100
seed = 0

[projection]
alpha = 1.0
beta = 1.0
gamma = 1.0
tau = 0.1
exclude_self = true
epochs = 50
seed = 0

[ablation]
"#;

const WIKIPEDIA: &str = r#"
preset = "wikipedia"
gen_num = 70
output_dir = "runs/wikipedia"
[generation]
batch = 256
lr = 1e-3
[projection]
batch = 256
lr = 1e-3
"#;

const PASCAL: &str = r#"
preset = "pascal"
gen_num = 30
output_dir = "runs/pascal"
[generation]
batch = 64
lr = 1e-3
[projection]
batch = 64
lr = 4e-4
"#;

const NUSWIDE: &str = r#"
preset = "nuswide"
gen_num = 500
output_dir = "runs/nuswide"
[generation]
batch = 512
lr = 2e-3
[projection]
batch = 512
lr = 4e-4
"#;

const NUSWIDE10K: &str = r#"
preset = "nuswide10k"
gen_num = 300
output_dir = "runs/nuswide10k"
[generation]
batch = 2048
lr = 1e-3
[projection]
batch = 2048
lr = 5e-3
"#;

fn parse(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::config(format!("invalid TOML: {e}")))
}

/// Overlays `top` onto `base`, recursing into tables. `corpus` is replaced
/// whole, since its variants are mutually exclusive.
fn merge(base: &mut toml::Table, top: toml::Table, depth: usize) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if !(depth == 0 && k == "corpus") => {
                merge(b, t, depth + 1)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let mut table = parse(SYNTHETIC)?;
    if name != "synthetic" {
        merge(&mut table, parse(REAL_COMMON)?, 0);
        merge(&mut table, parse(preset_toml(name)?)?, 0);
    }
    Ok(table)
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_table(preset_table(name)?)
    }

    /// Parses a config file's text, layering it over the preset it names
    /// (`synthetic` when none is named). Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user = parse(text)?;
        let name = match user.get("preset") {
            None => "synthetic".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::config("`preset` must be a string")),
        };
        let mut table = preset_table(&name)?;
        merge(&mut table, user, 0);
        Self::from_table(table)
    }

    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let root = path.parent().unwrap_or(Path::new("."));
        if let CorpusSource::Files(f) = &mut cfg.corpus {
            f.rebase(root);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = root.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_shots.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("x_shots and seeds must be non-empty"));
        }
        if self.gen_num == 0 {
            return Err(Error::config("gen_num must be positive"));
        }
        let q = self.split.query_fraction;
        let h = self.split.source_holdout;
        if !(0.0..=1.0).contains(&q) || !(0.0..1.0).contains(&h) {
            return Err(Error::config("split fractions must lie in [0, 1]"));
        }
        self.gen_arch.validate()?;
        self.generation.validate()?;
        self.projection.validate()?;
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        match &self.corpus {
            CorpusSource::Synthetic(spec) => synth_corpus(spec),
            CorpusSource::Files(f) => {
                let name = f.name.clone().unwrap_or_else(|| self.preset.clone());
                load_corpus(&f.paths()?, name)
            }
        }
    }
}
