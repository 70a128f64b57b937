use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::data::{ClassId, Modality};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Linear, Mlp, Parameter, RealArray, Tape, Var};
use crate::retrieval::Embedder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjHyperParams {
    /// Classification weight.
    pub alpha: f64,
    /// Paired-distance weight.
    pub beta: f64,
    /// Contrastive weight.
    pub gamma: f64,
    pub tau: f64,
    /// Leave each anchor's similarity to itself out of the contrastive
    /// denominator.
    pub exclude_self: bool,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProjHyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            tau: 0.1,
            exclude_self: true,
            lr: 1e-3,
            batch: 64,
            epochs: 60,
            seed: 0,
        }
    }
}

impl ProjHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if !(self.lr > 0.0) || self.batch < 2 {
            return Err(Error::config("projection lr must be positive and batch at least 2"));
        }
        Ok(())
    }
}

/// Projector and gate for one modality.
#[derive(Clone, Debug)]
pub struct Branch {
    pub projector: Mlp,
    pub gate: Mlp,
}

/// Tape nodes of one fused batch.
#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub projected: Var,
    pub gate: Option<Var>,
    pub fused: Var,
}

impl Branch {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            projector: Mlp::new(&[dim, dim, dim], Activation::Relu, Activation::Identity, rng)?,
            gate: Mlp::new(&[2 * dim, dim, dim], Activation::Relu, Activation::Sigmoid, rng)?,
        })
    }

    /// `f = P(x)`, `g = Gate(x ++ f)`, `u = g * f + (1 - g) * x`. Without the
    /// gate, `u = f`.
    pub fn fuse(&self, tape: &mut Tape, x: Var, use_gate: bool) -> Result<Fused> {
        let f = self.projector.forward(tape, x)?;
        if !use_gate {
            return Ok(Fused {
                projected: f,
                gate: None,
                fused: f,
            });
        }
        let xf = tape.concat_cols(x, f)?;
        let g = self.gate.forward(tape, xf)?;
        let u = mix(tape, g, f, x)?;
        Ok(Fused {
            projected: f,
            gate: Some(g),
            fused: u,
        })
    }

    pub fn apply(&self, x: &RealArray, use_gate: bool) -> Result<RealArray> {
        let f = self.projector.apply(x)?;
        if !use_gate {
            return Ok(f);
        }
        let g = self.gate.apply(&RealArray::hstack(x, &f)?)?;
        Ok(mix_values(&g, &f, x))
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.projector.params().chain(self.gate.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.projector.params_mut().chain(self.gate.params_mut())
    }
}

/// `g * f + (1 - g) * x`.
pub fn mix(tape: &mut Tape, g: Var, f: Var, x: Var) -> Result<Var> {
    let gf = tape.mul(g, f)?;
    let neg = tape.scale(g, -1.0);
    let keep = tape.add_scalar(neg, 1.0);
    let rest = tape.mul(keep, x)?;
    tape.add(gf, rest)
}

/// Untaped `g * f + (1 - g) * x`, computed exactly as written so that
/// `g = 1` gives `f` and `g = 0` gives `x` bit for bit.
pub fn mix_values(g: &RealArray, f: &RealArray, x: &RealArray) -> RealArray {
    let gf = g.zip_map(f, |a, b| a * b);
    let rest = g.zip_map(x, |a, b| (1.0 - a) * b);
    gf.zip_map(&rest, |a, b| a + b)
}

/// Both modality branches plus the shared classifier head.
#[derive(Clone, Debug)]
pub struct ProjectionModel {
    pub dim: usize,
    /// Class ids in head-output order.
    pub classes: Vec<ClassId>,
    pub image: Branch,
    pub text: Branch,
    pub head: Linear,
    pub use_gate: bool,
    pub hp: ProjHyperParams,
}

impl ProjectionModel {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        mut classes: Vec<ClassId>,
        use_gate: bool,
        hp: ProjHyperParams,
        rng: &mut R,
    ) -> Result<Self> {
        classes.sort_unstable();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::config("projection needs at least one class"));
        }
        let image = Branch::new(dim, rng)?;
        let text = Branch::new(dim, rng)?;
        let head = Linear::new(dim, classes.len(), rng);
        Ok(Self {
            dim,
            classes,
            image,
            text,
            head,
            use_gate,
            hp,
        })
    }

    pub fn branch(&self, modality: Modality) -> &Branch {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    /// Position of each label in the head output.
    pub fn class_indices(&self, labels: &[ClassId]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.classes
                    .binary_search(l)
                    .map_err(|_| Error::contract(format!("label {l} is not a known class")))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.image
            .params_mut()
            .chain(self.text.params_mut())
            .chain([&mut self.head.w, &mut self.head.b])
            .collect()
    }

    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        for (tag, branch) in [("image", &self.image), ("text", &self.text)] {
            for (part, mlp) in [("projector", &branch.projector), ("gate", &branch.gate)] {
                for (i, l) in mlp.layers.iter().enumerate() {
                    out.push((format!("{tag}.{part}.{i}.w"), &l.w));
                    out.push((format!("{tag}.{part}.{i}.b"), &l.b));
                }
            }
        }
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let meta = serde_json::json!({
            "dim": self.dim,
            "classes": self.classes,
            "use_gate": self.use_gate,
            "hp": self.hp,
            "extra": extra,
        });
        let mut ck = Checkpoint::new(CheckpointKind::Projection, meta);
        for (name, p) in self.named_params() {
            ck.push(name, p);
        }
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<(Self, serde_json::Value)> {
        ck.expect_kind(CheckpointKind::Projection)?;
        let field = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")))
        };
        let dim: usize = serde_json::from_value(field("dim")?)?;
        let classes: Vec<ClassId> = serde_json::from_value(field("classes")?)?;
        let use_gate: bool = serde_json::from_value(field("use_gate")?)?;
        let hp: ProjHyperParams = serde_json::from_value(field("hp")?)?;
        let extra = field("extra")?;

        let mut rng = crate::rng::stream(0, "checkpoint/skeleton");
        let mut model = Self::new(dim, classes, use_gate, hp, &mut rng)?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut_in_name_order()) {
            *slot = ck.take(name, slot.shape())?;
        }
        if let Some((name, _)) = ck.params.first() {
            return Err(Error::Checkpoint(format!("unexpected parameter {name}")));
        }
        Ok((model, extra))
    }

    fn params_mut_in_name_order(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for branch in [&mut self.image, &mut self.text] {
            for mlp in [&mut branch.projector, &mut branch.gate] {
                for l in &mut mlp.layers {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
            }
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    /// Checks that two models hold identical parameters and optimizer state.
    pub fn same_state(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.classes == other.classes
            && self.use_gate == other.use_gate
            && self.hp == other.hp
            && self
                .named_params()
                .iter()
                .zip(other.named_params())
                .all(|((na, a), (nb, b))| {
                    *na == nb
                        && a.value == b.value
                        && a.adam_m == b.adam_m
                        && a.adam_v == b.adam_v
                        && a.step == b.step
                })
    }
}

impl Embedder for ProjectionModel {
    fn embed(&self, modality: Modality, features: &RealArray) -> Result<RealArray> {
        self.branch(modality).apply(features, self.use_gate)
    }
}
