use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Linear, Mlp, Parameter, RealArray, Tape, Var};
use crate::rng::RngState;

/// Layer widths of one VAE-GAN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenArch {
    /// Encoder trunk widths; the last one feeds the mean/log-variance heads.
    pub enc_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
}

impl GenArch {
    /// The full-size networks used with 1,024-d embeddings.
    pub fn full() -> Self {
        Self {
            enc_hidden: vec![1024, 800, 512],
            latent_dim: 512,
            gen_hidden: vec![800],
            disc_hidden: vec![1024],
        }
    }

    /// Scaled-down networks for the 64-d synthetic benchmark.
    pub fn desk() -> Self {
        Self {
            enc_hidden: vec![128, 96, 64],
            latent_dim: 32,
            gen_hidden: vec![128],
            disc_hidden: vec![128],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_hidden.is_empty() || self.latent_dim == 0 {
            return Err(Error::config("encoder needs at least one hidden layer and a latent width"));
        }
        if self
            .enc_hidden
            .iter()
            .chain(&self.gen_hidden)
            .chain(&self.disc_hidden)
            .any(|&w| w == 0)
        {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }
}

impl Default for GenArch {
    fn default() -> Self {
        Self::desk()
    }
}

/// Per-dimension min-max map of real features onto `[0, 1]`, the range of
/// the generator's sigmoid output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(x: &RealArray) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let mut min = x.row(0).to_vec();
        let mut max = min.clone();
        for i in 1..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            min: vec![0.0; dim],
            max: vec![1.0; dim],
        }
    }

    fn range(&self, j: usize) -> f64 {
        let r = self.max[j] - self.min[j];
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn transform(&self, x: &RealArray) -> RealArray {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.min[j]) / self.range(j);
            }
        }
        out
    }

    pub fn inverse(&self, x: &RealArray) -> RealArray {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.range(j) + self.min[j];
            }
        }
        out
    }
}

/// `E(v, a) -> (mu, logvar)`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub trunk: Mlp,
    pub mu: Linear,
    pub logvar: Linear,
}

/// `G(z, a) -> feature`, in scaled feature space.
#[derive(Clone, Debug)]
pub struct Generator {
    pub mlp: Mlp,
}

/// Conditional critic `D(x, a) -> score`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub mlp: Mlp,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(dim: usize, attr_dim: usize, arch: &GenArch, rng: &mut R) -> Result<Self> {
        let mut widths = vec![dim + attr_dim];
        widths.extend_from_slice(&arch.enc_hidden);
        let trunk = Mlp::new(&widths, Activation::Relu, Activation::Sigmoid, rng)?;
        let top = trunk.d_out();
        Ok(Self {
            trunk,
            mu: Linear::new(top, arch.latent_dim, rng),
            logvar: Linear::new(top, arch.latent_dim, rng),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.d_out()
    }

    /// Returns `(mu, logvar)` nodes. `x` is the `[feature, attribute]`
    /// concatenation.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let h = self.trunk.forward(tape, x)?;
        let mu = self.mu.forward(tape, h)?;
        let lv = self.logvar.forward(tape, h)?;
        Ok((mu, lv))
    }

    pub fn apply(&self, x: &RealArray) -> Result<(RealArray, RealArray)> {
        let h = self.trunk.apply(x)?;
        Ok((self.mu.apply(&h)?, self.logvar.apply(&h)?))
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.trunk
            .params()
            .chain([&self.mu.w, &self.mu.b, &self.logvar.w, &self.logvar.b])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.trunk.params_mut().chain([
            &mut self.mu.w,
            &mut self.mu.b,
            &mut self.logvar.w,
            &mut self.logvar.b,
        ])
    }
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(dim: usize, attr_dim: usize, arch: &GenArch, rng: &mut R) -> Result<Self> {
        let mut widths = vec![arch.latent_dim + attr_dim];
        widths.extend_from_slice(&arch.gen_hidden);
        widths.push(dim);
        Ok(Self {
            mlp: Mlp::new(&widths, Activation::Relu, Activation::Sigmoid, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, z: Var, a: Var) -> Result<Var> {
        let x = tape.concat_cols(z, a)?;
        self.mlp.forward(tape, x)
    }

    pub fn apply(&self, z: &RealArray, a: &RealArray) -> Result<RealArray> {
        self.mlp.apply(&RealArray::hstack(z, a)?)
    }
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(dim: usize, attr_dim: usize, arch: &GenArch, rng: &mut R) -> Result<Self> {
        let mut widths = vec![dim + attr_dim];
        widths.extend_from_slice(&arch.disc_hidden);
        widths.push(1);
        Ok(Self {
            mlp: Mlp::new(&widths, Activation::LeakyRelu, Activation::Identity, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, a: Var) -> Result<Var> {
        let h = tape.concat_cols(x, a)?;
        self.mlp.forward(tape, h)
    }

    pub fn apply(&self, x: &RealArray, a: &RealArray) -> Result<RealArray> {
        self.mlp.apply(&RealArray::hstack(x, a)?)
    }

    /// Builds `dD/dx` at the given input as tape nodes that depend on the
    /// critic's weights, so that penalties on it can be differentiated with
    /// respect to those weights.
    ///
    /// The activation derivatives are piecewise constant for LeakyReLU and
    /// enter as constants; only the weight matrices carry gradient.
    pub fn input_gradient(&self, tape: &mut Tape, x: &RealArray, a: &RealArray) -> Result<Var> {
        let input = RealArray::hstack(x, a)?;
        let pre = self.mlp.pre_activations(&input)?;
        let layers = &self.mlp.layers;
        let mut g = tape.constant(RealArray::ones(x.rows(), 1));
        for k in (0..layers.len()).rev() {
            let w = tape.param(&layers[k].w);
            g = tape.matmul_t(g, w)?;
            if k > 0 {
                let act = self.mlp.hidden;
                let mask = tape.constant(pre[k - 1].map(|v| act.derivative(v)));
                g = tape.mul(g, mask)?;
            }
        }
        tape.slice_cols(g, 0, x.cols())
    }
}

/// One modality's encoder, generator and critic, plus the feature scaling
/// the generator was trained under.
#[derive(Clone, Debug)]
pub struct VaeGanModel {
    pub modality: Modality,
    pub arch: GenArch,
    pub dim: usize,
    pub attr_dim: usize,
    pub encoder: Encoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub scaler: FeatureScaler,
    /// Noise stream position at the end of training, if trained.
    pub rng: Option<RngState>,
}

impl VaeGanModel {
    pub fn new<R: Rng + ?Sized>(
        modality: Modality,
        dim: usize,
        attr_dim: usize,
        arch: &GenArch,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            modality,
            arch: arch.clone(),
            dim,
            attr_dim,
            encoder: Encoder::new(dim, attr_dim, arch, rng)?,
            generator: Generator::new(dim, attr_dim, arch, rng)?,
            discriminator: Discriminator::new(dim, attr_dim, arch, rng)?,
            scaler: FeatureScaler::identity(dim),
            rng: None,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    /// Encoder and generator parameters: the minimizing side.
    pub fn vae_params_mut(&mut self) -> Vec<&mut Parameter> {
        self.encoder
            .params_mut()
            .chain(self.generator.mlp.params_mut())
            .collect()
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Parameter> {
        self.encoder
            .params_mut()
            .chain(self.generator.mlp.params_mut())
            .chain(self.discriminator.mlp.params_mut())
            .collect()
    }

    pub fn critic_params_mut(&mut self) -> Vec<&mut Parameter> {
        self.discriminator.mlp.params_mut().collect()
    }

    fn named_params(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.trunk.layers.iter().enumerate() {
            out.push((format!("encoder.trunk.{i}.w"), &l.w));
            out.push((format!("encoder.trunk.{i}.b"), &l.b));
        }
        out.push(("encoder.mu.w".into(), &self.encoder.mu.w));
        out.push(("encoder.mu.b".into(), &self.encoder.mu.b));
        out.push(("encoder.logvar.w".into(), &self.encoder.logvar.w));
        out.push(("encoder.logvar.b".into(), &self.encoder.logvar.b));
        for (i, l) in self.generator.mlp.layers.iter().enumerate() {
            out.push((format!("generator.{i}.w"), &l.w));
            out.push((format!("generator.{i}.b"), &l.b));
        }
        for (i, l) in self.discriminator.mlp.layers.iter().enumerate() {
            out.push((format!("discriminator.{i}.w"), &l.w));
            out.push((format!("discriminator.{i}.b"), &l.b));
        }
        out
    }

    /// Fingerprint of every parameter value, for detecting mutation.
    pub fn param_checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, p) in self.named_params() {
            h.update(name.as_bytes());
            for v in p.value.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let meta = serde_json::json!({
            "modality": self.modality,
            "arch": self.arch,
            "dim": self.dim,
            "attr_dim": self.attr_dim,
            "scaler": self.scaler,
            "rng": self.rng,
            "extra": extra,
        });
        let mut ck = Checkpoint::new(crate::checkpoint::CheckpointKind::VaeGan, meta);
        for (name, p) in self.named_params() {
            ck.push(name, p);
        }
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<(Self, serde_json::Value)> {
        ck.expect_kind(crate::checkpoint::CheckpointKind::VaeGan)?;
        let field = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks `{k}`")))
        };
        let modality: Modality = serde_json::from_value(field("modality")?)?;
        let arch: GenArch = serde_json::from_value(field("arch")?)?;
        let dim: usize = serde_json::from_value(field("dim")?)?;
        let attr_dim: usize = serde_json::from_value(field("attr_dim")?)?;
        let scaler: FeatureScaler = serde_json::from_value(field("scaler")?)?;
        let rng_state: Option<RngState> = serde_json::from_value(field("rng")?)?;
        let extra = field("extra")?;
        arch.validate()?;

        // Build a skeleton with the right shapes, then swap in stored values.
        let mut rng = crate::rng::stream(0, "checkpoint/skeleton");
        let mut model = Self::new(modality, dim, attr_dim, &arch, &mut rng)?;
        model.scaler = scaler;
        model.rng = rng_state;
        let take = |ck: &mut Checkpoint, name: String, slot: &mut Parameter| -> Result<()> {
            *slot = ck.take(&name, slot.shape())?;
            Ok(())
        };
        for (i, l) in model.encoder.trunk.layers.iter_mut().enumerate() {
            take(&mut ck, format!("encoder.trunk.{i}.w"), &mut l.w)?;
            take(&mut ck, format!("encoder.trunk.{i}.b"), &mut l.b)?;
        }
        take(&mut ck, "encoder.mu.w".into(), &mut model.encoder.mu.w)?;
        take(&mut ck, "encoder.mu.b".into(), &mut model.encoder.mu.b)?;
        take(&mut ck, "encoder.logvar.w".into(), &mut model.encoder.logvar.w)?;
        take(&mut ck, "encoder.logvar.b".into(), &mut model.encoder.logvar.b)?;
        for (i, l) in model.generator.mlp.layers.iter_mut().enumerate() {
            take(&mut ck, format!("generator.{i}.w"), &mut l.w)?;
            take(&mut ck, format!("generator.{i}.b"), &mut l.b)?;
        }
        for (i, l) in model.discriminator.mlp.layers.iter_mut().enumerate() {
            take(&mut ck, format!("discriminator.{i}.w"), &mut l.w)?;
            take(&mut ck, format!("discriminator.{i}.b"), &mut l.b)?;
        }
        if let Some((name, _)) = ck.params.first() {
            return Err(Error::Checkpoint(format!("unexpected parameter {name}")));
        }
        Ok((model, extra))
    }

    /// Checks that two models hold identical parameters and optimizer state.
    pub fn same_state(&self, other: &Self) -> bool {
        self.modality == other.modality
            && self.arch == other.arch
            && self.scaler == other.scaler
            && self.rng == other.rng
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
