use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{critic_loss, encode, generation_losses, GenNoise};
use super::model::{FeatureScaler, GenArch, VaeGanModel};
use crate::data::{Corpus, Modality, XShotSplit};
use crate::error::{Error, Result};
use crate::numerics::{Adam, RealArray, Tape};
use crate::rng::{stream, RngState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenHyperParams {
    pub lambda_gp: f64,
    pub critic_steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GenHyperParams {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            critic_steps: 5,
            lr: 1e-3,
            batch: 64,
            epochs: 200,
            seed: 0,
        }
    }
}

impl GenHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gp >= 0.0) {
            return Err(Error::config("lambda_gp must be non-negative"));
        }
        if self.critic_steps == 0 {
            return Err(Error::config("critic_steps must be at least 1"));
        }
        if !(self.lr > 0.0) || self.batch == 0 {
            return Err(Error::config("generation lr and batch must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch means of each loss term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenCurves {
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
    pub gan1: Vec<f64>,
    pub gan2: Vec<f64>,
    pub total: Vec<f64>,
    /// `mean D(real) - mean D(fake)` from the last critic step of each batch.
    pub critic_gap: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedGenerators {
    pub image: VaeGanModel,
    pub text: VaeGanModel,
    pub image_curves: GenCurves,
    pub text_curves: GenCurves,
}

/// Trains one VAE-GAN per modality on the source training instances plus
/// any target shots. The two modalities use disjoint random streams and may
/// run concurrently.
pub fn train_generation(
    split: &XShotSplit,
    corpus: &Corpus,
    arch: &GenArch,
    hp: &GenHyperParams,
    use_vae: bool,
) -> Result<TrainedGenerators> {
    hp.validate()?;
    arch.validate()?;
    let idx = split.train();
    if idx.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let attrs = corpus.attrs_for(&idx);
    let image = corpus.image().select_rows(&idx);
    let text = corpus.text().select_rows(&idx);
    let (img, txt) = rayon::join(
        || train_modality(Modality::Image, &image, &attrs, arch, hp, use_vae),
        || train_modality(Modality::Text, &text, &attrs, arch, hp, use_vae),
    );
    let (image, image_curves) = img?;
    let (text, text_curves) = txt?;
    Ok(TrainedGenerators {
        image,
        text,
        image_curves,
        text_curves,
    })
}

/// Alternates `critic_steps` critic ascent steps with one encoder/generator
/// descent step per minibatch.
pub fn train_modality(
    modality: Modality,
    features: &RealArray,
    attrs: &RealArray,
    arch: &GenArch,
    hp: &GenHyperParams,
    use_vae: bool,
) -> Result<(VaeGanModel, GenCurves)> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let tag = modality.name();
    let mut init = stream(hp.seed, &format!("gen/{tag}/init"));
    let mut shuffle = stream(hp.seed, &format!("gen/{tag}/shuffle"));
    let mut noise_rng = stream(hp.seed, &format!("gen/{tag}/noise"));

    let mut model = VaeGanModel::new(modality, features.cols(), attrs.cols(), arch, &mut init)?;
    model.scaler = FeatureScaler::fit(features)?;
    let scaled = model.scaler.transform(features);
    let opt = Adam::new(hp.lr)?;
    let mut curves = GenCurves::default();
    let mut order: Vec<usize> = (0..n).collect();
    let d_z = arch.latent_dim;

    for epoch in 0..hp.epochs {
        order.shuffle(&mut shuffle);
        let mut sums = [0.0f64; 6];
        let mut batches = 0usize;
        for chunk in order.chunks(hp.batch) {
            let v = scaled.select_rows(chunk);
            let a = attrs.select_rows(chunk);
            let rows = chunk.len();

            let mut gap = 0.0;
            for _ in 0..hp.critic_steps {
                let noise = GenNoise::draw(rows, d_z, &mut noise_rng);
                let fake = model.generator.apply(&noise.prior, &a)?;
                let mut tape = Tape::new();
                let rv = tape.constant(v.clone());
                let av = tape.constant(a.clone());
                let fv = tape.constant(fake);
                let t1 = critic_loss(&mut tape, &model.discriminator, rv, fv, av, hp.lambda_gp, &noise.mix_fake)?;
                let mut objective = t1.objective;
                if use_vae {
                    let (_, _, z) = encode(&model, &v, &a, &noise.latent)?;
                    let recon = model.generator.apply(&z, &a)?;
                    let bv = tape.constant(recon);
                    let t2 = critic_loss(&mut tape, &model.discriminator, rv, bv, av, hp.lambda_gp, &noise.mix_recon)?;
                    objective = tape.add(objective, t2.objective)?;
                }
                gap = tape.scalar(t1.gap)?;
                let loss = tape.scale(objective, -1.0);
                let grads = tape.backward(loss)?;
                grads.accumulate_into(model.critic_params_mut());
                opt.step(model.critic_params_mut());
            }

            // The penalty has no path to the encoder or generator, so it is
            // left out of their step.
            let noise = GenNoise::draw(rows, d_z, &mut noise_rng);
            let mut tape = Tape::new();
            let losses = generation_losses(&mut tape, &model, &v, &a, &noise, 0.0, use_vae)?;
            sums[0] += tape.scalar(losses.recon)?;
            sums[1] += tape.scalar(losses.kl)?;
            sums[2] += tape.scalar(losses.gan1.objective)?;
            sums[3] += match losses.gan2 {
                Some(t) => tape.scalar(t.objective)?,
                None => 0.0,
            };
            sums[4] += tape.scalar(losses.total)?;
            sums[5] += gap;
            batches += 1;
            let grads = tape.backward(losses.total)?;
            grads.accumulate_into(model.vae_params_mut());
            opt.step(model.vae_params_mut());
        }
        let b = batches as f64;
        curves.recon.push(sums[0] / b);
        curves.kl.push(sums[1] / b);
        curves.gan1.push(sums[2] / b);
        curves.gan2.push(sums[3] / b);
        curves.total.push(sums[4] / b);
        curves.critic_gap.push(sums[5] / b);
        if !curves.total.last().unwrap().is_finite() {
            return Err(Error::NonFinite {
                what: format!("{tag} generation loss"),
                index: epoch,
            });
        }
        debug!(
            "gen {tag} epoch {epoch}: recon {:.5} kl {:.4} gan1 {:.4} gan2 {:.4} gap {:.4}",
            sums[0] / b,
            sums[1] / b,
            sums[2] / b,
            sums[3] / b,
            sums[5] / b
        );
    }
    if let (Some(first), Some(last)) = (curves.recon.first(), curves.recon.last()) {
        info!("gen {tag}: recon {first:.5} -> {last:.5} over {} epochs", hp.epochs);
    }
    model.rng = Some(RngState::capture(&noise_rng));
    Ok((model, curves))
}
