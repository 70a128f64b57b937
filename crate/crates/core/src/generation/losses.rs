use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{Discriminator, VaeGanModel};
use crate::error::{Error, Result};
use crate::numerics::{RealArray, Tape, Var};

pub const LOGVAR_LIMIT: f64 = 10.0;

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> RealArray {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    RealArray::new(rows, cols, data).expect("normal draws are finite")
}

pub fn uniform_column<R: Rng + ?Sized>(rows: usize, rng: &mut R) -> Vec<f64> {
    (0..rows).map(|_| rng.random::<f64>()).collect()
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, eps: &RealArray) -> Result<Var> {
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let e = tape.constant(eps.clone());
    let noise = tape.mul(std, e)?;
    tape.add(mu, noise)
}

/// Clamps the log-variance head into the stable range.
pub fn clamp_logvar(tape: &mut Tape, logvar: Var) -> Var {
    tape.clamp(logvar, -LOGVAR_LIMIT, LOGVAR_LIMIT)
}

/// Analytic KL divergence of `N(mu, exp(logvar))` from the standard normal,
/// summed over latent dimensions and averaged over rows.
pub fn kl_loss(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let n = tape.value(mu).rows().max(1) as f64;
    let var = tape.exp(logvar);
    let mu2 = tape.square(mu);
    let a = tape.add(var, mu2)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    Ok(tape.scale(s, 0.5 / n))
}

/// Mean squared error over all elements.
pub fn recon_loss(tape: &mut Tape, v: Var, v_bar: Var) -> Result<Var> {
    let d = tape.sub(v_bar, v)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// `mean((|grad_x D(x_hat, a)| - 1)^2)` with `x_hat = e * real + (1 - e) * other`
/// for one mixing weight `e` per row.
///
/// The result is a function of the critic's weights on the tape.
pub fn gradient_penalty(
    tape: &mut Tape,
    critic: &Discriminator,
    real: &RealArray,
    other: &RealArray,
    attrs: &RealArray,
    mix: &[f64],
) -> Result<Var> {
    if real.shape() != other.shape() || mix.len() != real.rows() {
        return Err(Error::Dimension {
            op: "gradient_penalty",
            left: real.shape(),
            right: other.shape(),
        });
    }
    let mut x_hat = real.clone();
    for (i, &e) in mix.iter().enumerate() {
        let o = other.row(i);
        for (j, v) in x_hat.row_mut(i).iter_mut().enumerate() {
            *v = e * *v + (1.0 - e) * o[j];
        }
    }
    let g = critic.input_gradient(tape, &x_hat, attrs)?;
    let norm = tape.row_norm(g);
    let dev = tape.add_scalar(norm, -1.0);
    let sq = tape.square(dev);
    Ok(tape.mean(sq))
}

/// Pieces of one critic objective, kept apart for logging.
#[derive(Clone, Copy, Debug)]
pub struct CriticTerms {
    /// `mean D(real) - mean D(other) - lambda * penalty`.
    pub objective: Var,
    pub penalty: Var,
    /// `mean D(real) - mean D(other)`.
    pub gap: Var,
}

/// `mean D(real, a) - mean D(other, a) - lambda * GP`. The critic ascends
/// this; the encoder and generator descend it.
///
/// With `lambda == 0` the penalty is not built.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    tape: &mut Tape,
    critic: &Discriminator,
    real: Var,
    other: Var,
    attrs: Var,
    lambda: f64,
    mix: &[f64],
) -> Result<CriticTerms> {
    let d_real = critic.forward(tape, real, attrs)?;
    let d_other = critic.forward(tape, other, attrs)?;
    let m_real = tape.mean(d_real);
    let m_other = tape.mean(d_other);
    let gap = tape.sub(m_real, m_other)?;
    if lambda == 0.0 {
        let zero = tape.constant(RealArray::scalar(0.0));
        return Ok(CriticTerms {
            objective: gap,
            penalty: zero,
            gap,
        });
    }
    let (rv, ov, av) = (
        tape.value(real).clone(),
        tape.value(other).clone(),
        tape.value(attrs).clone(),
    );
    let penalty = gradient_penalty(tape, critic, &rv, &ov, &av, mix)?;
    let weighted = tape.scale(penalty, lambda);
    let objective = tape.sub(gap, weighted)?;
    Ok(CriticTerms {
        objective,
        penalty,
        gap,
    })
}

/// All random draws one loss evaluation needs, drawn up front so the same
/// batch can be evaluated repeatedly.
#[derive(Clone, Debug)]
pub struct GenNoise {
    /// Reparameterization noise, `n x d_z`.
    pub latent: RealArray,
    /// Generator input noise for pseudo samples, `n x d_z`.
    pub prior: RealArray,
    /// Interpolation weights for the pseudo-sample penalty.
    pub mix_fake: Vec<f64>,
    /// Interpolation weights for the reconstruction penalty.
    pub mix_recon: Vec<f64>,
}

impl GenNoise {
    pub fn draw<R: Rng + ?Sized>(n: usize, latent_dim: usize, rng: &mut R) -> Self {
        Self {
            latent: standard_normal(n, latent_dim, rng),
            prior: standard_normal(n, latent_dim, rng),
            mix_fake: uniform_column(n, rng),
            mix_recon: uniform_column(n, rng),
        }
    }
}

/// Tape nodes of the combined generation objective.
#[derive(Clone, Copy, Debug)]
pub struct GenLosses {
    pub kl: Var,
    pub recon: Var,
    pub vae: Var,
    pub gan1: CriticTerms,
    /// Absent when the VAE path is disabled.
    pub gan2: Option<CriticTerms>,
    pub total: Var,
}

/// Builds `vae + gan1 + gan2` for a batch of scaled features and their class
/// attributes. With `use_vae` false only the conditional WGAN term remains.
pub fn generation_losses(
    tape: &mut Tape,
    model: &VaeGanModel,
    features: &RealArray,
    attrs: &RealArray,
    noise: &GenNoise,
    lambda: f64,
    use_vae: bool,
) -> Result<GenLosses> {
    if features.rows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let v = tape.constant(features.clone());
    let a = tape.constant(attrs.clone());
    let prior = tape.constant(noise.prior.clone());
    let fake = model.generator.forward(tape, prior, a)?;
    let gan1 = critic_loss(tape, &model.discriminator, v, fake, a, lambda, &noise.mix_fake)?;

    let zero = tape.constant(RealArray::scalar(0.0));
    if !use_vae {
        return Ok(GenLosses {
            kl: zero,
            recon: zero,
            vae: zero,
            gan1,
            gan2: None,
            total: gan1.objective,
        });
    }

    let input = tape.concat_cols(v, a)?;
    let (mu, logvar) = model.encoder.forward(tape, input)?;
    let logvar = clamp_logvar(tape, logvar);
    let z = reparameterize(tape, mu, logvar, &noise.latent)?;
    let v_bar = model.generator.forward(tape, z, a)?;
    let kl = kl_loss(tape, mu, logvar)?;
    let recon = recon_loss(tape, v, v_bar)?;
    let vae = tape.add(kl, recon)?;
    let gan2 = critic_loss(tape, &model.discriminator, v, v_bar, a, lambda, &noise.mix_recon)?;
    let partial = tape.add(vae, gan1.objective)?;
    let total = tape.add(partial, gan2.objective)?;
    Ok(GenLosses {
        kl,
        recon,
        vae,
        gan1,
        gan2: Some(gan2),
        total,
    })
}

/// Untaped `(mu, clamped logvar, z)` for a batch.
pub fn encode(
    model: &VaeGanModel,
    features: &RealArray,
    attrs: &RealArray,
    eps: &RealArray,
) -> Result<(RealArray, RealArray, RealArray)> {
    let (mu, logvar) = model.encoder.apply(&RealArray::hstack(features, attrs)?)?;
    let logvar = logvar.map(|v| v.clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT));
    if eps.shape() != mu.shape() {
        return Err(Error::Dimension {
            op: "encode",
            left: mu.shape(),
            right: eps.shape(),
        });
    }
    let std = logvar.map(|lv| (0.5 * lv).exp());
    let z = mu.zip_map(&std.zip_map(eps, |s, e| s * e), |m, n| m + n);
    Ok((mu, logvar, z))
}
