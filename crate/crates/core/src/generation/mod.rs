//! Per-modality conditional VAE-GAN feature generation.

mod losses;
mod model;
mod synthesize;
mod train;


pub use losses::{
    clamp_logvar, critic_loss, encode, generation_losses, gradient_penalty, kl_loss, recon_loss,
    reparameterize, standard_normal, CriticTerms, GenLosses, GenNoise, LOGVAR_LIMIT,
};
pub use model::{Discriminator, Encoder, FeatureScaler, GenArch, Generator, VaeGanModel};
pub use synthesize::synthesize_target_set;
pub use train::{train_generation, train_modality, GenCurves, GenHyperParams, TrainedGenerators};
