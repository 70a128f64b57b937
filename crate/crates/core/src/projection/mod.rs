//! Common-space projection with gated residual fusion.

mod losses;
mod model;
mod train;


pub use losses::{loss_ce, loss_consistency, loss_contrastive, total_loss, LossWeights};
pub use model::{mix, mix_values, Branch, Fused, ProjHyperParams, ProjectionModel};
pub use train::{projection_losses, projection_training_set, train_projection, ProjCurves, ProjLosses};
