//! Two-stage X-shot cross-modal retrieval.
//!
//! Stage one trains a per-modality conditional VAE-GAN on the source classes
//! (plus any few-shot target samples) and synthesizes pseudo features for the
//! unseen target classes from their attribute vectors. Stage two trains
//! per-modality projectors whose outputs are fused with the original features
//! through a learned gate, and retrieval is scored by mAP over cosine
//! rankings.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod data;
pub mod rng;
pub mod retrieval;
pub mod checkpoint;
pub mod generation;
pub mod projection;
pub mod pipeline;

#[cfg(test)]
pub(crate) mod testutil;
