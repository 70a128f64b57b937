//! Cosine ranking and AP/mAP scoring in both retrieval directions.

mod evaluate;
mod metrics;

pub use evaluate::{evaluate, evaluate_domain, Domain, EvalReport, Modality, RawFeatures, Embedder};
pub use metrics::{
    average_precision, cosine_sim, mean_ap, mean_ap_with, Direction, Judgement, RankedList,
    RetrievalReport,
};
