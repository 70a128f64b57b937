//! Embedding ingestion, class-disjoint splits and the synthetic corpus.

mod corpus;
mod io;
mod split;
mod synth;

pub use corpus::{ClassId, Corpus, Instance, Modality};
pub use io::{
    load_corpus, load_corpus_dir, read_embeddings, read_ids, round_to_f32, write_corpus,
    write_embeddings, write_ids, CorpusPaths, EMBEDDING_MAGIC,
};
pub use split::{split_xshot, split_xshot_with, SplitOptions, XShotSplit};
pub use synth::{synth_corpus, SynthSpec};
