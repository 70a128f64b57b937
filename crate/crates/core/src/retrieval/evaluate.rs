use serde::{Deserialize, Serialize};

use super::metrics::{mean_ap, Direction, RetrievalReport};
use crate::data::{Corpus, XShotSplit};
pub use crate::data::Modality;
use crate::error::{Error, Result};
use crate::numerics::RealArray;

/// Maps features of one modality into the retrieval space.
pub trait Embedder {
    fn embed(&self, modality: Modality, features: &RealArray) -> Result<RealArray>;
}

/// Identity embedding: retrieval on the original features.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawFeatures;

impl Embedder for RawFeatures {
    fn embed(&self, _modality: Modality, features: &RealArray) -> Result<RealArray> {
        Ok(features.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain: Domain,
    pub img2txt: RetrievalReport,
    pub txt2img: RetrievalReport,
    pub avg: f64,
}

/// Scores both retrieval directions between a domain's query and gallery
/// sets.
pub fn evaluate_domain<E: Embedder + ?Sized>(
    model: &E,
    split: &XShotSplit,
    corpus: &Corpus,
    domain: Domain,
) -> Result<EvalReport> {
    let (query, gallery) = match domain {
        Domain::Source => (&split.source_query, &split.source_gallery),
        Domain::Target => (&split.target_query, &split.target_gallery),
    };
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::contract(format!("{domain:?} query or gallery set is empty")));
    }
    let labels = |idx: &[usize]| idx.iter().map(|&i| corpus.labels()[i]).collect::<Vec<_>>();
    let (ql, gl) = (labels(query), labels(gallery));
    let embed = |m: Modality, idx: &[usize]| model.embed(m, &corpus.features(m).select_rows(idx));

    let img_q = embed(Modality::Image, query)?;
    let txt_q = embed(Modality::Text, query)?;
    let img_g = embed(Modality::Image, gallery)?;
    let txt_g = embed(Modality::Text, gallery)?;
    let img2txt = mean_ap(Direction::Img2Txt, &img_q, &ql, &txt_g, &gl)?;
    let txt2img = mean_ap(Direction::Txt2Img, &txt_q, &ql, &img_g, &gl)?;
    let avg = (img2txt.map + txt2img.map) / 2.0;
    Ok(EvalReport {
        domain,
        img2txt,
        txt2img,
        avg,
    })
}

/// Target-domain evaluation.
pub fn evaluate<E: Embedder + ?Sized>(
    model: &E,
    split: &XShotSplit,
    corpus: &Corpus,
) -> Result<EvalReport> {
    evaluate_domain(model, split, corpus, Domain::Target)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::{split_xshot, synth_corpus, SynthSpec};

    #[test]
    fn single_class_pools_are_perfect() {
        let img = RealArray::from_rows(&[[1.0, 0.1], [0.2, 1.0], [0.5, 0.4], [0.9, 0.9]]).unwrap();
        let txt = img.map(|v| v + 0.3);
        let attrs = BTreeMap::from([(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0])]);
        let corpus = Corpus::new("t", img, txt, vec![0, 0, 1, 1], attrs).unwrap();
        let split = XShotSplit {
            x_shot: 0,
            seed: 0,
            options: Default::default(),
            source_classes: vec![0],
            target_classes: vec![1],
            source_train: vec![0, 1],
            target_train: vec![],
            source_query: vec![],
            source_gallery: vec![],
            target_query: vec![2],
            target_gallery: vec![3],
        };
        let rep = evaluate(&RawFeatures, &split, &corpus).unwrap();
        assert_eq!(rep.img2txt.map, 1.0);
        assert_eq!(rep.txt2img.map, 1.0);
        assert_eq!(rep.img2txt.direction, Direction::Img2Txt);
        assert_eq!(rep.txt2img.direction, Direction::Txt2Img);
    }

    #[test]
    fn avg_is_mean_of_directions_and_scale_invariant() {
        let corpus = synth_corpus(&SynthSpec::default()).unwrap();
        let split = split_xshot(&corpus, 0, 1, 0.5).unwrap();
        let rep = evaluate(&RawFeatures, &split, &corpus).unwrap();
        assert!((rep.avg - (rep.img2txt.map + rep.txt2img.map) / 2.0).abs() < 1e-12);

        struct Scaled(f64);
        impl Embedder for Scaled {
            fn embed(&self, _m: Modality, f: &RealArray) -> Result<RealArray> {
                Ok(f.map(|v| v * self.0))
            }
        }
        let scaled = evaluate(&Scaled(4.0), &split, &corpus).unwrap();
        assert_eq!(scaled, rep);
        let odd = evaluate(&Scaled(3.7), &split, &corpus).unwrap();
        assert!((odd.avg - rep.avg).abs() < 1e-12);
        assert_eq!(evaluate(&RawFeatures, &split, &corpus).unwrap(), rep);
    }
}
