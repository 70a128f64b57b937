use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::corpus::{ClassId, Corpus};
use super::io::round_to_f32;
use crate::error::{Error, Result};
use crate::numerics::RealArray;
use crate::rng;

/// Parameters of the synthetic paired-embedding generator.
///
/// Each class gets a unit prototype `p`. Image features are
/// `normalize(p + e)` and text features `normalize(p + gap * m + e')`, where
/// `m` is one fixed unit direction shared by all text features and the noise
/// terms are independent `N(0, noise_sigma^2 I)`. The class attribute is `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub modality_gap: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Prototypes are drawn inside a random subspace of this rank, which
    /// gives classes shared structure that transfers between domains.
    /// Zero means the full space.
    pub prototype_rank: usize,
    /// Scale every emitted feature to unit norm.
    pub normalize: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            per_class: 50,
            dim: 64,
            modality_gap: 1.0,
            noise_sigma: 0.05,
            seed: 0,
            prototype_rank: 3,
            normalize: true,
        }
    }
}

fn gaussian<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = RealArray::norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Orthonormal basis of a random `rank`-dimensional subspace, one vector per
/// entry.
fn random_basis<R: Rng>(dim: usize, rank: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v = gaussian(dim, rng);
        for b in &basis {
            let d = RealArray::dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        if RealArray::norm(&v) > 1e-8 {
            basis.push(normalized(v));
        }
    }
    basis
}

pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    if spec.n_classes == 0 || spec.per_class == 0 {
        return Err(Error::config("class and instance counts must be positive"));
    }
    if spec.dim < 2 {
        return Err(Error::config(format!("dim must be at least 2, got {}", spec.dim)));
    }
    if !(spec.noise_sigma > 0.0) || !spec.noise_sigma.is_finite() {
        return Err(Error::config("noise_sigma must be positive"));
    }
    if !spec.modality_gap.is_finite() {
        return Err(Error::config("modality_gap must be finite"));
    }
    let d = spec.dim;
    let mut proto_rng = rng::stream(spec.seed, "synth/prototypes");
    let rank = if spec.prototype_rank == 0 {
        d
    } else {
        spec.prototype_rank.min(d)
    };
    let basis = random_basis(d, rank, &mut proto_rng);
    let prototypes: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            let coeff = gaussian(rank, &mut proto_rng);
            let mut p = vec![0.0; d];
            for (c, b) in coeff.iter().zip(&basis) {
                p.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
            }
            normalized(p)
        })
        .collect();
    let gap_dir = normalized(gaussian(d, &mut rng::stream(spec.seed, "synth/gap")));

    let mut noise_rng = rng::stream(spec.seed, "synth/noise");
    let n = spec.n_classes * spec.per_class;
    let mut image = Vec::with_capacity(n * d);
    let mut text = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let finish = |v: Vec<f64>| if spec.normalize { normalized(v) } else { v };
    for (c, p) in prototypes.iter().enumerate() {
        for _ in 0..spec.per_class {
            let img: Vec<f64> = p
                .iter()
                .map(|&x| x + spec.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let txt: Vec<f64> = p
                .iter()
                .zip(&gap_dir)
                .map(|(&x, &m)| {
                    x + spec.modality_gap * m
                        + spec.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            image.extend(finish(img));
            text.extend(finish(txt));
            labels.push(c as ClassId);
        }
    }
    let image = round_to_f32(&RealArray::new(n, d, image)?);
    let text = round_to_f32(&RealArray::new(n, d, text)?);
    let class_attrs: BTreeMap<ClassId, Vec<f64>> = prototypes
        .into_iter()
        .enumerate()
        .map(|(c, p)| (c as ClassId, p.iter().map(|&v| f64::from(v as f32)).collect()))
        .collect();
    Corpus::new(format!("synthetic-{}", spec.seed), image, text, labels, class_attrs)
}
