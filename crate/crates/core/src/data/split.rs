use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::corpus::{ClassId, Corpus};
use crate::error::{Error, Result};
use crate::rng;

/// How a corpus is partitioned, apart from the shot count and seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitOptions {
    /// Share of each evaluation pool that becomes queries.
    pub query_fraction: f64,
    /// Share of each source class held out for validation retrieval.
    pub source_holdout: f64,
    /// Whether few-shot target samples also appear in the target gallery.
    pub shots_in_gallery: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            query_fraction: 0.5,
            source_holdout: 0.2,
            shots_in_gallery: false,
        }
    }
}

/// Class-disjoint source/target partition for one shot count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XShotSplit {
    pub x_shot: usize,
    pub seed: u64,
    pub options: SplitOptions,
    pub source_classes: Vec<ClassId>,
    pub target_classes: Vec<ClassId>,
    pub source_train: Vec<usize>,
    pub target_train: Vec<usize>,
    pub source_query: Vec<usize>,
    pub source_gallery: Vec<usize>,
    pub target_query: Vec<usize>,
    pub target_gallery: Vec<usize>,
}

impl XShotSplit {
    /// Training instances of both domains, source first.
    pub fn train(&self) -> Vec<usize> {
        let mut v = self.source_train.clone();
        v.extend_from_slice(&self.target_train);
        v
    }

    /// Every class seen by the split, sorted.
    pub fn all_classes(&self) -> Vec<ClassId> {
        let mut v: Vec<ClassId> = self
            .source_classes
            .iter()
            .chain(&self.target_classes)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

fn count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

pub fn split_xshot(corpus: &Corpus, x: usize, seed: u64, query_fraction: f64) -> Result<XShotSplit> {
    split_xshot_with(
        corpus,
        x,
        seed,
        SplitOptions {
            query_fraction,
            ..SplitOptions::default()
        },
    )
}

/// Halves the shuffled class list into source and target domains and
/// partitions each class's instances.
///
/// The class assignment and every per-class permutation depend only on the
/// seed, so splits for different shot counts share their target queries. Few
/// shots are drawn from the tail of each target class permutation.
pub fn split_xshot_with(
    corpus: &Corpus,
    x: usize,
    seed: u64,
    options: SplitOptions,
) -> Result<XShotSplit> {
    if !(0.0..=1.0).contains(&options.query_fraction)
        || !(0.0..=1.0).contains(&options.source_holdout)
    {
        return Err(Error::config("split fractions must lie in [0, 1]"));
    }
    let mut classes = corpus.classes();
    if classes.len() < 2 {
        return Err(Error::contract(format!(
            "a split needs at least two classes, corpus has {}",
            classes.len()
        )));
    }
    if classes.len() % 2 == 1 {
        log::warn!(
            "odd class count {}: source domain gets the extra class",
            classes.len()
        );
    }
    classes.shuffle(&mut rng::stream(seed, "split/classes"));
    let n_source = classes.len().div_ceil(2);
    let mut source_classes = classes[..n_source].to_vec();
    let mut target_classes = classes[n_source..].to_vec();
    source_classes.sort_unstable();
    target_classes.sort_unstable();

    let members = corpus.members();
    if let Some((&class, m)) = members
        .iter()
        .filter(|(c, _)| target_classes.contains(c))
        .min_by_key(|(_, m)| m.len())
    {
        if x > m.len() {
            return Err(Error::ShotTooLarge {
                x,
                class,
                size: m.len(),
            });
        }
    }

    let target: BTreeSet<ClassId> = target_classes.iter().copied().collect();
    let mut member_rng = rng::stream(seed, "split/members");
    let mut split = XShotSplit {
        x_shot: x,
        seed,
        options,
        source_classes,
        target_classes,
        source_train: vec![],
        target_train: vec![],
        source_query: vec![],
        source_gallery: vec![],
        target_query: vec![],
        target_gallery: vec![],
    };
    for (class, idx) in &members {
        let mut perm = idx.clone();
        perm.shuffle(&mut member_rng);
        let n = perm.len();
        if target.contains(class) {
            let n_query = count(n, options.query_fraction).min(n - x);
            split.target_query.extend_from_slice(&perm[..n_query]);
            split.target_train.extend_from_slice(&perm[n - x..]);
            let gallery_end = if options.shots_in_gallery { n } else { n - x };
            split.target_gallery.extend_from_slice(&perm[n_query..gallery_end]);
        } else {
            let n_hold = count(n, options.source_holdout);
            let n_query = count(n_hold, options.query_fraction);
            split.source_query.extend_from_slice(&perm[..n_query]);
            split.source_gallery.extend_from_slice(&perm[n_query..n_hold]);
            split.source_train.extend_from_slice(&perm[n_hold..]);
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_corpus, SynthSpec};

    fn corpus(n_classes: usize, per_class: usize) -> Corpus {
        synth_corpus(&SynthSpec {
            n_classes,
            per_class,
            dim: 8,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn ten_classes_halve() {
        let s = split_xshot(&corpus(10, 6), 1, 3, 0.5).unwrap();
        assert_eq!(s.source_classes.len(), 5);
        assert_eq!(s.target_classes.len(), 5);
    }

    #[test]
    fn zero_shot_has_no_target_training() {
        let s = split_xshot(&corpus(6, 6), 0, 1, 0.5).unwrap();
        assert!(s.target_train.is_empty());
    }

    #[test]
    fn three_shot_over_four_target_classes() {
        let c = corpus(8, 10);
        let s = split_xshot(&c, 3, 9, 0.5).unwrap();
        assert_eq!(s.target_train.len(), 12);
        for class in &s.target_classes {
            let tally = s
                .target_train
                .iter()
                .filter(|&&i| c.labels()[i] == *class)
                .count();
            assert_eq!(tally, 3);
        }
    }

    #[test]
    fn too_many_shots_is_an_error() {
        let err = split_xshot(&corpus(4, 5), 6, 0, 0.5).unwrap_err();
        assert!(matches!(err, Error::ShotTooLarge { x: 6, size: 5, .. }));
    }

    #[test]
    fn odd_class_count_gives_source_the_extra() {
        let s = split_xshot(&corpus(5, 4), 0, 0, 0.5).unwrap();
        assert_eq!((s.source_classes.len(), s.target_classes.len()), (3, 2));
    }

    #[test]
    fn single_class_rejected() {
        assert!(split_xshot(&corpus(1, 4), 0, 0, 0.5).is_err());
    }

    #[test]
    fn queries_do_not_depend_on_shot_count() {
        let c = corpus(8, 12);
        let a = split_xshot(&c, 0, 4, 0.5).unwrap();
        let b = split_xshot(&c, 5, 4, 0.5).unwrap();
        assert_eq!(a.target_query, b.target_query);
        assert_eq!(a.target_classes, b.target_classes);
        assert!(b.target_gallery.iter().all(|i| a.target_gallery.contains(i)));
    }

    #[test]
    fn shots_can_be_kept_in_gallery() {
        let c = corpus(4, 10);
        let opts = SplitOptions {
            shots_in_gallery: true,
            ..SplitOptions::default()
        };
        let s = split_xshot_with(&c, 2, 0, opts).unwrap();
        assert!(s.target_train.iter().all(|i| s.target_gallery.contains(i)));
    }
}
