use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RealArray;

pub fn cosine_sim(q: &[f64], g: &[f64]) -> Result<f64> {
    if q.len() != g.len() {
        return Err(Error::Dimension {
            op: "cosine_sim",
            left: (1, q.len()),
            right: (1, g.len()),
        });
    }
    let (nq, ng) = (RealArray::norm(q), RealArray::norm(g));
    if nq == 0.0 || ng == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((RealArray::dot(q, g) / (nq * ng)).clamp(-1.0, 1.0))
}

/// Gallery ordering for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub query_index: usize,
    /// Gallery indices by descending similarity, ties by ascending index.
    pub order: Vec<usize>,
    /// Same-class indicator for each ranked position.
    pub relevance: Vec<bool>,
}

impl RankedList {
    /// Ranks the scored gallery items. Items absent from `scores` are not
    /// retrieved.
    pub fn from_scores(query_index: usize, scores: &[(usize, f64, bool)]) -> Self {
        let mut items = scores.to_vec();
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self {
            query_index,
            order: items.iter().map(|i| i.0).collect(),
            relevance: items.iter().map(|i| i.2).collect(),
        }
    }

    pub fn average_precision(&self) -> Option<f64> {
        average_precision(&self.relevance)
    }
}

/// Precision at each relevant rank, averaged over the relevant items of the
/// whole list. `None` when nothing is relevant.
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Img2Txt,
    Txt2Img,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::Img2Txt => Direction::Txt2Img,
            Direction::Txt2Img => Direction::Img2Txt,
        }
    }
}

/// How a gallery item relates to a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Judgement {
    Relevant,
    Irrelevant,
    Excluded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub map: f64,
    /// AP of every scored query, in query order.
    pub per_query_ap: Vec<f64>,
    pub n_queries: usize,
    pub n_gallery: usize,
    /// Queries without a relevant gallery item; excluded from the mean.
    pub skipped_queries: Vec<usize>,
}

fn unit_rows(a: &RealArray) -> Result<RealArray> {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = RealArray::norm(row);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Ranks the full gallery for every query by cosine similarity and averages
/// the per-query AP.
pub fn mean_ap_with<F>(
    direction: Direction,
    queries: &RealArray,
    gallery: &RealArray,
    judge: F,
) -> Result<RetrievalReport>
where
    F: Fn(usize, usize) -> Judgement + Sync,
{
    if queries.rows() == 0 || gallery.rows() == 0 {
        return Err(Error::contract("mean_ap needs nonempty queries and gallery"));
    }
    if queries.cols() != gallery.cols() {
        return Err(Error::Dimension {
            op: "mean_ap",
            left: queries.shape(),
            right: gallery.shape(),
        });
    }
    let sims = unit_rows(queries)?.matmul_t(&unit_rows(gallery)?);
    let aps: Vec<Option<f64>> = (0..queries.rows())
        .into_par_iter()
        .map(|q| {
            let scores: Vec<(usize, f64, bool)> = (0..gallery.rows())
                .filter_map(|g| match judge(q, g) {
                    Judgement::Excluded => None,
                    j => Some((g, sims.get(q, g), j == Judgement::Relevant)),
                })
                .collect();
            RankedList::from_scores(q, &scores).average_precision()
        })
        .collect();
    let mut per_query_ap = Vec::with_capacity(aps.len());
    let mut skipped = Vec::new();
    for (q, ap) in aps.into_iter().enumerate() {
        match ap {
            Some(v) => per_query_ap.push(v),
            None => skipped.push(q),
        }
    }
    if !skipped.is_empty() {
        log::warn!(
            "{:?}: {} queries have no relevant gallery item and are left out of mAP",
            direction,
            skipped.len()
        );
    }
    let map = if per_query_ap.is_empty() {
        0.0
    } else {
        per_query_ap.iter().sum::<f64>() / per_query_ap.len() as f64
    };
    Ok(RetrievalReport {
        direction,
        map,
        per_query_ap,
        n_queries: queries.rows(),
        n_gallery: gallery.rows(),
        skipped_queries: skipped,
    })
}

/// Class-label relevance: a gallery item is relevant when it shares the
/// query's label.
pub fn mean_ap<L: PartialEq + Sync>(
    direction: Direction,
    queries: &RealArray,
    query_labels: &[L],
    gallery: &RealArray,
    gallery_labels: &[L],
) -> Result<RetrievalReport> {
    if query_labels.len() != queries.rows() || gallery_labels.len() != gallery.rows() {
        return Err(Error::contract("label count differs from embedding rows"));
    }
    mean_ap_with(direction, queries, gallery, |q, g| {
        if query_labels[q] == gallery_labels[g] {
            Judgement::Relevant
        } else {
            Judgement::Irrelevant
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let v = cosine_sim(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true, false, false]), Some(1.0));
        assert_eq!(average_precision(&[false, true, false, true]), Some(0.5));
        assert_eq!(average_precision(&[false, false, true]), Some(1.0 / 3.0));
        assert_eq!(average_precision(&[false, false]), None);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let r = RankedList::from_scores(0, &[(2, 0.5, false), (0, 0.5, true), (1, 0.9, false)]);
        assert_eq!(r.order, vec![1, 0, 2]);
    }

    #[test]
    fn map_is_mean_of_aps() {
        // Query 0 ranks its relevant item first (AP 1); query 1 second of
        // two relevant items at ranks 2 and 4 (AP 0.5).
        let q = RealArray::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = RealArray::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.8, 0.6], [0.6, 0.8]]).unwrap();
        let rep = mean_ap(Direction::Img2Txt, &q, &[0, 1], &g, &[0, 2, 1, 1]).unwrap();
        // query 1 order: g1 (1.0), g3 (0.8), g2 (0.6), g0 (0.0) -> relevance [f, t, t, f]
        assert_eq!(rep.per_query_ap[0], 1.0);
        assert!((rep.per_query_ap[1] - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let mean = rep.per_query_ap.iter().sum::<f64>() / 2.0;
        assert!((rep.map - mean).abs() < 1e-12);
    }

    #[test]
    fn self_excluded_same_class_is_perfect() {
        let x = RealArray::from_rows(&[[1.0, 0.2], [0.3, 1.0], [0.5, 0.5]]).unwrap();
        let rep = mean_ap_with(Direction::Img2Txt, &x, &x, |q, g| {
            if q == g {
                Judgement::Excluded
            } else {
                Judgement::Relevant
            }
        })
        .unwrap();
        assert_eq!(rep.map, 1.0);
    }

    #[test]
    fn queries_without_relevant_items_are_skipped() {
        let q = RealArray::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = RealArray::from_rows(&[[1.0, 0.0]]).unwrap();
        let rep = mean_ap(Direction::Txt2Img, &q, &[0, 1], &g, &[0]).unwrap();
        assert_eq!(rep.skipped_queries, vec![1]);
        assert_eq!(rep.map, 1.0);
    }

    #[test]
    fn empty_inputs_rejected() {
        let e = RealArray::zeros(0, 2);
        let g = RealArray::ones(1, 2);
        assert!(mean_ap::<i64>(Direction::Img2Txt, &e, &[], &g, &[0]).is_err());
    }
}
