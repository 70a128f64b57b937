use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{loss_ce, loss_consistency, loss_contrastive, total_loss, LossWeights};
use super::model::{ProjHyperParams, ProjectionModel};
use crate::data::{Corpus, XShotSplit};
use crate::error::{Error, Result};
use crate::numerics::{Adam, RealArray, Tape, Var};
use crate::rng::stream;

/// Per-epoch means of each loss term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjCurves {
    pub ce: Vec<f64>,
    pub consistency: Vec<f64>,
    pub contrastive: Vec<f64>,
    pub total: Vec<f64>,
}

/// Values of each term for one batch, as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct ProjLosses {
    pub ce: Option<Var>,
    pub consistency: Option<Var>,
    pub contrastive: Option<Var>,
    pub total: Var,
}

impl ProjHyperParams {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            ce: self.alpha,
            consistency: self.beta,
            contrastive: self.gamma,
        }
    }
}

/// Fuses a batch of paired features and builds the weighted objective.
/// Terms with zero weight are not built.
pub fn projection_losses(
    tape: &mut Tape,
    model: &ProjectionModel,
    image: &RealArray,
    text: &RealArray,
    labels: &[usize],
) -> Result<ProjLosses> {
    let hp = &model.hp;
    let x_v = tape.constant(image.clone());
    let x_t = tape.constant(text.clone());
    let u_v = model.image.fuse(tape, x_v, model.use_gate)?.fused;
    let u_t = model.text.fuse(tape, x_t, model.use_gate)?.fused;
    let ce = if hp.alpha > 0.0 {
        Some(loss_ce(tape, u_v, u_t, labels, &model.head)?)
    } else {
        None
    };
    let consistency = if hp.beta > 0.0 {
        Some(loss_consistency(tape, u_v, u_t)?)
    } else {
        None
    };
    let contrastive = if hp.gamma > 0.0 {
        Some(loss_contrastive(tape, u_v, u_t, hp.tau, hp.exclude_self)?)
    } else {
        None
    };
    let total = total_loss(tape, [ce, consistency, contrastive], hp.weights())?;
    Ok(ProjLosses {
        ce,
        consistency,
        contrastive,
        total,
    })
}

/// Minibatch boundaries over `n` items. A trailing batch of a single item
/// is folded into the previous one, since the contrastive term needs pairs.
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(batch)
        .map(|s| (s, (s + batch).min(n)))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s < 2) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

/// Training data for the projection stage: the real training instances of
/// the split plus any pseudo instances.
pub fn projection_training_set(split: &XShotSplit, corpus: &Corpus, pseudo: Option<&Corpus>) -> Result<Corpus> {
    let real = corpus.subset(&split.train());
    let set = match pseudo {
        Some(p) => real.concat(p)?,
        None => real,
    };
    if set.len() < 2 {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(set)
}

/// Trains both branches and the shared head with Adam. The class space spans
/// every class of the split.
pub fn train_projection(
    split: &XShotSplit,
    corpus: &Corpus,
    pseudo: Option<&Corpus>,
    hp: &ProjHyperParams,
    use_gate: bool,
) -> Result<(ProjectionModel, ProjCurves)> {
    hp.validate()?;
    if let Some(p) = pseudo {
        if p.dim() != corpus.dim() {
            return Err(Error::Dimension {
                op: "pseudo corpus",
                left: p.image().shape(),
                right: corpus.image().shape(),
            });
        }
    }
    let set = projection_training_set(split, corpus, pseudo)?;
    let mut init = stream(hp.seed, "proj/init");
    let mut shuffle = stream(hp.seed, "proj/shuffle");
    let mut model = ProjectionModel::new(corpus.dim(), split.all_classes(), use_gate, hp.clone(), &mut init)?;
    let labels = model.class_indices(set.labels())?;
    let opt = Adam::new(hp.lr)?;
    let mut curves = ProjCurves::default();
    let mut order: Vec<usize> = (0..set.len()).collect();
    let ranges = batch_ranges(set.len(), hp.batch);

    for epoch in 0..hp.epochs {
        order.shuffle(&mut shuffle);
        let mut sums = [0.0f64; 4];
        for &(s, e) in &ranges {
            let idx = &order[s..e];
            let img = set.image().select_rows(idx);
            let txt = set.text().select_rows(idx);
            let lab: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let l = projection_losses(&mut tape, &model, &img, &txt, &lab)?;
            let value = |v: Option<Var>| v.map_or(Ok(0.0), |v| tape.scalar(v));
            sums[0] += value(l.ce)?;
            sums[1] += value(l.consistency)?;
            sums[2] += value(l.contrastive)?;
            sums[3] += tape.scalar(l.total)?;
            if hp.alpha + hp.beta + hp.gamma > 0.0 {
                let grads = tape.backward(l.total)?;
                grads.accumulate_into(model.params_mut());
                opt.step(model.params_mut());
            }
        }
        let b = ranges.len() as f64;
        curves.ce.push(sums[0] / b);
        curves.consistency.push(sums[1] / b);
        curves.contrastive.push(sums[2] / b);
        curves.total.push(sums[3] / b);
        if !(sums[3] / b).is_finite() {
            return Err(Error::NonFinite {
                what: "projection loss".into(),
                index: epoch,
            });
        }
        debug!(
            "proj epoch {epoch}: ce {:.4} cons {:.4} con {:.4} total {:.4}",
            sums[0] / b,
            sums[1] / b,
            sums[2] / b,
            sums[3] / b
        );
    }
    if let (Some(first), Some(last)) = (curves.total.first(), curves.total.last()) {
        info!("proj: total {first:.4} -> {last:.4} over {} epochs", hp.epochs);
    }
    Ok((model, curves))
}

#[cfg(test)]
mod tests {
    use super::batch_ranges;

    #[test]
    fn singleton_tail_is_merged() {
        assert_eq!(batch_ranges(9, 4), vec![(0, 4), (4, 9)]);
        assert_eq!(batch_ranges(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_ranges(3, 8), vec![(0, 3)]);
    }
}
