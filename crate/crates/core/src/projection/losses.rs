use crate::error::{Error, Result};
use crate::numerics::{Linear, RealArray, Tape, Var};

/// Cross-entropy of the shared head on both modalities, summed over the two
/// and averaged over pairs.
pub fn loss_ce(tape: &mut Tape, u_v: Var, u_t: Var, labels: &[usize], head: &Linear) -> Result<Var> {
    let n = tape.value(u_v).rows();
    let c = head.d_out();
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::contract(format!("label index {bad} out of range for {c} classes")));
    }
    let mut total = None;
    for u in [u_v, u_t] {
        let logits = head.forward(tape, u)?;
        let logp = tape.log_softmax_rows(logits);
        let picked = tape.gather_cols(logp, labels.to_vec())?;
        let s = tape.sum(picked);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let total = total.expect("two modalities");
    Ok(tape.scale(total, -1.0 / n.max(1) as f64))
}

/// Mean Euclidean distance between paired rows.
pub fn loss_consistency(tape: &mut Tape, u_v: Var, u_t: Var) -> Result<Var> {
    let d = tape.sub(u_v, u_t)?;
    let norms = tape.row_norm(d);
    Ok(tape.mean(norms))
}

/// Instance-level contrastive loss over all `2n` embeddings.
///
/// Each embedding is an anchor whose positive is its paired row in the
/// other modality; the denominator runs over every other embedding of both
/// modalities (and over the anchor itself when `exclude_self` is false).
/// The sum over the `2n` anchors is divided by `n`.
pub fn loss_contrastive(tape: &mut Tape, u_v: Var, u_t: Var, tau: f64, exclude_self: bool) -> Result<Var> {
    let n = tape.value(u_v).rows();
    if n < 2 {
        return Err(Error::contract(format!("contrastive loss needs at least 2 pairs, got {n}")));
    }
    if !(tau > 0.0) {
        return Err(Error::contract("temperature must be positive"));
    }
    let nv = tape.normalize_rows(u_v)?;
    let nt = tape.normalize_rows(u_t)?;
    let all = tape.concat_rows(nv, nt)?;
    let sim = tape.matmul_t(all, all)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let m = 2 * n;
    let partner: Vec<usize> = (0..m).map(|r| if r < n { r + n } else { r - n }).collect();
    let mask = exclude_self.then(|| (0..m * m).map(|k| k / m != k % m).collect());
    let pos = tape.gather_cols(logits, partner)?;
    let lse = tape.log_sum_exp_rows(logits, mask)?;
    let log_p = tape.sub(pos, lse)?;
    let s = tape.sum(log_p);
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// Loss weights, one per term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub consistency: f64,
    pub contrastive: f64,
}

/// `w_ce * ce + w_cons * cons + w_con * con`. Terms with zero weight may be
/// passed as `None` and are skipped.
pub fn total_loss(
    tape: &mut Tape,
    terms: [Option<Var>; 3],
    weights: LossWeights,
) -> Result<Var> {
    let ws = [weights.ce, weights.consistency, weights.contrastive];
    let mut acc = tape.constant(RealArray::scalar(0.0));
    for (term, w) in terms.into_iter().zip(ws) {
        if w == 0.0 {
            continue;
        }
        let t = term.ok_or_else(|| Error::contract("weighted loss term was not computed"))?;
        let scaled = tape.scale(t, w);
        acc = tape.add(acc, scaled)?;
    }
    Ok(acc)
}
