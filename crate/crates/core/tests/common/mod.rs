#![allow(dead_code)]

use std::path::Path;

use rand::Rng;
use xshot::numerics::{Parameter, RealArray, Tape, Var};
use xshot::pipeline::ExperimentConfig;

pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> RealArray {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    RealArray::new(rows, cols, data).unwrap()
}

/// Worst norm-wise relative error between tape gradients and central
/// differences, over every parameter returned by `params`. Parameters whose
/// gradient is zero on both sides are skipped.
pub fn fd_error<M, P, L>(model: &mut M, params: P, loss: L, eps: f64) -> f64
where
    P: Fn(&mut M) -> Vec<&mut Parameter>,
    L: Fn(&mut Tape, &M) -> Var,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, model);
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = params(model)
        .into_iter()
        .map(|p| match grads.param(p) {
            Some(g) => g.as_slice().to_vec(),
            None => vec![0.0; p.value.len()],
        })
        .collect();
    let eval = |m: &M| {
        let mut t = Tape::new();
        let l = loss(&mut t, m);
        t.scalar(l).unwrap()
    };
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut num = vec![0.0; a.len()];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = params(model)[k].value.as_slice()[i];
            params(model)[k].value.as_mut_slice()[i] = orig + eps;
            let up = eval(model);
            params(model)[k].value.as_mut_slice()[i] = orig - eps;
            let down = eval(model);
            params(model)[k].value.as_mut_slice()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let diff: f64 = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = RealArray::norm(a).max(RealArray::norm(&num));
        if scale > 1e-9 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// The synthetic preset with shortened training, for pipeline plumbing tests.
pub fn quick_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("synthetic").unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg.x_shots = vec![1];
    cfg.seeds = vec![0];
    cfg.generation.epochs = 4;
    cfg.projection.epochs = 4;
    cfg.gen_num = 5;
    cfg
}
