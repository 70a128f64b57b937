use crate::numerics::{Parameter, RealArray, Tape, Var};

/// Largest norm-wise relative error between tape gradients and central
/// differences over every parameter reachable through `params`.
pub fn model_fd_error<M, P, L>(model: &mut M, params: P, loss: L, eps: f64) -> f64
where
    P: Fn(&mut M) -> Vec<&mut Parameter>,
    L: Fn(&mut Tape, &M) -> Var,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, model);
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<RealArray> = params(model)
        .into_iter()
        .map(|p| {
            grads
                .param(p)
                .cloned()
                .unwrap_or_else(|| RealArray::zeros(p.shape().0, p.shape().1))
        })
        .collect();
    let eval = |m: &M| {
        let mut t = Tape::new();
        let l = loss(&mut t, m);
        t.scalar(l).unwrap()
    };
    let counts: Vec<usize> = params(model).iter().map(|p| p.value.len()).collect();
    let mut worst: f64 = 0.0;
    for (k, &count) in counts.iter().enumerate() {
        let mut num = vec![0.0; count];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = params(model)[k].value.as_slice()[i];
            params(model)[k].value.as_mut_slice()[i] = orig + eps;
            let up = eval(model);
            params(model)[k].value.as_mut_slice()[i] = orig - eps;
            let down = eval(model);
            params(model)[k].value.as_mut_slice()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let a = analytic[k].as_slice();
        let diff = a
            .iter()
            .zip(&num)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = RealArray::norm(a).max(RealArray::norm(&num));
        if scale > 1e-9 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

pub fn random(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> RealArray {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    RealArray::new(rows, cols, data).unwrap()
}
