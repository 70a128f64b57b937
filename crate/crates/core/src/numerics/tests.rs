use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> RealArray {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    RealArray::new(rows, cols, data).unwrap()
}

/// Central-difference gradient of `f` over every entry of every parameter,
/// compared norm-wise against the tape gradient.
fn max_rel_err<F>(params: &mut [Parameter], f: F, eps: f64) -> f64
where
    F: Fn(&mut Tape, &[Parameter]) -> Var,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params);
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<RealArray> = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, p)| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| RealArray::zeros(p.shape().0, p.shape().1))
        })
        .collect();

    let eval = |ps: &[Parameter]| {
        let mut t = Tape::new();
        let l = f(&mut t, ps);
        t.scalar(l).unwrap()
    };
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let mut num = vec![0.0; params[k].value.len()];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = params[k].value.as_slice()[i];
            params[k].value.as_mut_slice()[i] = orig + eps;
            let up = eval(params);
            params[k].value.as_mut_slice()[i] = orig - eps;
            let down = eval(params);
            params[k].value.as_mut_slice()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let a = analytic[k].as_slice();
        let diff: f64 = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = RealArray::norm(a).max(RealArray::norm(&num)).max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

#[test]
fn linear_identity_and_sum_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(RealArray::from_rows(&[[1.0, 2.0]]).unwrap());
    let w = Parameter::new(RealArray::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap());
    let b = Parameter::zeros(1, 2);
    let y = tape.linear(x, &w, &b).unwrap();
    assert_eq!(tape.value(y).as_slice(), &[1.0, 2.0]);

    let x = tape.constant(RealArray::from_rows(&[[1.0, 1.0]]).unwrap());
    let w = Parameter::new(RealArray::from_rows(&[[2.0], [3.0]]).unwrap());
    let b = Parameter::new(RealArray::scalar(1.0));
    let y = tape.linear(x, &w, &b).unwrap();
    assert_eq!(tape.value(y).as_slice(), &[6.0]);
}

#[test]
fn linear_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let x = tape.constant(RealArray::zeros(1, 3));
    let w = Parameter::zeros(2, 2);
    let b = Parameter::zeros(1, 2);
    let err = tape.linear(x, &w, &b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("(1, 3)") && msg.contains("(2, 2)"), "{msg}");
}

#[test]
fn activation_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(RealArray::from_rows(&[[-3.0, 2.5, 0.0]]).unwrap());
    let r = tape.relu(x);
    assert_eq!(tape.value(r).as_slice(), &[0.0, 2.5, 0.0]);
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s).get(0, 2), 0.5);
    assert!(tape.value(s).as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    let l = tape.leaky_relu(x, 0.2);
    assert!((tape.value(l).get(0, 0) + 0.6).abs() < 1e-15);

    let z = tape.constant(RealArray::zeros(1, 3));
    let sm = tape.softmax_rows(z);
    for &v in tape.value(sm).as_slice() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let x = tape.constant(random(6, 5, &mut rng).map(|v| 30.0 * v));
    let sm = tape.softmax_rows(x);
    let y = tape.value(sm);
    for i in 0..y.rows() {
        let s: f64 = y.row(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn backward_of_sum_is_ones() {
    let p = Parameter::new(RealArray::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
    let mut tape = Tape::new();
    let x = tape.param(&p);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.param(&p).unwrap().as_slice(), &[1.0; 4]);
}

#[test]
fn backward_of_mean_square_norm() {
    let p = Parameter::new(RealArray::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap());
    let mut tape = Tape::new();
    let x = tape.param(&p);
    let sq = tape.square(x);
    let m = tape.mean(sq);
    let g = tape.backward(m).unwrap();
    let expected = p.value.map(|v| 2.0 * v / 4.0);
    assert_eq!(g.param(&p).unwrap(), &expected);
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let x = tape.constant(RealArray::zeros(2, 2));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn accumulate_into_adds_to_existing_gradient() {
    let mut p = Parameter::new(RealArray::scalar(2.0));
    p.grad = RealArray::scalar(1.0);
    let mut tape = Tape::new();
    let x = tape.param(&p);
    let y = tape.square(x);
    let g = tape.backward(y).unwrap();
    g.accumulate_into([&mut p]);
    assert_eq!(p.grad.as_slice(), &[5.0]);
}

#[test]
fn linear_layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(4, 8, &mut rng);
    let mut params = vec![
        Parameter::new(random(8, 3, &mut rng)),
        Parameter::new(random(1, 3, &mut rng)),
    ];
    let err = max_rel_err(
        &mut params,
        |t, ps| {
            let xv = t.constant(x.clone());
            let y = t.linear(xv, &ps[0], &ps[1]).unwrap();
            let s = t.square(y);
            t.sum(s)
        },
        1e-5,
    );
    assert!(err < 1e-6, "{err}");
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights = random(4, 5, &mut rng);
    type Build = fn(&mut Tape, Var, Var) -> Var;
    let cases: Vec<(&str, Build)> = vec![
        ("relu", |t, a, _| t.relu(a)),
        ("leaky", |t, a, _| t.leaky_relu(a, 0.2)),
        ("sigmoid", |t, a, _| t.sigmoid(a)),
        ("exp", |t, a, _| t.exp(a)),
        ("softmax", |t, a, _| t.softmax_rows(a)),
        ("log_softmax", |t, a, _| t.log_softmax_rows(a)),
        ("mul", |t, a, b| t.mul(a, b).unwrap()),
        ("sub", |t, a, b| t.sub(a, b).unwrap()),
        ("matmul_t", |t, a, b| t.matmul_t(a, b).unwrap()),
        ("transpose", |t, a, _| t.transpose(a)),
        ("row_norm", |t, a, _| t.row_norm(a)),
        ("normalize", |t, a, _| t.normalize_rows(a).unwrap()),
        ("concat_cols", |t, a, b| t.concat_cols(a, b).unwrap()),
        ("concat_rows", |t, a, b| t.concat_rows(a, b).unwrap()),
        ("slice", |t, a, _| t.slice_cols(a, 1, 4).unwrap()),
        ("row_sum", |t, a, _| t.row_sum(a)),
        ("lse", |t, a, _| t.log_sum_exp_rows(a, None).unwrap()),
        ("lse_masked", |t, a, _| {
            let mask = (0..20).map(|i| i % 3 != 0).collect();
            t.log_sum_exp_rows(a, Some(mask)).unwrap()
        }),
        ("gather", |t, a, _| t.gather_cols(a, vec![0, 3, 2, 4]).unwrap()),
        ("mul_col", |t, a, b| {
            let c = t.slice_cols(b, 0, 1).unwrap();
            t.mul_col(a, c).unwrap()
        }),
        ("mul_row", |t, a, b| {
            let bt = t.transpose(b);
            let r = t.row_sum(bt);
            let r = t.transpose(r);
            t.mul_row(a, r).unwrap()
        }),
        ("clamp", |t, a, _| t.clamp(a, -0.5, 0.5)),
        ("ln", |t, a, _| {
            let e = t.exp(a);
            t.ln(e)
        }),
    ];
    for (name, build) in cases {
        let mut params = vec![
            Parameter::new(random(4, 5, &mut rng)),
            Parameter::new(random(4, 5, &mut rng)),
        ];
        let w = weights.clone();
        let f = move |t: &mut Tape, ps: &[Parameter]| {
            let a = t.param(&ps[0]);
            let b = t.param(&ps[1]);
            let y = build(t, a, b);
            // Random projection so that every output entry matters.
            let (r, c) = t.value(y).shape();
            let proj = RealArray::from_vec(r, c, w.as_slice().iter().cycle().take(r * c).cloned().collect());
            let pv = t.constant(proj);
            let z = t.mul(y, pv).unwrap();
            t.sum(z)
        };
        let err = max_rel_err(&mut params, f, 1e-5);
        assert!(err < 1e-6, "{name}: {err}");
    }
}

#[test]
fn tape_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::new(&[6, 10, 3], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        let x = random(5, 6, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = mlp.forward(&mut tape, xv).unwrap();
        let l = tape.sum(y);
        let v = tape.scalar(l).unwrap();
        let g = tape.backward(l).unwrap();
        (v, g.param(&mlp.layers[0].w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn mlp_tape_and_untaped_forward_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mlp = Mlp::new(&[4, 7, 7, 2], Activation::LeakyRelu, Activation::Identity, &mut rng).unwrap();
    let x = random(3, 4, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = mlp.forward(&mut tape, xv).unwrap();
    assert_eq!(tape.value(y), &mlp.apply(&x).unwrap());
    assert_eq!(mlp.widths(), vec![4, 7, 7, 2]);
}
