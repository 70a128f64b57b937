use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::array::RealArray;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a parameter on a tape. Fresh per construction; not persisted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug)]
pub struct Parameter {
    id: ParamId,
    pub value: RealArray,
    pub grad: RealArray,
    pub adam_m: RealArray,
    pub adam_v: RealArray,
    pub step: u64,
}

impl Parameter {
    pub fn new(value: RealArray) -> Self {
        let (r, c) = value.shape();
        Self {
            id: ParamId::fresh(),
            value,
            grad: RealArray::zeros(r, c),
            adam_m: RealArray::zeros(r, c),
            adam_v: RealArray::zeros(r, c),
            step: 0,
        }
    }

    /// Restores a parameter with optimizer state, as read from a checkpoint.
    pub fn with_state(value: RealArray, adam_m: RealArray, adam_v: RealArray, step: u64) -> Self {
        let mut p = Self::new(value);
        p.adam_m = adam_m;
        p.adam_v = adam_v;
        p.step = step;
        p
    }

    /// Glorot-uniform initialization.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        Self::new(RealArray::from_vec(fan_in, fan_out, data))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(RealArray::zeros(rows, cols))
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
