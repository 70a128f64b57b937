use rand::Rng;
use serde::{Deserialize, Serialize};

use super::array::RealArray;
use super::param::Parameter;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }

    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Activation::Sigmoid => {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => f64::from(pre > 0.0),
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => {
                let s = self.eval(pre);
                s * (1.0 - s)
            }
        }
    }
}

/// Fully-connected layer `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            w: Parameter::glorot(d_in, d_out, rng),
            b: Parameter::zeros(1, d_out),
        }
    }

    pub fn from_params(w: Parameter, b: Parameter) -> Result<Self> {
        if b.shape() != (1, w.shape().1) {
            return Err(Error::Dimension {
                op: "Linear::from_params",
                left: w.shape(),
                right: b.shape(),
            });
        }
        Ok(Self { w, b })
    }

    pub fn d_in(&self) -> usize {
        self.w.shape().0
    }

    pub fn d_out(&self) -> usize {
        self.w.shape().1
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, &self.w, &self.b)
    }

    /// Untaped forward pass.
    pub fn apply(&self, x: &RealArray) -> Result<RealArray> {
        let mut out = x.matmul(&self.w.value)?;
        let b = self.b.value.as_slice();
        for i in 0..out.rows() {
            for (o, v) in out.row_mut(i).iter_mut().zip(b) {
                *o += v;
            }
        }
        Ok(out)
    }
}

/// Stack of linear layers with one activation between layers and another
/// after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.d_in()];
        w.extend(self.layers.iter().map(Linear::d_out));
        w
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(tape, h)?;
            h = self.activation(i).apply(tape, pre);
        }
        Ok(h)
    }

    pub fn apply(&self, x: &RealArray) -> Result<RealArray> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            h = layer.apply(&h)?.map(|v| act.eval(v));
        }
        Ok(h)
    }

    /// Pre-activations of every layer for an untaped forward pass.
    pub fn pre_activations(&self, x: &RealArray) -> Result<Vec<RealArray>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.apply(&h)?;
            let act = self.activation(i);
            h = pre.map(|v| act.eval(v));
            out.push(pre);
        }
        Ok(out)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b])
    }
}
