//! Dense arrays, reverse-mode differentiation, layers and Adam.

mod array;
mod layers;
mod optim;
mod param;
mod tape;

pub use array::RealArray;
pub use layers::{Activation, Linear, Mlp, LEAKY_SLOPE};
pub use optim::Adam;
pub use param::{ParamId, Parameter};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests;
