//! Dense networks: ELU multilayer perceptrons with an optional unit-sphere
//! output, a state-independent Gaussian action head and Adam.

mod adam;
mod gaussian;
mod gemm;
mod mlp;

pub use adam::{clip_grad_norm, Adam, AdamState};
pub use gaussian::GaussianHead;
pub use mlp::{elu, Mlp, MlpSpec, Tape, NORM_EPS};
