//! Graph-coupled oscillator networks: forward dynamics, couplings,
//! diagnostics and training on a small reverse-mode tape.

pub mod autodiff;
pub mod checkpoint;
pub mod checks;
pub mod coupling;
pub mod dataset;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod format;
pub mod graph;
pub mod rng;
pub mod tensor;
#[cfg(test)]
mod testutil;
pub mod training;

pub use autodiff::{Activation, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use graph::{Graph, Neighborhoods, NormKind, NormalizedAdjacency};
pub use rng::Rng;
pub use tensor::Matrix;
