//! Learning latent permutations with the Sinkhorn operator.
//!
//! The numeric core ([`matrix`], [`sinkhorn`], [`matching`], [`gumbel`],
//! [`autodiff`], [`metrics`]) is generic over [`Scalar`] (`f32` or `f64`).
//! The experiment drivers ([`sortnet`], [`vi`]) run in `f64`.

pub mod autodiff;
pub mod error;
pub mod gumbel;
pub mod io;
pub mod matching;
pub mod matrix;
pub mod metrics;
pub mod optim;
pub mod perm;
pub mod rng;
pub mod scalar;
pub mod sinkhorn;
pub mod sortnet;
pub mod vi;

pub use error::{Error, Result};
pub use matrix::{DoublyStochasticMatrix, LogitsMatrix, Matrix};
pub use perm::Permutation;
pub use scalar::Scalar;
pub use sinkhorn::SinkhornConfig;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Logits64 = LogitsMatrix<f64>;
pub type Logits32 = LogitsMatrix<f32>;
pub type DoublyStochastic64 = DoublyStochasticMatrix<f64>;
pub type DoublyStochastic32 = DoublyStochasticMatrix<f32>;
