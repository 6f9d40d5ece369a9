//! Gaussian mixture variational autoencoders trained either by summing the
//! evidence lower bound over every cluster assignment or through a
//! Concrete (Gumbel-Softmax) relaxation of the cluster variable.

pub mod checkpoint;
pub mod data;
pub mod distributions;
pub mod error;
pub mod model;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Gmvae, GmvaeConfig, Likelihood};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
