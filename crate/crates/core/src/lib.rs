//! Spatio-temporal flow prediction on city grids.
//!
//! The crate contains a small reverse-mode autodiff engine ([`tensor`]), the
//! neural primitives built on it ([`nn`]), the attention-boosted
//! encoder/decoder blocks ([`blocks`]), model assembly and accounting
//! ([`model`]), dataset handling ([`data`]) and training/evaluation
//! ([`trainer`]).

pub mod blocks;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod par;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use model::{Model, ModelConfig, Variant};
pub use tensor::{Gradients, Tape, Tensor, Var};
