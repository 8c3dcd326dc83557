//! Differentiable neural primitives recorded on a [`Tape`](crate::Tape).
//!
//! Feature maps are laid out `[batch, height, width, channels]`.

pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod init;
mod ops;
pub mod pool;

pub use batchnorm::{BatchStats, BnMode};
pub use conv::{ConvGeom, Padding};
pub use ops::time_distribute;
pub use pool::PoolKind;
