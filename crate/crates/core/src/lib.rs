//! Rater-aware prompt tuning for U-shaped segmentation networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`params`], [`ptnsr`]: dense tensors, a
//!   reverse-mode tape with parameter freezing, and the tensor file format.
//! - [`gradcheck`]: central finite-difference checks of the tape.
//! - [`model`]: the prompted U-Net with implantable transformer blocks.
//! - [`synth`]: a deterministic multi-rater synthetic dataset.
//! - [`train`]: Dice loss, Adam, schedules, samplers and baselines.
//! - [`checkpoint`]: weights, optimizer state and logs on disk.
//! - [`eval`]: Dice metrics, evaluation matrices, ablations and overlays.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below name the
//! two precisions in use.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod ptnsr;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::{Param, ParamGroup, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
