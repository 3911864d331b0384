//! Hybrid densely connected transformer for multimodal tumor segmentation.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`], [`autograd`], [`ops`], [`gradcheck`]: a small dense tensor
//!   engine with tape-based reverse-mode differentiation.
//! * [`nn`], [`dct`], [`mpe`], [`backbone`]: the network. Each imaging
//!   modality gets its own transformer embedding path built from densely
//!   connected transformer blocks; the fused path features are added into
//!   the encoder of a U-shaped CNN that emits four deep-supervision outputs.
//! * [`loss`], [`metrics`]: focal + Dice training objective and the DSC /
//!   Jaccard / HD95 evaluation metrics.
//! * [`complexity`]: closed-form parameter and FLOP counts.

pub mod autograd;
pub mod backbone;
pub mod complexity;
pub mod dct;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod mpe;
pub mod nn;
pub mod ops;
pub mod params;
pub mod suites;
pub mod tensor;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Result, TensorError};
pub use params::{ParamId, ParamStore};
pub use tensor::{Real, Tensor};
