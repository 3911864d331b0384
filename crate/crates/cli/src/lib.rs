//! Harness around the segmentation network: a portable volume format,
//! synthetic phantoms, configuration, training, evaluation and the
//! `hdenseformer` command line.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod mvol;
pub mod optim;
pub mod synth;
pub mod train;

pub use error::{HarnessError, Result};
