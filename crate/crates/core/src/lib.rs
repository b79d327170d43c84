//! Salient object detection with a VGG-style encoder, top-down decoder,
//! residual refinement and two auxiliary attention heads.
//!
//! The crate contains everything needed to train and run the network at
//! small scale on a CPU: a tensor library with reverse-mode autodiff, the
//! network and its losses, a two-stage trainer, decoupled full and light
//! inference pipelines, the usual saliency metrics, and utilities that turn
//! saliency maps into regions of interest.

pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod fmt;
pub mod imageio;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod roi;
pub mod saliency;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use saliency::SaliencyMap;
pub use tensor::{Shape, Tensor};
