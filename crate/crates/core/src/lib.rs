//! Style-based GAN generator analysis toolkit.
//!
//! The crate carries its own tensor type and reverse-mode autodiff
//! ([`autodiff`]), the layer mechanisms a style-based generator needs
//! ([`layers`]), the generator and discriminator, adversarial training,
//! magnitude pruning, latent-space editing and a checkpoint container.

pub mod autodiff;
pub mod checkpoint;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod imaging;
pub mod latent;
pub mod layers;
pub mod params;
pub mod pruning;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, Var};
pub use checkpoint::{Checkpoint, ModelSet};
pub use discriminator::Discriminator;
pub use error::{CheckpointError, Error, Result, TensorError};
pub use generator::{Generator, GeneratorConfig, WBatch};
pub use latent::{LatentBatch, Perturbation};
pub use params::{EqualizedParam, ParamStore};
pub use pruning::PruneReport;
pub use tensor::{DType, Scalar, Tensor};
