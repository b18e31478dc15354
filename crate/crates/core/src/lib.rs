//! Part-level text-to-motion diffusion: motion representation and skeleton
//! partition, caption decomposition into per-part texts, the part encoders
//! and full-body optimizer that form the denoiser, the diffusion sampler,
//! evaluation metrics, and the dataset/training harness.

pub mod diffusion;
pub mod error;
pub mod exec;
pub mod harness;
pub mod kinematics;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod text;

pub use error::{Error, Result};
