//! Passive non-line-of-sight reconstruction from a single penumbra photograph.
//!
//! The crate provides a Lambertian forward model with sparse voxel occlusion,
//! separable least-squares inversion (alternating minimization, variable
//! projection, localization and TV emitter recovery), and a small
//! shadow-conditioned point-cloud diffusion model.

pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod inversion;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{PointCloud, SceneConfig, Vec3, VoxelGrid};
pub use transport::{PenumbraImage, TransportMatrix, VisibilitySet};
