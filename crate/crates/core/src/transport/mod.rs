//! Lambertian light transport, sparse voxel visibility and penumbra rendering.

mod footprint;
mod image;
mod matrix;
mod noise;
mod render;
mod visibility;

pub use footprint::{measure_footprint, Footprint, DENSE_BYTES_PER_VALUE};
pub use image::PenumbraImage;
pub use matrix::{build_transport, lambert_kernel, TransportMatrix, EMITTER_NORMAL, WALL_NORMAL};
pub use noise::{add_noise, background_level};
pub use render::{complementarity_check, render_exact, render_linearized, Complementarity};
pub use visibility::{
    build_visibility, build_visibility_for, dense_visibility_bytes, BlockedRun, RowEntry,
    SparseVisibility, VisibilitySet,
};
