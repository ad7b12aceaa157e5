//! Shadow-conditioned denoising diffusion over point clouds.
//!
//! A small strided-convolution encoder maps a penumbra photograph to a
//! latent; a pointwise U-Net predicts the noise added to each point given
//! that latent and the timestep. Points never interact, so a model trained
//! on small clouds can be sampled at any size.

mod dataset;
mod model;
mod nn;
mod sample;
mod schedule;
mod shapes;
mod train;

pub use dataset::{
    generate_dataset, generate_instance, held_out_count, smooth_emitter, DatasetConfig, Instance,
    ShapeClass, ToyScene,
};
pub use model::{DenoiserParams, ModelConfig};
pub use nn::AdamW;
pub use sample::{reverse_chain, reverse_sample};
pub use schedule::{cosine_schedule, forward_noising, forward_step, NoiseSchedule, COSINE_OFFSET};
pub use shapes::{fps_resample, sample_surface_points, Primitive, Shape};
pub use train::{
    denoising_loss_with, draw_terms, ema_decay_at, ema_update, loss_and_gradient, train,
    training_step, Example, NoisyTerm, TrainingConfig,
};
