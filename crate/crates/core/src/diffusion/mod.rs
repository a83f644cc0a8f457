//! Latent diffusion backbone, training and sampling.

pub mod config;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use config::{Ablations, ModelConfig};
pub use model::{Branch, DiffusionModel, ModelInput, Stage};
pub use sampler::{sample, AttrInput, Reference, SampleOutput, SampleRequest, SamplerMode};
pub use schedule::{v_target, NoiseSchedule};
pub use train::{DropoutConfig, TrainConfig, Trainer, TrainingExample};
