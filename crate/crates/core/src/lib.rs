pub mod attention;
pub mod audio;
pub mod bench;
pub mod codec;
pub mod conditioners;
pub mod dataio;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod nn;
pub mod rope;

pub use error::{Error, Result};
