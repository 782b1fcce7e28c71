pub mod config;
pub mod dsp;
pub mod error;
pub mod gradsuite;
pub mod layers;
pub mod model;
pub mod objective;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
