pub mod audio;
pub mod colorizer;
pub mod dsp;
pub mod error;
pub mod events;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod spectrogram;
pub mod stats;

pub use error::{Error, Result};
