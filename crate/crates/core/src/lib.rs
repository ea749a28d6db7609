pub mod bench;
pub mod broker;
pub mod config;
pub mod error;
pub mod media;
pub mod orchestrator;
pub mod pipeline;
pub mod segmenter;
pub mod time;
pub mod visual;
pub mod wav;
pub mod wire;

pub use error::{Error, Result};
