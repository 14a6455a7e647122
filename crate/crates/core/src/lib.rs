//! Depth-only head and shoulder pose estimation.

mod common;
pub mod crops;
pub mod dataio;
pub mod ffd;
pub mod geometry;
pub mod image;
pub mod localizer;
pub mod metrics;
pub mod motion;
pub mod pipeline;
pub mod posenet;

pub use common::{smooth, ConfigError};
