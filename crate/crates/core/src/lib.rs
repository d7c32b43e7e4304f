//! Segmentation-guided multimodal classification of 3D stone volumes with
//! clinical records: model, losses, metrics, synthetic data and training harness.

pub mod attention;
pub mod check;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod msaf;
pub mod params;
pub mod segmenter;
pub mod vtt;

pub use error::{Error, Result};
