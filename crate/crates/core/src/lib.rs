//! Zero-shot anomaly segmentation by prompting a promptable segmenter with
//! points mined from an anomaly map.
//!
//! The flow per image is [`pipeline::process_image`]: the scorer produces an
//! anomaly map, [`ppg::generate_prompts`] mines positive and negative points,
//! and [`cps::run_cascade`] refines the segmenter output over up to three
//! decoder passes.

pub mod backends;
pub mod config;
pub mod cps;
pub mod dataset;
pub mod error;
pub mod imgproc;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod ppg;
pub mod types;

pub use config::{OutputMapMode, PipelineConfig};
pub use error::{Error, Result};
pub use types::{
    BinaryMask, BoundingBox, FeatureGrid, KernelShape, PointPrompt, Polarity, PromptSet,
    ScoreGrid, StructuringElement,
};
