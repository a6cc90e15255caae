//! Anomaly-scorer and promptable-segmenter contracts and their implementations.
//!
//! * [`synthetic`]: deterministic scenes with known latent regions, used as a test oracle.
//! * [`file`]: precomputed anomaly maps and feature grids listed in a JSON manifest.
//! * `graph` (feature `graphs`): ONNX encoder, decoder and scorer graphs.

pub mod file;
#[cfg(feature = "graphs")]
pub mod graph;
pub mod synthetic;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::types::{BinaryMask, FeatureGrid, PromptSet, ScoreGrid};

/// One image handed to the backends: a stable identifier plus decoded pixels
/// when the backend needs them.
#[derive(Debug, Clone)]
pub struct ImageInput {
    pub id: String,
    pub pixels: Option<RgbImage>,
}

impl ImageInput {
    pub fn new(id: impl Into<String>) -> Self {
        ImageInput {
            id: id.into(),
            pixels: None,
        }
    }

    pub fn with_pixels(id: impl Into<String>, pixels: RgbImage) -> Self {
        ImageInput {
            id: id.into(),
            pixels: Some(pixels),
        }
    }
}

/// One decoder output: mask at working resolution, low-resolution logits and
/// the decoder's own quality estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub mask: BinaryMask,
    pub logit: ScoreGrid,
    pub score: f64,
}

/// `(channels, height, width)` of the encoder output.
pub type FeatureDims = (usize, usize, usize);

pub trait ScorerBackend: Send + Sync {
    fn name(&self) -> &str;

    fn native_resolution(&self) -> usize;

    /// Normalized anomaly map at [`native_resolution`](Self::native_resolution).
    fn score(&self, image: &ImageInput) -> Result<ScoreGrid>;
}

pub trait SegmenterBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Side of the square frame masks and prompt coordinates live in.
    fn working_resolution(&self) -> usize;

    /// Side of the square dense-logit grid consumed and produced by `decode`.
    fn logit_resolution(&self) -> usize;

    fn feature_dims(&self) -> FeatureDims;

    fn encode(&self, image: &ImageInput) -> Result<FeatureGrid>;

    /// Returns at least one candidate. The image is passed through so backends
    /// keyed by image identity can look up per-image state.
    fn decode(
        &self,
        image: &ImageInput,
        features: &FeatureGrid,
        prompts: &PromptSet,
        multimask: bool,
    ) -> Result<Vec<Candidate>>;
}

/// Checks the resolution contract on decoder output.
pub fn check_candidates(segmenter: &dyn SegmenterBackend, candidates: &[Candidate]) -> Result<()> {
    let work = segmenter.working_resolution();
    let logit = segmenter.logit_resolution();
    if candidates.is_empty() {
        return Err(Error::Contract {
            context: format!("{} decode", segmenter.name()),
            expected: "at least one candidate".into(),
            found: "none".into(),
        });
    }
    for c in candidates {
        if c.mask.dims() != (work, work) || c.logit.dims() != (logit, logit) {
            return Err(Error::Contract {
                context: format!("{} decode", segmenter.name()),
                expected: format!("mask {work}x{work}, logit {logit}x{logit}"),
                found: format!("mask {:?}, logit {:?}", c.mask.dims(), c.logit.dims()),
            });
        }
    }
    Ok(())
}

/// Wraps a segmenter and counts decoder invocations.
pub struct CountingSegmenter {
    inner: Arc<dyn SegmenterBackend>,
    decodes: AtomicUsize,
}

impl CountingSegmenter {
    pub fn new(inner: Arc<dyn SegmenterBackend>) -> Self {
        CountingSegmenter {
            inner,
            decodes: AtomicUsize::new(0),
        }
    }

    pub fn decode_count(&self) -> usize {
        self.decodes.load(Ordering::SeqCst)
    }
}

impl SegmenterBackend for CountingSegmenter {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn working_resolution(&self) -> usize {
        self.inner.working_resolution()
    }

    fn logit_resolution(&self) -> usize {
        self.inner.logit_resolution()
    }

    fn feature_dims(&self) -> FeatureDims {
        self.inner.feature_dims()
    }

    fn encode(&self, image: &ImageInput) -> Result<FeatureGrid> {
        self.inner.encode(image)
    }

    fn decode(
        &self,
        image: &ImageInput,
        features: &FeatureGrid,
        prompts: &PromptSet,
        multimask: bool,
    ) -> Result<Vec<Candidate>> {
        self.decodes.fetch_add(1, Ordering::SeqCst);
        self.inner.decode(image, features, prompts, multimask)
    }
}

/// A scorer and segmenter pair ready for a pipeline run.
#[derive(Clone)]
pub struct Backends {
    pub scorer: Arc<dyn ScorerBackend>,
    pub segmenter: Arc<dyn SegmenterBackend>,
}

impl Backends {
    pub fn describe(&self) -> String {
        format!("scorer={} segmenter={}", self.scorer.name(), self.segmenter.name())
    }
}
