//! Per-image driver: score, encode, mine prompts, cascade.

use crate::backends::{Backends, ImageInput};
use crate::config::{OutputMapMode, PipelineConfig};
use crate::cps::{extend_cascade, run_cascade, CascadeTrace};
use crate::error::{Error, Result};
use crate::imgproc::{minmax_normalize, resize_bilinear, resize_mask_nearest};
use crate::ppg::{generate_prompts, respects_spacing, PpgIntermediates};
use crate::types::{BinaryMask, FeatureGrid, PromptSet, ScoreGrid};

/// Backend outputs that do not depend on the pipeline configuration.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Normalized anomaly map at the segmenter's working resolution.
    pub anomaly: ScoreGrid,
    pub features: FeatureGrid,
}

#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub id: String,
    pub prompts: PromptSet,
    pub ppg: PpgIntermediates,
    pub trace: CascadeTrace,
}

impl ImageOutcome {
    pub fn final_mask(&self) -> &BinaryMask {
        self.trace.final_mask()
    }

    /// The final map at an image's own size. Binary maps are resampled by
    /// nearest neighbour so they stay binary.
    pub fn output_map(&self, config: &PipelineConfig, height: usize, width: usize) -> Result<ScoreGrid> {
        match config.output_map_mode {
            OutputMapMode::Binary => Ok(mask_to_image_size(self.final_mask(), height, width)?.to_scores()),
            OutputMapMode::Blended => map_to_image_size(&self.trace.final_map, height, width),
        }
    }
}

/// Scores and encodes one image.
pub fn encode_image(backends: &Backends, image: &ImageInput) -> Result<Encoded> {
    let raw = backends.scorer.score(image)?;
    let work = backends.segmenter.working_resolution();
    let anomaly = minmax_normalize(&resize_bilinear(&raw, work, work)?)?;
    let features = backends.segmenter.encode(image)?;
    let expected = backends.segmenter.feature_dims();
    if features.dims() != expected {
        return Err(Error::Contract {
            context: format!("{} encode of `{}`", backends.segmenter.name(), image.id),
            expected: format!("features {expected:?}"),
            found: format!("{:?}", features.dims()),
        });
    }
    Ok(Encoded { anomaly, features })
}

/// Prompt mining and the cascade on already-encoded inputs.
pub fn segment_encoded(
    backends: &Backends,
    image: &ImageInput,
    encoded: &Encoded,
    config: &PipelineConfig,
) -> Result<ImageOutcome> {
    let (prompts, ppg) = generate_prompts(&encoded.anomaly, &encoded.features, config)?;
    let trace = run_cascade(
        backends.segmenter.as_ref(),
        image,
        &encoded.features,
        &prompts,
        &encoded.anomaly,
        config,
    )?;
    let outcome = ImageOutcome {
        id: image.id.clone(),
        prompts,
        ppg,
        trace,
    };
    check_outcome(&outcome, config)?;
    Ok(outcome)
}

pub fn process_image(
    backends: &Backends,
    image: &ImageInput,
    config: &PipelineConfig,
) -> Result<ImageOutcome> {
    let encoded = encode_image(backends, image)?;
    segment_encoded(backends, image, &encoded, config)
}

/// Outcomes at depths 1, 2 and 3, each extending the previous trace, so
/// three decoder calls are made in total.
pub fn depth_ladder(
    backends: &Backends,
    image: &ImageInput,
    config: &PipelineConfig,
) -> Result<Vec<ImageOutcome>> {
    let encoded = encode_image(backends, image)?;
    let shallow = PipelineConfig {
        cascade_depth: 1,
        ..config.clone()
    };
    let first = segment_encoded(backends, image, &encoded, &shallow)?;
    let mut ladder = vec![first];
    for depth in 2..=3u8 {
        let cfg = PipelineConfig {
            cascade_depth: depth,
            ..config.clone()
        };
        let prev = ladder.last().expect("non-empty");
        let trace = extend_cascade(
            backends.segmenter.as_ref(),
            image,
            &encoded.features,
            &prev.prompts,
            &encoded.anomaly,
            &prev.trace,
            &cfg,
        )?;
        let outcome = ImageOutcome {
            trace,
            ..prev.clone()
        };
        check_outcome(&outcome, &cfg)?;
        ladder.push(outcome);
    }
    Ok(ladder)
}

/// Resamples a working-resolution map to an image's own size.
pub fn map_to_image_size(map: &ScoreGrid, height: usize, width: usize) -> Result<ScoreGrid> {
    resize_bilinear(map, height, width)
}

pub fn mask_to_image_size(mask: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    resize_mask_nearest(mask, height, width)
}

fn violation(id: &str, what: String) -> Error {
    Error::Contract {
        context: format!("pipeline invariants for `{id}`"),
        expected: "prompts inside their regions and a trace matching the depth".into(),
        found: what,
    }
}

/// Runtime check of the prompt placement and trace-shape invariants.
pub fn check_outcome(outcome: &ImageOutcome, config: &PipelineConfig) -> Result<()> {
    let id = &outcome.id;
    let ppg = &outcome.ppg;
    if ppg.degraded != ppg.extreme_mask.is_all_background() {
        return Err(violation(id, "degraded flag disagrees with S_a".into()));
    }
    let positives: Vec<_> = outcome.prompts.positives().copied().collect();
    let negatives: Vec<_> = outcome.prompts.negatives().copied().collect();
    if !ppg.degraded {
        if let Some(p) = positives.iter().find(|p| !ppg.extreme_mask.contains(p)) {
            return Err(violation(id, format!("positive ({}, {}) outside S_a", p.x, p.y)));
        }
        if let Some(p) = negatives.iter().find(|p| !ppg.ring_mask.contains(p)) {
            return Err(violation(id, format!("negative ({}, {}) outside the ring", p.x, p.y)));
        }
    }
    if !respects_spacing(&positives, ppg.positive_spacing) {
        return Err(violation(id, "positive spacing".into()));
    }
    let depth = config.cascade_depth as usize;
    let t = &outcome.trace;
    if t.stage_masks.len() != depth
        || t.stage_logits.len() != depth
        || t.stage_scores.len() != depth
        || t.derived_box.is_some() != (depth == 3 && !t.degraded)
    {
        return Err(violation(id, format!("trace of depth {} for configured depth {depth}", t.depth())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::synthetic::{bundled_suite, SyntheticBackend, DEFAULT_CHANNELS};
    use crate::backends::{CountingSegmenter, SegmenterBackend};
    use std::sync::Arc;

    fn backends() -> (Backends, Arc<SyntheticBackend>) {
        let synth = Arc::new(SyntheticBackend::new(bundled_suite(3), DEFAULT_CHANNELS).unwrap());
        (
            Backends {
                scorer: synth.clone(),
                segmenter: synth.clone(),
            },
            synth,
        )
    }

    #[test]
    fn defect_scenes_segment_exactly() {
        let (b, synth) = backends();
        let config = PipelineConfig::default();
        for id in synth.scene_ids() {
            let scene = synth.scene(id).unwrap();
            if !scene.spec.is_defective() || scene.spec.anomalies.len() != 1 {
                continue;
            }
            let out = process_image(&b, &ImageInput::new(id), &config).unwrap();
            assert_eq!(out.final_mask(), &scene.anomaly_truth, "{id}");
        }
    }

    #[test]
    fn ladder_uses_three_decodes_and_matches_direct_runs() {
        let (b, synth) = backends();
        let counting = Arc::new(CountingSegmenter::new(b.segmenter.clone()));
        let counted = Backends {
            scorer: b.scorer.clone(),
            segmenter: counting.clone() as Arc<dyn SegmenterBackend>,
        };
        let id = synth.scene_ids().next().unwrap().to_string();
        let image = ImageInput::new(id);
        let config = PipelineConfig::default();
        let ladder = depth_ladder(&counted, &image, &config).unwrap();
        assert_eq!(counting.decode_count(), 3);
        for (i, out) in ladder.iter().enumerate() {
            let cfg = PipelineConfig {
                cascade_depth: i as u8 + 1,
                ..config.clone()
            };
            let direct = process_image(&b, &image, &cfg).unwrap();
            assert_eq!(direct.trace, out.trace);
        }
    }
}
