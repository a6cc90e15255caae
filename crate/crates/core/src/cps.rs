//! Cascaded prompting of the segmenter.
//!
//! Stage 1 decodes the mined points with multimask output and keeps the best
//! candidate. Stage 2 adds the stage-1 logit as a dense prompt. Stage 3 adds a
//! box around the stage-2 components that contain a positive point, plus the
//! stage-2 logit. Every stage reuses the original point set.

use crate::backends::{check_candidates, ImageInput, SegmenterBackend};
use crate::config::{OutputMapMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::imgproc::{bounding_box, minmax_normalize, resize_bilinear};
use crate::types::{BinaryMask, BoundingBox, FeatureGrid, PromptSet, ScoreGrid};

/// Per-stage outputs of one cascade run.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTrace {
    pub stage_masks: Vec<BinaryMask>,
    /// One logit per executed stage.
    pub stage_logits: Vec<ScoreGrid>,
    /// Present iff stage 3 ran with a non-empty `M_2`.
    pub derived_box: Option<BoundingBox>,
    pub stage_scores: Vec<f64>,
    pub final_map: ScoreGrid,
    /// Stage 3 fell back to `M_3 = M_2` because `M_2` was empty.
    pub degraded: bool,
}

impl CascadeTrace {
    pub fn depth(&self) -> usize {
        self.stage_masks.len()
    }

    pub fn final_mask(&self) -> &BinaryMask {
        self.stage_masks.last().expect("a trace has at least one stage")
    }
}

/// Index of the highest-scoring candidate; the first one wins ties.
pub fn best_candidate(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// One decoder call. `stage` is 1-based and is attached to any failure.
pub fn run_stage(
    segmenter: &dyn SegmenterBackend,
    image: &ImageInput,
    features: &FeatureGrid,
    prompts: &PromptSet,
    multimask: bool,
    stage: usize,
) -> Result<(BinaryMask, ScoreGrid, f64)> {
    if !prompts.has_positive() {
        return Err(Error::Data(format!(
            "stage {stage}: prompt set for `{}` has no positive point",
            image.id
        )));
    }
    let wrap = |e: Error| match e {
        Error::Backend { .. } => e.at_stage(stage),
        Error::Contract { .. } | Error::Config { .. } => e,
        other => Error::Backend {
            backend: segmenter.name().to_string(),
            stage: Some(stage),
            reason: other.to_string(),
        },
    };
    let mut candidates = segmenter
        .decode(image, features, prompts, multimask)
        .map_err(wrap)?;
    check_candidates(segmenter, &candidates)?;
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    let pick = best_candidate(&scores).expect("checked non-empty");
    let c = candidates.swap_remove(pick);
    Ok((c.mask, c.logit, c.score))
}

/// Final metric map from the last-stage mask and the working-resolution
/// anomaly map.
pub fn final_map(mask: &BinaryMask, anomaly: &ScoreGrid, config: &PipelineConfig) -> Result<ScoreGrid> {
    let binary = mask.to_scores();
    match config.output_map_mode {
        OutputMapMode::Binary => Ok(binary),
        OutputMapMode::Blended => {
            let (h, w) = mask.dims();
            let anomaly = resize_bilinear(anomaly, h, w)?;
            let wgt = config.blend_weight as f32;
            let mixed = ScoreGrid::new(
                h,
                w,
                binary
                    .values()
                    .iter()
                    .zip(anomaly.values())
                    .map(|(&m, &a)| wgt * m + (1.0 - wgt) * a)
                    .collect(),
            )?;
            minmax_normalize(&mixed)
        }
    }
}

/// Runs up to three decoder stages as configured by `cascade_depth`.
pub fn run_cascade(
    segmenter: &dyn SegmenterBackend,
    image: &ImageInput,
    features: &FeatureGrid,
    prompts: &PromptSet,
    anomaly: &ScoreGrid,
    config: &PipelineConfig,
) -> Result<CascadeTrace> {
    if prompts.bbox.is_some() || prompts.dense_logit.is_some() {
        return Err(Error::Data(
            "cascade input must be a points-only prompt set".into(),
        ));
    }
    let depth = config.cascade_depth as usize;
    let mut trace = CascadeTrace {
        stage_masks: Vec::with_capacity(depth),
        stage_logits: Vec::with_capacity(depth),
        derived_box: None,
        stage_scores: Vec::with_capacity(depth),
        final_map: ScoreGrid::filled(1, 1, 0.0)?,
        degraded: false,
    };

    let (m1, l1, s1) = run_stage(segmenter, image, features, prompts, true, 1)?;
    trace.push(m1, l1, s1);

    if depth >= 2 {
        let p2 = prompts.clone().with_dense_logit(trace.last_logit().clone());
        let (m2, l2, s2) = run_stage(segmenter, image, features, &p2, false, 2)?;
        trace.push(m2, l2, s2);
    }

    if depth >= 3 {
        let m2 = trace.final_mask().clone();
        if m2.is_all_background() {
            let (l2, s2) = (trace.last_logit().clone(), trace.stage_scores[1]);
            trace.push(m2, l2, s2);
            trace.degraded = true;
        } else {
            let positives: Vec<_> = prompts.positives().copied().collect();
            let bbox = bounding_box(&m2, &positives)?;
            let p3 = prompts
                .clone()
                .with_box(bbox)
                .with_dense_logit(trace.last_logit().clone());
            let (m3, l3, s3) = run_stage(segmenter, image, features, &p3, false, 3)?;
            trace.push(m3, l3, s3);
            trace.derived_box = Some(bbox);
        }
    }

    trace.final_map = final_map(trace.final_mask(), anomaly, config)?;
    Ok(trace)
}

/// Continues a trace computed at a shallower depth by one more stage, so the
/// depth ablation never repeats a decoder call.
pub fn extend_cascade(
    segmenter: &dyn SegmenterBackend,
    image: &ImageInput,
    features: &FeatureGrid,
    prompts: &PromptSet,
    anomaly: &ScoreGrid,
    trace: &CascadeTrace,
    config: &PipelineConfig,
) -> Result<CascadeTrace> {
    let mut next = trace.clone();
    let depth = trace.depth();
    match depth {
        1 => {
            let p2 = prompts.clone().with_dense_logit(trace.last_logit().clone());
            let (m, l, s) = run_stage(segmenter, image, features, &p2, false, 2)?;
            next.push(m, l, s);
        }
        2 => {
            let m2 = trace.final_mask().clone();
            if m2.is_all_background() {
                next.push(m2, trace.last_logit().clone(), trace.stage_scores[1]);
                next.degraded = true;
            } else {
                let positives: Vec<_> = prompts.positives().copied().collect();
                let bbox = bounding_box(&m2, &positives)?;
                let p3 = prompts
                    .clone()
                    .with_box(bbox)
                    .with_dense_logit(trace.last_logit().clone());
                let (m, l, s) = run_stage(segmenter, image, features, &p3, false, 3)?;
                next.push(m, l, s);
                next.derived_box = Some(bbox);
            }
        }
        _ => {
            return Err(Error::config(
                "cascade_depth",
                format!("cannot extend a depth-{depth} trace"),
            ))
        }
    }
    next.final_map = final_map(next.final_mask(), anomaly, config)?;
    Ok(next)
}

impl CascadeTrace {
    fn push(&mut self, mask: BinaryMask, logit: ScoreGrid, score: f64) {
        self.stage_masks.push(mask);
        self.stage_logits.push(logit);
        self.stage_scores.push(score);
    }

    fn last_logit(&self) -> &ScoreGrid {
        self.stage_logits.last().expect("a trace has at least one stage")
    }
}
