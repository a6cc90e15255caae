//! Co-feature point prompt generation.
//!
//! Positive points come from the highest values of the anomaly map inside the
//! extreme region `S_a`. Negative points come from the dilation ring around
//! `S_a`: the ring pixels whose encoder features are least similar to the
//! pooled features of `S_a`.

use std::cmp::Ordering;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::imgproc::{
    binarize, downsample_mask_any, nearest_source, resize_mask_nearest, ring,
};
use crate::types::{BinaryMask, FeatureGrid, PointPrompt, Polarity, PromptSet, ScoreGrid};

/// Value stored in the similarity map outside the ring; never picked by a
/// lowest-first selection as long as a ring pixel remains.
pub const SIMILARITY_SENTINEL: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectOrder {
    Highest,
    Lowest,
}

/// Everything computed on the way to a prompt set, kept for debug dumps and
/// invariant checks.
#[derive(Debug, Clone)]
pub struct PpgIntermediates {
    /// `S_a` at working resolution.
    pub extreme_mask: BinaryMask,
    /// `R_a = S_a * Map_a`.
    pub masked_anomaly: ScoreGrid,
    /// `N_a` at working resolution.
    pub ring_mask: BinaryMask,
    /// `N_a` resampled to the feature grid; the domain negatives are drawn from.
    pub ring_mask_features: BinaryMask,
    /// Cosine similarity to the `S_a` prototype on ring cells, sentinel elsewhere.
    pub similarity: ScoreGrid,
    /// Spacing actually enforced between positives, in working pixels.
    pub positive_spacing: f64,
    /// Spacing enforced between negatives, in feature cells.
    pub negative_spacing: f64,
    /// Set when `S_a` was empty and the single-argmax fallback was used.
    pub degraded: bool,
}

/// `R_a`: the anomaly map zeroed outside the extreme region.
pub fn masked_anomaly(extreme_mask: &BinaryMask, anomaly: &ScoreGrid) -> Result<ScoreGrid> {
    if extreme_mask.dims() != anomaly.dims() {
        return Err(Error::Data(format!(
            "mask {:?} and anomaly map {:?} differ in size",
            extreme_mask.dims(),
            anomaly.dims()
        )));
    }
    let values = anomaly
        .values()
        .iter()
        .zip(extreme_mask.values())
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    if anomaly.is_normalized() {
        ScoreGrid::normalized(anomaly.height(), anomaly.width(), values)
    } else {
        ScoreGrid::new(anomaly.height(), anomaly.width(), values)
    }
}

/// Greedy spaced selection of up to `k` extreme pixels.
///
/// Pixels are visited best-first (ties in raster order) and accepted when
/// their Euclidean distance to every accepted point is at least
/// `min_spacing`. Selection stops early when no further pixel qualifies.
pub fn select_spaced_topk(
    grid: &ScoreGrid,
    k: usize,
    min_spacing: f64,
    order: SelectOrder,
    domain: Option<&BinaryMask>,
    polarity: Polarity,
) -> Result<Vec<PointPrompt>> {
    if k == 0 {
        return Err(Error::config("k", "must be >= 1"));
    }
    if let Some(d) = domain {
        if d.dims() != grid.dims() {
            return Err(Error::Data(format!(
                "selection domain {:?} does not match grid {:?}",
                d.dims(),
                grid.dims()
            )));
        }
        if d.is_all_background() {
            return Err(Error::EmptyRegion("selection domain is empty".into()));
        }
    }

    let values = grid.values();
    let mut candidates: Vec<usize> = match domain {
        Some(d) => (0..values.len()).filter(|&i| d.values()[i]).collect(),
        None => (0..values.len()).collect(),
    };
    // Stable sort keeps raster order among equal scores.
    candidates.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        match order {
            SelectOrder::Highest => ord.reverse(),
            SelectOrder::Lowest => ord,
        }
    });

    let width = grid.width();
    let min_sq = min_spacing * min_spacing;
    let mut chosen: Vec<PointPrompt> = Vec::with_capacity(k);
    for i in candidates {
        let (y, x) = (i / width, i % width);
        let far_enough = chosen.iter().all(|p| {
            let dx = p.x as f64 - x as f64;
            let dy = p.y as f64 - y as f64;
            dx * dx + dy * dy >= min_sq
        });
        if far_enough {
            chosen.push(PointPrompt {
                x: x as u32,
                y: y as u32,
                polarity,
                score: values[i] as f64,
            });
            if chosen.len() == k {
                break;
            }
        }
    }
    Ok(chosen)
}

/// Channelwise mean of the features under the mask.
pub fn region_prototype(features: &FeatureGrid, mask: &BinaryMask) -> Result<Vec<f64>> {
    let (c, h, w) = features.dims();
    if mask.dims() != (h, w) {
        return Err(Error::Data(format!(
            "mask {:?} does not match feature grid {h}x{w}",
            mask.dims()
        )));
    }
    let count = mask.foreground_count();
    if count == 0 {
        return Err(Error::EmptyRegion("prototype over an empty mask".into()));
    }
    let plane = h * w;
    let vals = features.values();
    let proto = (0..c)
        .map(|ch| {
            let sum: f64 = mask
                .values()
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(i, _)| vals[ch * plane + i] as f64)
                .sum();
            sum / count as f64
        })
        .collect();
    Ok(proto)
}

/// Cosine similarity of each ring cell's feature vector to `prototype`.
///
/// Cells outside the ring hold [`SIMILARITY_SENTINEL`]; zero-norm feature
/// vectors score 0.
pub fn similarity_map(
    features: &FeatureGrid,
    ring: &BinaryMask,
    prototype: &[f64],
) -> Result<ScoreGrid> {
    let (c, h, w) = features.dims();
    if ring.dims() != (h, w) {
        return Err(Error::Data(format!(
            "ring {:?} does not match feature grid {h}x{w}",
            ring.dims()
        )));
    }
    if prototype.len() != c {
        return Err(Error::Data(format!(
            "prototype has {} channels, features have {c}",
            prototype.len()
        )));
    }
    let proto_norm = prototype.iter().map(|v| v * v).sum::<f64>().sqrt();
    if proto_norm == 0.0 {
        return Err(Error::DegenerateFeature("prototype vector is all zeros".into()));
    }
    let plane = h * w;
    let vals = features.values();
    let values = (0..plane)
        .map(|i| {
            if !ring.values()[i] {
                return SIMILARITY_SENTINEL;
            }
            let (mut dot, mut norm) = (0.0f64, 0.0f64);
            for (ch, p) in prototype.iter().enumerate() {
                let v = vals[ch * plane + i] as f64;
                dot += v * p;
                norm += v * v;
            }
            if norm == 0.0 {
                0.0
            } else {
                (dot / (norm.sqrt() * proto_norm)).clamp(-1.0, 1.0) as f32
            }
        })
        .collect();
    ScoreGrid::new(h, w, values)
}

/// Runs the full point-prompt generation on a normalized anomaly map at
/// working resolution and the encoder features of the same image.
pub fn generate_prompts(
    anomaly: &ScoreGrid,
    features: &FeatureGrid,
    config: &PipelineConfig,
) -> Result<(PromptSet, PpgIntermediates)> {
    if !anomaly.is_normalized() {
        return Err(Error::Data("anomaly map must be normalized".into()));
    }
    let (work_h, work_w) = anomaly.dims();
    let (_, feat_h, feat_w) = features.dims();
    let positive_spacing = config.min_spacing * work_w as f64 / config.working_resolution as f64;
    let negative_spacing = positive_spacing * feat_w as f64 / work_w as f64;

    let extreme = binarize(anomaly, config.extreme_threshold)?;
    let r_a = masked_anomaly(&extreme, anomaly)?;

    if extreme.is_all_background() {
        let (y, x) = anomaly.argmax();
        let point = PointPrompt {
            x: x as u32,
            y: y as u32,
            polarity: Polarity::Positive,
            score: anomaly.get(y, x) as f64,
        };
        let inter = PpgIntermediates {
            ring_mask: BinaryMask::empty(work_h, work_w)?,
            ring_mask_features: BinaryMask::empty(feat_h, feat_w)?,
            similarity: ScoreGrid::filled(feat_h, feat_w, SIMILARITY_SENTINEL)?,
            extreme_mask: extreme,
            masked_anomaly: r_a,
            positive_spacing,
            negative_spacing,
            degraded: true,
        };
        return Ok((PromptSet::from_points(vec![point]), inter));
    }

    let mut points = select_spaced_topk(
        &r_a,
        config.k_positive,
        positive_spacing,
        SelectOrder::Highest,
        Some(&extreme),
        Polarity::Positive,
    )?;

    let ring_mask = ring(&extreme, &config.kernel)?;
    let ring_feat = resize_mask_nearest(&ring_mask, feat_h, feat_w)?;
    let mut extreme_feat = resize_mask_nearest(&extreme, feat_h, feat_w)?;
    if extreme_feat.is_all_background() {
        extreme_feat = downsample_mask_any(&extreme, feat_h, feat_w)?;
    }

    let similarity = if ring_feat.is_all_background() {
        ScoreGrid::filled(feat_h, feat_w, SIMILARITY_SENTINEL)?
    } else {
        let prototype = region_prototype(features, &extreme_feat)?;
        similarity_map(features, &ring_feat, &prototype)?
    };

    if config.k_negative > 0 && !ring_feat.is_all_background() {
        let negatives = select_spaced_topk(
            &similarity,
            config.k_negative,
            negative_spacing,
            SelectOrder::Lowest,
            Some(&ring_feat),
            Polarity::Negative,
        )?;
        points.extend(negatives.into_iter().map(|p| PointPrompt {
            x: nearest_source(p.x as usize, work_w, feat_w) as u32,
            y: nearest_source(p.y as usize, work_h, feat_h) as u32,
            ..p
        }));
    }

    let inter = PpgIntermediates {
        extreme_mask: extreme,
        masked_anomaly: r_a,
        ring_mask,
        ring_mask_features: ring_feat,
        similarity,
        positive_spacing,
        negative_spacing,
        degraded: false,
    };
    Ok((PromptSet::from_points(points), inter))
}

/// Pairwise-distance check used by tests and runtime assertions.
pub fn respects_spacing(points: &[PointPrompt], min_spacing: f64) -> bool {
    points.iter().enumerate().all(|(i, a)| {
        points[i + 1..].iter().all(|b| {
            let dx = a.x as f64 - b.x as f64;
            let dy = a.y as f64 - b.y as f64;
            (dx * dx + dy * dy).sqrt().partial_cmp(&min_spacing) != Some(Ordering::Less)
        })
    })
}
