//! Pixel-level AUROC, F1-max and average precision.
//!
//! All three sort the pixels once and walk tie blocks, so equal scores are
//! always treated as a single operating point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, ScoreGrid};

/// Positive and negative counts of each tie block, highest score first.
fn tie_blocks(scores: &[f64], truth: &[bool]) -> Result<Vec<(u64, u64)>> {
    if scores.len() != truth.len() {
        return Err(Error::Data(format!(
            "{} scores but {} truth labels",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite score {v}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        let s = scores[i];
        // total_cmp separates -0.0 from 0.0; they are one threshold here.
        if prev != Some(s) {
            blocks.push((0, 0));
            prev = Some(s);
        }
        let b = blocks.last_mut().expect("pushed above");
        if truth[i] {
            b.0 += 1;
        } else {
            b.1 += 1;
        }
    }
    Ok(blocks)
}

fn totals(blocks: &[(u64, u64)]) -> (u64, u64) {
    blocks
        .iter()
        .fold((0, 0), |(p, n), &(bp, bn)| (p + bp, n + bn))
}

/// Probability that a positive pixel outscores a negative one, ties counting half.
pub fn auroc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let blocks = tie_blocks(scores, truth)?;
    let (pos, neg) = totals(&blocks);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({pos} positive, {neg} negative pixels)"
        )));
    }
    // Twice the Mann-Whitney U, accumulated exactly.
    let mut neg_below = neg as u128;
    let mut twice_u: u128 = 0;
    for &(bp, bn) in &blocks {
        neg_below -= bn as u128;
        twice_u += 2 * bp as u128 * neg_below + bp as u128 * bn as u128;
    }
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

fn require_positive(blocks: &[(u64, u64)], metric: &str) -> Result<u64> {
    let (pos, _) = totals(blocks);
    if pos == 0 {
        return Err(Error::UndefinedMetric(format!("{metric} needs a positive pixel")));
    }
    Ok(pos)
}

/// Best F1 over thresholds `score >= t` at every distinct score (and +inf,
/// which predicts nothing and scores 0).
pub fn f1_max(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let blocks = tie_blocks(scores, truth)?;
    let pos = require_positive(&blocks, "F1-max")?;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best = 0.0f64;
    for &(bp, bn) in &blocks {
        tp += bp;
        fp += bn;
        let f1 = 2.0 * tp as f64 / (tp as f64 + fp as f64 + pos as f64);
        best = best.max(f1);
    }
    Ok(best)
}

/// Step-wise area under the precision-recall curve traced from the highest
/// threshold down.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let blocks = tie_blocks(scores, truth)?;
    let pos = require_positive(&blocks, "AP")?;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for &(bp, bn) in &blocks {
        tp += bp;
        fp += bn;
        if bp > 0 {
            ap += (bp as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

fn grid_pairs(scores: &ScoreGrid, truth: &BinaryMask) -> Result<(Vec<f64>, Vec<bool>)> {
    if scores.dims() != truth.dims() {
        return Err(Error::Data(format!(
            "score map {:?} and truth {:?} differ in size",
            scores.dims(),
            truth.dims()
        )));
    }
    Ok((
        scores.values().iter().map(|&v| v as f64).collect(),
        truth.values().to_vec(),
    ))
}

pub fn auroc_grid(scores: &ScoreGrid, truth: &BinaryMask) -> Result<f64> {
    let (s, t) = grid_pairs(scores, truth)?;
    auroc(&s, &t)
}

pub fn f1_max_grid(scores: &ScoreGrid, truth: &BinaryMask) -> Result<f64> {
    let (s, t) = grid_pairs(scores, truth)?;
    f1_max(&s, &t)
}

pub fn average_precision_grid(scores: &ScoreGrid, truth: &BinaryMask) -> Result<f64> {
    let (s, t) = grid_pairs(scores, truth)?;
    average_precision(&s, &t)
}

/// The three metrics; `None` where undefined (e.g. AUROC on an all-negative image).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub auroc: Option<f64>,
    pub f1_max: Option<f64>,
    pub ap: Option<f64>,
}

impl MetricSet {
    pub fn compute(scores: &[f64], truth: &[bool]) -> Result<Self> {
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(MetricSet {
            auroc: defined(auroc(scores, truth))?,
            f1_max: defined(f1_max(scores, truth))?,
            ap: defined(average_precision(scores, truth))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeMetrics {
    pub id: String,
    pub positives: u64,
    pub negatives: u64,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Metrics over the pixels of every image pooled together.
    pub pooled: ScopeMetrics,
    pub per_category: Vec<ScopeMetrics>,
    pub per_image: Vec<ScopeMetrics>,
}

impl EvalResult {
    /// One row per image, then per category, then the pooled row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
        w.write_record(["scope", "id", "positives", "negatives", "auroc", "f1_max", "ap"])
            .map_err(csv_err)?;
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let rows = self
            .per_image
            .iter()
            .map(|r| ("image", r))
            .chain(self.per_category.iter().map(|r| ("category", r)))
            .chain(std::iter::once(("pooled", &self.pooled)));
        for (scope, r) in rows {
            w.write_record([
                scope.to_string(),
                r.id.clone(),
                r.positives.to_string(),
                r.negatives.to_string(),
                cell(r.metrics.auroc),
                cell(r.metrics.f1_max),
                cell(r.metrics.ap),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

struct Entry {
    id: String,
    category: String,
    scores: Vec<f64>,
    truth: Vec<bool>,
}

/// Collects per-image score maps and truths and reduces them to an [`EvalResult`].
#[derive(Default)]
pub struct Accumulator {
    entries: Vec<Entry>,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        id: impl Into<String>,
        category: impl Into<String>,
        scores: &ScoreGrid,
        truth: &BinaryMask,
    ) -> Result<()> {
        let (scores, truth) = grid_pairs(scores, truth)?;
        self.entries.push(Entry {
            id: id.into(),
            category: category.into(),
            scores,
            truth,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn scope<'a>(id: &str, entries: impl Iterator<Item = &'a Entry>) -> Result<ScopeMetrics> {
        let (mut scores, mut truth) = (Vec::new(), Vec::new());
        for e in entries {
            scores.extend_from_slice(&e.scores);
            truth.extend_from_slice(&e.truth);
        }
        let positives = truth.iter().filter(|&&t| t).count() as u64;
        Ok(ScopeMetrics {
            id: id.to_string(),
            positives,
            negatives: truth.len() as u64 - positives,
            metrics: MetricSet::compute(&scores, &truth)?,
        })
    }

    /// Images are reported sorted by id, categories by name.
    pub fn finish(mut self) -> Result<EvalResult> {
        if self.entries.is_empty() {
            return Err(Error::UndefinedMetric("no images to evaluate".into()));
        }
        self.entries.sort_by(|a, b| a.id.cmp(&b.id));
        let per_image = self
            .entries
            .iter()
            .map(|e| Self::scope(&e.id, std::iter::once(e)))
            .collect::<Result<Vec<_>>>()?;
        let mut categories: BTreeMap<&str, Vec<&Entry>> = BTreeMap::new();
        for e in &self.entries {
            categories.entry(e.category.as_str()).or_default().push(e);
        }
        let per_category = categories
            .iter()
            .map(|(c, es)| Self::scope(c, es.iter().copied()))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalResult {
            pooled: Self::scope("all", self.entries.iter())?,
            per_category,
            per_image,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_scores() {
        let truth = [true, false, true, false, false];
        let perfect: Vec<f64> = truth.iter().map(|&t| t as u8 as f64).collect();
        assert_eq!(auroc(&perfect, &truth).unwrap(), 1.0);
        assert_eq!(f1_max(&perfect, &truth).unwrap(), 1.0);
        assert_eq!(average_precision(&perfect, &truth).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &truth).unwrap(), 0.5);
    }

    #[test]
    fn all_zero_scores_give_the_all_positive_operating_point() {
        let truth = [true, false, false, false];
        let p = 0.25;
        let f1 = f1_max(&[0.0; 4], &truth).unwrap();
        assert!((f1 - 2.0 * p / (p + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn single_positive_ranked_last() {
        let n = 7;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let mut truth = vec![false; n];
        truth[n - 1] = true;
        let ap = average_precision(&scores, &truth).unwrap();
        assert!((ap - 1.0 / n as f64).abs() < 1e-12);
        assert_eq!(auroc(&scores, &truth).unwrap(), 0.0);
    }

    #[test]
    fn undefined_cases_error() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            f1_max(&[0.1, 0.2], &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(auroc(&[f64::NAN, 0.2], &[true, false]).is_err());
        let m = MetricSet::compute(&[0.1, 0.2], &[false, false]).unwrap();
        assert_eq!(m, MetricSet::default());
    }

    #[test]
    fn accumulator_reports_every_scope() {
        let mut acc = Accumulator::new();
        let truth = BinaryMask::from_fn(2, 2, |y, x| y == 0 && x == 0).unwrap();
        acc.push("b/x/001", "b", &truth.to_scores(), &truth).unwrap();
        let good = BinaryMask::empty(2, 2).unwrap();
        acc.push("a/good/000", "a", &good.to_scores(), &good).unwrap();
        let r = acc.finish().unwrap();
        assert_eq!(r.per_image[0].id, "a/good/000");
        assert_eq!(r.per_image[0].metrics.auroc, None);
        assert_eq!(r.pooled.metrics.auroc, Some(1.0));
        assert_eq!((r.pooled.positives, r.pooled.negatives), (1, 7));
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 + 2 + 1);
        assert!(csv.contains("image,a/good/000,0,4,,,"));
    }
}
