//! Grids, masks, prompts and structuring elements shared by the whole pipeline.
//!
//! Every grid is stored row-major and indexed `(y, x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dims(height: usize, width: usize, len: usize, what: &str) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Data(format!(
            "{what} dimensions must be positive, got {height}x{width}"
        )));
    }
    if height.checked_mul(width) != Some(len) {
        return Err(Error::Data(format!(
            "{what} has {len} values but dimensions {height}x{width}"
        )));
    }
    Ok(())
}

/// An `H x W` grid of finite real scores.
///
/// Grids built through [`ScoreGrid::normalized`] additionally guarantee every
/// value lies in `[0, 1]`; [`ScoreGrid::is_normalized`] reports that flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    height: usize,
    width: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl ScoreGrid {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(height, width, values.len(), "score grid")?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "score grid value at ({}, {}) is not finite",
                i / width,
                i % width
            )));
        }
        Ok(ScoreGrid {
            height,
            width,
            values,
            normalized: false,
        })
    }

    /// Builds a grid flagged as normalized; rejects values outside `[0, 1]`.
    pub fn normalized(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let mut grid = ScoreGrid::new(height, width, values)?;
        if let Some(v) = grid.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!(
                "normalized score grid contains {v} outside [0, 1]"
            )));
        }
        grid.normalized = true;
        Ok(grid)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        ScoreGrid::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        ScoreGrid::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Index of the largest value; the first in raster order wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// An `H x W` boolean grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        check_dims(height, width, values.len(), "mask")?;
        Ok(BinaryMask {
            height,
            width,
            values,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        BinaryMask::new(height, width, vec![false; height * width])
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        BinaryMask::new(height, width, vec![true; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        BinaryMask::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.values[y * self.width + x] = value;
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_all_background(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    pub fn contains(&self, point: &PointPrompt) -> bool {
        let (x, y) = (point.x as usize, point.y as usize);
        y < self.height && x < self.width && self.get(y, x)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::Data(format!(
                "mask dimensions differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        BinaryMask::new(self.height, self.width, values)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| !v).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.values.iter().zip(&other.values).all(|(&a, &b)| !a || b)
    }

    /// Intersection over union; two empty masks score 0.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        let inter = self.and(other)?.foreground_count();
        let union = self.or(other)?.foreground_count();
        Ok(if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        })
    }

    /// The mask as a 0/1 score grid, flagged normalized.
    pub fn to_scores(&self) -> ScoreGrid {
        ScoreGrid {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
            normalized: true,
        }
    }
}

/// Channel-major `C x H x W` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Data("feature grid needs at least one channel".into()));
        }
        check_dims(height, width * channels, values.len(), "feature grid")?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature grid contains non-finite values".into()));
        }
        Ok(FeatureGrid {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn vector_at(&self, y: usize, x: usize) -> Vec<f32> {
        let plane = self.height * self.width;
        let offset = y * self.width + x;
        (0..self.channels)
            .map(|c| self.values[c * plane + offset])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    pub polarity: Polarity,
    /// The score that ranked this point during selection.
    pub score: f64,
}

impl PointPrompt {
    pub fn is_positive(&self) -> bool {
        self.polarity == Polarity::Positive
    }
}

/// Inclusive axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::Data(format!(
                "box ({x_min}, {y_min})-({x_max}, {y_max}) has inverted corners"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.x_min as usize..=self.x_max as usize).contains(&x)
            && (self.y_min as usize..=self.y_max as usize).contains(&y)
    }

    pub fn fits_within(&self, height: usize, width: usize) -> bool {
        (self.x_max as usize) < width && (self.y_max as usize) < height
    }
}

/// Sparse and dense prompts handed to a promptable segmenter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptSet {
    pub points: Vec<PointPrompt>,
    pub bbox: Option<BoundingBox>,
    pub dense_logit: Option<ScoreGrid>,
}

impl PromptSet {
    pub fn from_points(points: Vec<PointPrompt>) -> Self {
        PromptSet {
            points,
            bbox: None,
            dense_logit: None,
        }
    }

    pub fn positives(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| p.is_positive())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| !p.is_positive())
    }

    pub fn has_positive(&self) -> bool {
        self.positives().next().is_some()
    }

    pub fn with_dense_logit(mut self, logit: ScoreGrid) -> Self {
        self.dense_logit = Some(logit);
        self
    }

    pub fn with_box(mut self, bbox: BoundingBox) -> Self {
        self.bbox = Some(bbox);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    Ellipse,
    Rectangle,
    Cross,
}

impl KernelShape {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelShape::Ellipse => "ellipse",
            KernelShape::Rectangle => "rectangle",
            KernelShape::Cross => "cross",
        }
    }
}

impl std::str::FromStr for KernelShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipse" => Ok(KernelShape::Ellipse),
            "rectangle" | "rect" => Ok(KernelShape::Rectangle),
            "cross" => Ok(KernelShape::Cross),
            other => Err(Error::config(
                "kernel.shape",
                format!("unknown shape `{other}` (expected ellipse, rectangle or cross)"),
            )),
        }
    }
}

/// Morphological footprint. Sizes are `(width, height)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuringElement {
    pub shape: KernelShape,
    pub size: (u32, u32),
}

impl StructuringElement {
    /// Validates the size and rounds even extents up to the next odd value.
    pub fn new(shape: KernelShape, width: u32, height: u32) -> Result<Self> {
        StructuringElement {
            shape,
            size: (width, height),
        }
        .normalized()
    }

    pub fn normalized(self) -> Result<Self> {
        let (w, h) = self.size;
        if w == 0 || h == 0 {
            return Err(Error::config(
                "kernel.size",
                format!("extents must be >= 1, got ({w}, {h})"),
            ));
        }
        let odd = |v: u32| if v % 2 == 0 { v + 1 } else { v };
        Ok(StructuringElement {
            shape: self.shape,
            size: (odd(w), odd(h)),
        })
    }

    pub fn is_normalized(&self) -> bool {
        let (w, h) = self.size;
        w % 2 == 1 && h % 2 == 1
    }

    /// Half extents `(a, b)` along x and y.
    pub fn radii(&self) -> (i64, i64) {
        ((self.size.0 as i64 - 1) / 2, (self.size.1 as i64 - 1) / 2)
    }

    /// Whether offset `(dx, dy)` from the anchor belongs to the footprint.
    pub fn contains(&self, dx: i64, dy: i64) -> bool {
        let (a, b) = self.radii();
        if dx.abs() > a || dy.abs() > b {
            return false;
        }
        match self.shape {
            KernelShape::Rectangle => true,
            KernelShape::Cross => dx == 0 || dy == 0,
            // (dx/a)^2 + (dy/b)^2 <= 1, cleared of denominators.
            KernelShape::Ellipse => dx * dx * b * b + dy * dy * a * a <= a * a * b * b,
        }
    }

    /// For each row offset `dy` in `-b..=b`, the half-width of the footprint on that row.
    pub fn row_half_widths(&self) -> Vec<(i64, i64)> {
        let (a, b) = self.radii();
        (-b..=b)
            .filter_map(|dy| {
                (0..=a)
                    .rev()
                    .find(|&dx| self.contains(dx, dy))
                    .map(|hw| (dy, hw))
            })
            .collect()
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        StructuringElement {
            shape: KernelShape::Ellipse,
            size: (25, 25),
        }
    }
}
