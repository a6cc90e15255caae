//! Image-processing kernels: normalization, thresholding, resampling,
//! morphology and connected components.

mod components;
mod morphology;

pub use components::{bounding_box, connected_components, ComponentLabels};
pub use morphology::{dilate, ring};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, ScoreGrid};

/// Affinely maps the grid onto `[0, 1]`. Constant grids map to all zeros.
pub fn minmax_normalize(grid: &ScoreGrid) -> Result<ScoreGrid> {
    if grid.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cannot normalize non-finite scores".into()));
    }
    let (lo, hi) = grid.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let span = hi - lo;
    let values = grid
        .values()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (((v as f64 - lo) / span) as f32).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    ScoreGrid::normalized(grid.height(), grid.width(), values)
}

/// Pixels with `value >= threshold` become foreground.
pub fn binarize(grid: &ScoreGrid, threshold: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(
            "extreme_threshold",
            format!("threshold {threshold} outside [0, 1]"),
        ));
    }
    if !grid.is_normalized() {
        return Err(Error::Data("binarize expects a normalized grid".into()));
    }
    BinaryMask::new(
        grid.height(),
        grid.width(),
        grid.values().iter().map(|&v| v as f64 >= threshold).collect(),
    )
}

/// Source coordinate of destination index `dst` under pixel-center alignment.
fn center_source(dst: usize, in_len: usize, out_len: usize) -> f64 {
    (dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

/// Bilinear resampling with pixel-center alignment, edges clamped.
///
/// Returns the input unchanged when the dimensions already match. The
/// normalized flag survives resampling since interpolation is convex.
pub fn resize_bilinear(grid: &ScoreGrid, out_h: usize, out_w: usize) -> Result<ScoreGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::config(
            "resize",
            format!("output dimensions must be positive, got {out_h}x{out_w}"),
        ));
    }
    let (in_h, in_w) = grid.dims();
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(grid.clone());
    }
    let taps = |dst: usize, in_len: usize, out_len: usize| {
        let s = center_source(dst, in_len, out_len).clamp(0.0, (in_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(in_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| taps(x, in_w, out_w)).collect();
    let mut values = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, ty) = taps(y, in_h, out_h);
        for &(x0, x1, tx) in &cols {
            let p = |yy, xx| grid.get(yy, xx) as f64;
            let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
            let bottom = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
            values.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    if grid.is_normalized() {
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ScoreGrid::normalized(out_h, out_w, values)
    } else {
        ScoreGrid::new(out_h, out_w, values)
    }
}

/// Index of the source pixel whose center is nearest to destination `dst`'s center.
pub fn nearest_source(dst: usize, in_len: usize, out_len: usize) -> usize {
    (((dst as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize).min(in_len - 1)
}

/// Nearest-neighbour mask resampling under pixel-center alignment.
pub fn resize_mask_nearest(mask: &BinaryMask, out_h: usize, out_w: usize) -> Result<BinaryMask> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::config(
            "resize",
            format!("output dimensions must be positive, got {out_h}x{out_w}"),
        ));
    }
    let (in_h, in_w) = mask.dims();
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(mask.clone());
    }
    let cols: Vec<usize> = (0..out_w).map(|x| nearest_source(x, in_w, out_w)).collect();
    BinaryMask::from_fn(out_h, out_w, |y, x| {
        mask.get(nearest_source(y, in_h, out_h), cols[x])
    })
}

/// Downsamples by marking a destination cell whenever any source pixel it
/// covers is foreground.
pub fn downsample_mask_any(mask: &BinaryMask, out_h: usize, out_w: usize) -> Result<BinaryMask> {
    let (in_h, in_w) = mask.dims();
    let mut out = BinaryMask::empty(out_h, out_w)?;
    for y in 0..in_h {
        let oy = (y * out_h / in_h).min(out_h - 1);
        for x in 0..in_w {
            if mask.get(y, x) {
                out.set(oy, (x * out_w / in_w).min(out_w - 1), true);
            }
        }
    }
    Ok(out)
}
