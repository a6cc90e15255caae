//! On-disk interchange formats.
//!
//! Grids are raw little-endian `f32` in row-major order next to a JSON sidecar
//! (`<file>.json`) of the form
//! `{"dims": [...], "order": "row-major", "dtype": "f32le"}`.
//! Masks are 8-bit single-channel PNGs with 0 for background and 255 for foreground.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, FeatureGrid, ScoreGrid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dims: Vec<usize>,
    pub order: String,
    pub dtype: String,
}

impl TensorHeader {
    fn new(dims: Vec<usize>) -> Self {
        TensorHeader {
            dims,
            order: "row-major".into(),
            dtype: "f32le".into(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub fn write_tensor(path: &Path, dims: &[usize], values: &[f32]) -> Result<()> {
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    ensure_parent(path)?;
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let header = serde_json::to_string(&TensorHeader::new(dims.to_vec()))?;
    let side = sidecar_path(path);
    fs::write(&side, header).map_err(|e| Error::io(side, e))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let side = sidecar_path(path);
    let header_text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let header: TensorHeader = serde_json::from_str(&header_text)?;
    if header.order != "row-major" || header.dtype != "f32le" {
        return Err(Error::Data(format!(
            "{}: unsupported layout {}/{}",
            side.display(),
            header.order,
            header.dtype
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = header.dims.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: {} bytes on disk but dims {:?} need {expected}",
            path.display(),
            bytes.len(),
            header.dims
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header.dims, values))
}

pub fn write_score_grid(path: &Path, grid: &ScoreGrid) -> Result<()> {
    write_tensor(path, &[grid.height(), grid.width()], grid.values())
}

pub fn read_score_grid(path: &Path) -> Result<ScoreGrid> {
    let (dims, values) = read_tensor(path)?;
    match dims.as_slice() {
        [h, w] => ScoreGrid::new(*h, *w, values),
        other => Err(Error::Data(format!(
            "{}: score grid needs 2 dims, found {other:?}",
            path.display()
        ))),
    }
}

pub fn write_feature_grid(path: &Path, grid: &FeatureGrid) -> Result<()> {
    let (c, h, w) = grid.dims();
    write_tensor(path, &[c, h, w], grid.values())
}

pub fn read_feature_grid(path: &Path) -> Result<FeatureGrid> {
    let (dims, values) = read_tensor(path)?;
    match dims.as_slice() {
        [c, h, w] => FeatureGrid::new(*c, *h, *w, values),
        other => Err(Error::Data(format!(
            "{}: feature grid needs 3 dims, found {other:?}",
            path.display()
        ))),
    }
}

pub fn mask_to_image(mask: &BinaryMask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    ensure_parent(path)?;
    mask_to_image(mask)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}

/// Reads a mask PNG; any non-zero pixel counts as foreground.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    BinaryMask::new(
        h as usize,
        w as usize,
        img.pixels().map(|p| p.0[0] != 0).collect(),
    )
}

/// Writes a normalized score grid as an 8-bit PNG (value * 255, rounded).
pub fn write_score_png(path: &Path, grid: &ScoreGrid) -> Result<()> {
    ensure_parent(path)?;
    let img = GrayImage::from_fn(grid.width() as u32, grid.height() as u32, |x, y| {
        let v = grid.get(y as usize, x as usize).clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}

/// Reads an 8-bit PNG as scores in `[0, 1]`.
pub fn read_score_png(path: &Path) -> Result<ScoreGrid> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    ScoreGrid::normalized(
        h as usize,
        w as usize,
        img.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
    )
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .into_rgb8())
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
