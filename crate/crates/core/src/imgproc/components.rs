use crate::error::{Error, Result};
use crate::types::{BinaryMask, BoundingBox, PointPrompt};

/// 8-connected component labelling. Label 0 is background; labels are
/// assigned in raster order of each component's first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabels {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub component_count: usize,
    /// `component_areas[i]` is the pixel count of label `i + 1`.
    pub component_areas: Vec<usize>,
}

impl ComponentLabels {
    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

pub fn connected_components(mask: &BinaryMask) -> ComponentLabels {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.values()[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        let mut area = 0;
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (y, x) = (i / w, i % w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.values()[j] && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    ComponentLabels {
        height: h,
        width: w,
        labels,
        component_count: areas.len(),
        component_areas: areas,
    }
}

/// Tight box around the components that contain a positive anchor.
///
/// When no positive anchor lands on the mask, the largest component is used
/// instead (lowest label on ties).
pub fn bounding_box(mask: &BinaryMask, anchors: &[PointPrompt]) -> Result<BoundingBox> {
    let cc = connected_components(mask);
    if cc.component_count == 0 {
        return Err(Error::EmptyRegion("bounding box of an empty mask".into()));
    }
    let mut selected = vec![false; cc.component_count + 1];
    for p in anchors.iter().filter(|p| p.is_positive()) {
        if mask.contains(p) {
            selected[cc.label(p.y as usize, p.x as usize) as usize] = true;
        }
    }
    if !selected.iter().any(|&s| s) {
        let mut best = 0;
        for (i, &a) in cc.component_areas.iter().enumerate() {
            if a > cc.component_areas[best] {
                best = i;
            }
        }
        selected[best + 1] = true;
    }

    let (mut x_min, mut y_min, mut x_max, mut y_max) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..cc.height {
        for x in 0..cc.width {
            let l = cc.label(y, x) as usize;
            if l != 0 && selected[l] {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    BoundingBox::new(x_min as u32, y_min as u32, x_max as u32, y_max as u32)
}
