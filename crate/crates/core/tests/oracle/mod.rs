//! Brute-force reference implementations for the test suites.
//!
//! Nothing here calls into the library's kernels; only the plain data types
//! are shared.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zsas_core::{BinaryMask, KernelShape, ScoreGrid};

/// Footprint offsets of an element of `w` x `h` (both odd).
pub fn footprint(shape: KernelShape, w: u32, h: u32) -> Vec<(i64, i64)> {
    let a = (w as i64 - 1) / 2;
    let b = (h as i64 - 1) / 2;
    let mut out = Vec::new();
    for dy in -b..=b {
        for dx in -a..=a {
            let inside = match shape {
                KernelShape::Rectangle => true,
                KernelShape::Cross => dx == 0 || dy == 0,
                // (dx/a)^2 + (dy/b)^2 <= 1, multiplied through by a^2 b^2.
                KernelShape::Ellipse => dx * dx * b * b + dy * dy * a * a <= a * a * b * b,
            };
            if inside {
                out.push((dx, dy));
            }
        }
    }
    out
}

pub fn dilate(mask: &BinaryMask, shape: KernelShape, w: u32, h: u32) -> BinaryMask {
    let (hh, ww) = mask.dims();
    let fp = footprint(shape, w, h);
    let mut out = vec![false; hh * ww];
    for y in 0..hh {
        for x in 0..ww {
            if !mask.get(y, x) {
                continue;
            }
            for &(dx, dy) in &fp {
                let (ty, tx) = (y as i64 + dy, x as i64 + dx);
                if ty >= 0 && tx >= 0 && (ty as usize) < hh && (tx as usize) < ww {
                    out[ty as usize * ww + tx as usize] = true;
                }
            }
        }
    }
    BinaryMask::new(hh, ww, out).unwrap()
}

pub fn ring(mask: &BinaryMask, shape: KernelShape, w: u32, h: u32) -> BinaryMask {
    let d = dilate(mask, shape, w, h);
    let (hh, ww) = mask.dims();
    BinaryMask::from_fn(hh, ww, |y, x| d.get(y, x) && !mask.get(y, x)).unwrap()
}

/// 8-connected flood fill; labels follow the raster order of each
/// component's first pixel.
pub fn flood_fill(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut areas = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !mask.get(sy, sx) || labels[sy * w + sx] != 0 {
                continue;
            }
            let label = areas.len() as u32 + 1;
            let mut area = 0;
            let mut queue = VecDeque::from([(sy, sx)]);
            labels[sy * w + sx] = label;
            while let Some((y, x)) = queue.pop_front() {
                area += 1;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask.get(ny, nx) && labels[ny * w + nx] == 0 {
                            labels[ny * w + nx] = label;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            areas.push(area);
        }
    }
    (labels, areas)
}

/// `(x_min, y_min, x_max, y_max)` of the anchored components, or of the
/// largest one when no anchor hits the mask.
pub fn anchored_box(mask: &BinaryMask, anchors: &[(usize, usize)]) -> Option<(u32, u32, u32, u32)> {
    let (labels, areas) = flood_fill(mask);
    if areas.is_empty() {
        return None;
    }
    let (h, w) = mask.dims();
    let mut chosen: Vec<u32> = anchors
        .iter()
        .map(|&(x, y)| labels[y * w + x])
        .filter(|&l| l != 0)
        .collect();
    if chosen.is_empty() {
        let mut best = 0;
        for (i, &a) in areas.iter().enumerate() {
            if a > areas[best] {
                best = i;
            }
        }
        chosen.push(best as u32 + 1);
    }
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if chosen.contains(&labels[y * w + x]) {
                x0 = x0.min(x as u32);
                y0 = y0.min(y as u32);
                x1 = x1.max(x as u32);
                y1 = y1.max(y as u32);
            }
        }
    }
    Some((x0, y0, x1, y1))
}

/// Greedy selection that rescans the whole grid for every pick.
/// Returns `(x, y)` in selection order.
pub fn greedy_rescan(
    grid: &ScoreGrid,
    k: usize,
    spacing: f64,
    highest: bool,
    domain: Option<&BinaryMask>,
) -> Vec<(usize, usize)> {
    let (h, w) = grid.dims();
    let mut picked: Vec<(usize, usize)> = Vec::new();
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None;
        for y in 0..h {
            for x in 0..w {
                if domain.is_some_and(|d| !d.get(y, x)) || picked.contains(&(x, y)) {
                    continue;
                }
                let far = picked.iter().all(|&(px, py)| {
                    let dx = px as f64 - x as f64;
                    let dy = py as f64 - y as f64;
                    (dx * dx + dy * dy).sqrt() >= spacing
                });
                if !far {
                    continue;
                }
                let v = grid.get(y, x);
                let better = match best {
                    None => true,
                    Some((bx, by)) => {
                        let bv = grid.get(by, bx);
                        if highest {
                            v > bv
                        } else {
                            v < bv
                        }
                    }
                };
                if better {
                    best = Some((x, y));
                }
            }
        }
        match best {
            Some(p) => picked.push(p),
            None => break,
        }
    }
    picked
}

/// Pairwise Mann-Whitney AUROC.
pub fn auroc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &ti) in truth.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn thresholds_desc(scores: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

fn confusion(scores: &[f64], truth: &[bool], t: f64) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (&s, &y) in scores.iter().zip(truth) {
        match (s >= t, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    (tp, fp, fneg)
}

/// F1 at every distinct score threshold and at +inf.
pub fn f1_max(scores: &[f64], truth: &[bool]) -> Option<f64> {
    if !truth.iter().any(|&t| t) {
        return None;
    }
    let mut best: f64 = 0.0; // the +inf threshold predicts nothing
    for t in thresholds_desc(scores) {
        let (tp, fp, fneg) = confusion(scores, truth, t);
        if tp == 0 {
            continue;
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fneg) as f64;
        best = best.max(2.0 * p * r / (p + r));
    }
    Some(best)
}

/// Sum of recall increments times precision, one threshold at a time.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let pos = truth.iter().filter(|&&t| t).count();
    if pos == 0 {
        return None;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds_desc(scores) {
        let (tp, fp, _) = confusion(scores, truth, t);
        let recall = tp as f64 / pos as f64;
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Random mask with a density drawn per call, sometimes blob-shaped.
pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    match rng.gen_range(0..10) {
        0 => BinaryMask::empty(h, w).unwrap(),
        1 => BinaryMask::full(h, w).unwrap(),
        2..=5 => {
            let p: f64 = rng.gen_range(0.002..0.3);
            BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(p)).unwrap()
        }
        _ => {
            let blobs = rng.gen_range(1..5);
            let centers: Vec<(f64, f64, f64)> = (0..blobs)
                .map(|_| {
                    (
                        rng.gen_range(0.0..w as f64),
                        rng.gen_range(0.0..h as f64),
                        rng.gen_range(1.0..(h.min(w) as f64 / 4.0).max(1.5)),
                    )
                })
                .collect();
            BinaryMask::from_fn(h, w, |y, x| {
                centers.iter().any(|&(cx, cy, r)| {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    dx * dx + dy * dy <= r * r
                })
            })
            .unwrap()
        }
    }
}

/// Random scores; coarse quantization makes ties common.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    match rng.gen_range(0..4) {
        0 => {
            let levels = rng.gen_range(1..6) as f64;
            (0..n).map(|_| (rng.gen_range(0.0..=levels)).round() / levels).collect()
        }
        1 => vec![rng.gen_range(0.0..1.0); n],
        _ => (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}
