use std::path::{Path, PathBuf};

use anyhow::Context;
use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::Serialize;
use zsas_core::backends::{Backends, ImageInput};
use zsas_core::dataset::{DatasetEntry, DatasetIndex};
use zsas_core::io;
use zsas_core::pipeline::{process_image, ImageOutcome};
use zsas_core::{BinaryMask, PipelineConfig, PointPrompt};

use crate::args::{Common, RunArgs};
use crate::backend::BackendSpec;

/// What a command needs before touching any image.
pub struct Session {
    pub spec: String,
    pub backends: Backends,
    pub config: PipelineConfig,
    pub index: DatasetIndex,
    pub pool: rayon::ThreadPool,
}

impl Session {
    pub fn open(common: &Common) -> anyhow::Result<Self> {
        let config = common.config.resolve()?;
        let spec = BackendSpec::parse(&common.backend)?;
        let index = DatasetIndex::scan(&common.dataset)?;
        let backends = spec.load(&common.dataset)?;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = common.workers {
            pool = pool.num_threads(n.max(1));
        }
        Ok(Session {
            spec: common.backend.clone(),
            backends,
            config,
            index,
            pool: pool.build().context("building the worker pool")?,
        })
    }

    /// Runs `f` over every indexed image on the worker pool, in index order.
    ///
    /// Configuration and contract errors abort the whole command; anything
    /// else is recorded against the image.
    pub fn map_images<T, F>(&self, f: F) -> anyhow::Result<Vec<(DatasetEntry, Result<T, String>)>>
    where
        T: Send,
        F: Fn(&DatasetEntry, &LoadedImage) -> zsas_core::Result<T> + Sync,
    {
        let results: Vec<zsas_core::Result<T>> = self.pool.install(|| {
            self.index
                .entries
                .par_iter()
                .map(|entry| LoadedImage::read(entry).and_then(|img| f(entry, &img)))
                .collect()
        });
        let mut out = Vec::with_capacity(results.len());
        for (entry, r) in self.index.entries.iter().zip(results) {
            match r {
                Err(e) if e.is_contract_or_config() => {
                    return Err(anyhow::Error::new(e).context(format!("image `{}`", entry.id())))
                }
                Err(e) => out.push((entry.clone(), Err(e.to_string()))),
                Ok(v) => out.push((entry.clone(), Ok(v))),
            }
        }
        Ok(out)
    }
}

pub struct LoadedImage {
    pub input: ImageInput,
    pub height: usize,
    pub width: usize,
}

impl LoadedImage {
    fn read(entry: &DatasetEntry) -> zsas_core::Result<Self> {
        let rgb = io::read_rgb(&entry.image_path)?;
        let (w, h) = rgb.dimensions();
        Ok(LoadedImage {
            input: ImageInput::with_pixels(entry.id(), rgb),
            height: h as usize,
            width: w as usize,
        })
    }

    pub fn pixels(&self) -> &RgbImage {
        self.input.pixels.as_ref().expect("read with pixels")
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub backend: &'a str,
    pub backends: String,
    pub dataset: String,
    pub images: usize,
    pub config: &'a PipelineConfig,
}

impl<'a> RunManifest<'a> {
    pub fn new(command: &'a str, session: &'a Session) -> Self {
        RunManifest {
            tool: "zsas",
            version: env!("CARGO_PKG_VERSION"),
            command,
            backend: &session.spec,
            backends: session.backends.describe(),
            dataset: session.index.root.display().to_string(),
            images: session.index.len(),
            config: &session.config,
        }
    }
}

#[derive(Debug, Serialize)]
struct PointRecord {
    x: u32,
    y: u32,
    positive: bool,
    score: f64,
}

impl From<&PointPrompt> for PointRecord {
    fn from(p: &PointPrompt) -> Self {
        PointRecord {
            x: p.x,
            y: p.y,
            positive: p.is_positive(),
            score: p.score,
        }
    }
}

#[derive(Debug, Serialize)]
struct ImageRecord {
    id: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompts: Option<Vec<PointRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    derived_box: Option<[u32; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage_scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    foreground_pixels: Option<usize>,
    prompt_fallback: bool,
    cascade_fallback: bool,
}

#[derive(Debug, Serialize)]
struct RunReport {
    images: Vec<ImageRecord>,
    failures: usize,
}

pub fn mask_rel_path(id: &str) -> PathBuf {
    PathBuf::from("masks").join(format!("{id}.png"))
}

/// Draws a translucent fill and a 1-px boundary of `mask` over `rgb`.
pub fn overlay(rgb: &RgbImage, mask: &BinaryMask) -> RgbImage {
    const COLOR: [u8; 3] = [230, 30, 30];
    const ALPHA: f32 = 0.4;
    let (h, w) = mask.dims();
    let mut out = rgb.clone();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1);
            let px = out.get_pixel_mut(x as u32, y as u32);
            *px = if edge {
                Rgb(COLOR)
            } else {
                let mix = |a: u8, b: u8| (a as f32 * (1.0 - ALPHA) + b as f32 * ALPHA).round() as u8;
                Rgb([
                    mix(px.0[0], COLOR[0]),
                    mix(px.0[1], COLOR[1]),
                    mix(px.0[2], COLOR[2]),
                ])
            };
        }
    }
    out
}

fn dump_debug(dir: &Path, outcome: &ImageOutcome) -> zsas_core::Result<()> {
    let ppg = &outcome.ppg;
    io::write_mask_png(&dir.join("extreme_region.png"), &ppg.extreme_mask)?;
    io::write_mask_png(&dir.join("ring.png"), &ppg.ring_mask)?;
    io::write_score_grid(&dir.join("masked_anomaly.f32"), &ppg.masked_anomaly)?;
    io::write_score_grid(&dir.join("similarity.f32"), &ppg.similarity)?;
    let t = &outcome.trace;
    for (i, (mask, logit)) in t.stage_masks.iter().zip(&t.stage_logits).enumerate() {
        io::write_mask_png(&dir.join(format!("stage{}_mask.png", i + 1)), mask)?;
        io::write_score_grid(&dir.join(format!("stage{}_logit.f32", i + 1)), logit)?;
    }
    io::write_score_grid(&dir.join("final_map.f32"), &t.final_map)?;
    let points: Vec<PointRecord> = outcome.prompts.points.iter().map(PointRecord::from).collect();
    io::write_json(
        &dir.join("prompts.json"),
        &serde_json::json!({
            "points": points,
            "box": t.derived_box,
            "stage_scores": t.stage_scores,
        }),
    )
}

/// `zsas run`. Returns the process exit code.
pub fn cmd_run(args: &RunArgs) -> anyhow::Result<i32> {
    let session = Session::open(&args.common)?;
    let out = &args.common.out;
    let config = &session.config;

    let results = session.map_images(|entry, img| {
        let outcome = process_image(&session.backends, &img.input, config)?;
        let id = entry.id();
        let map = outcome.output_map(config, img.height, img.width)?;
        io::write_score_png(&out.join(mask_rel_path(&id)), &map)?;
        if args.overlays {
            let mask = BinaryMask::new(
                img.height,
                img.width,
                map.values().iter().map(|&v| v >= 0.5).collect(),
            )?;
            io::write_rgb_png(
                &out.join("overlays").join(format!("{id}.png")),
                &overlay(img.pixels(), &mask),
            )?;
        }
        if args.debug_dumps {
            dump_debug(&out.join("debug").join(&id), &outcome)?;
        }
        Ok(outcome)
    })?;

    let mut failures = 0;
    let images = results
        .into_iter()
        .map(|(entry, r)| match r {
            Ok(o) => ImageRecord {
                id: entry.id(),
                status: "ok",
                error: None,
                mask: Some(mask_rel_path(&entry.id()).display().to_string()),
                prompts: Some(o.prompts.points.iter().map(PointRecord::from).collect()),
                derived_box: o
                    .trace
                    .derived_box
                    .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max]),
                stage_scores: Some(o.trace.stage_scores.clone()),
                foreground_pixels: Some(o.final_mask().foreground_count()),
                prompt_fallback: o.ppg.degraded,
                cascade_fallback: o.trace.degraded,
            },
            Err(e) => {
                failures += 1;
                eprintln!("{}: {e}", entry.id());
                ImageRecord {
                    id: entry.id(),
                    status: "failed",
                    error: Some(e),
                    mask: None,
                    prompts: None,
                    derived_box: None,
                    stage_scores: None,
                    foreground_pixels: None,
                    prompt_fallback: false,
                    cascade_fallback: false,
                }
            }
        })
        .collect();

    io::write_json(&out.join("run_manifest.json"), &RunManifest::new("run", &session))?;
    io::write_json(&out.join("run_report.json"), &RunReport { images, failures })?;
    println!(
        "segmented {} of {} images into {}",
        session.index.len() - failures,
        session.index.len(),
        out.display()
    );
    Ok(if failures > 0 { crate::EXIT_IMAGE_FAILURES } else { crate::EXIT_OK })
}
