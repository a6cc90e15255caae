use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use serde::Serialize;
use zsas_core::backends::{Backends, CountingSegmenter, SegmenterBackend};
use zsas_core::io;
use zsas_core::metrics::{Accumulator, MetricSet};
use zsas_core::pipeline::{depth_ladder, encode_image, segment_encoded};
use zsas_core::{BinaryMask, KernelShape, PipelineConfig, ScoreGrid, StructuringElement};

use crate::args::AblateArgs;
use crate::run::{RunManifest, Session};

pub const KERNEL_SHAPES: [KernelShape; 3] =
    [KernelShape::Cross, KernelShape::Rectangle, KernelShape::Ellipse];
pub const KERNEL_SIZES: [u32; 3] = [20, 25, 30];
pub const CASCADE_LABELS: [&str; 3] = ["only points", "points+logit1", "points+box+logit2"];

#[derive(Debug, Clone, Serialize)]
pub struct KernelRow {
    pub shape: String,
    pub size: String,
    /// Size actually used after even sizes are rounded up.
    pub effective_size: String,
    pub images: usize,
    pub failures: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct CascadeRow {
    pub setting: String,
    pub depth: u8,
    pub images: usize,
    pub failures: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Debug, Serialize)]
pub struct KernelReport {
    pub rows: Vec<KernelRow>,
}

#[derive(Debug, Serialize)]
pub struct CascadeReport {
    pub rows: Vec<CascadeRow>,
    pub decoder_calls: usize,
}

/// The nine kernel settings in report order.
pub fn kernel_grid() -> Vec<(KernelShape, u32)> {
    KERNEL_SHAPES
        .iter()
        .flat_map(|&s| KERNEL_SIZES.iter().map(move |&n| (s, n)))
        .collect()
}

type PerImage = (String, BinaryMask, Vec<ScoreGrid>);

/// Feeds per-image maps (one per setting) into one accumulator per setting.
fn reduce(
    settings: usize,
    results: Vec<(String, Result<PerImage, String>)>,
) -> anyhow::Result<(Vec<MetricSet>, usize, usize)> {
    let mut accs: Vec<Accumulator> = (0..settings).map(|_| Accumulator::new()).collect();
    let mut failures = 0;
    for (id, r) in results {
        match r {
            Ok((category, truth, maps)) => {
                for (acc, map) in accs.iter_mut().zip(&maps) {
                    acc.push(id.clone(), category.clone(), map, &truth)?;
                }
            }
            Err(e) => {
                eprintln!("{id}: {e}");
                failures += 1;
            }
        }
    }
    let images = accs[0].len();
    let metrics = accs
        .into_iter()
        .map(|a| {
            if a.is_empty() {
                Ok(MetricSet::default())
            } else {
                a.finish().map(|r| r.pooled.metrics)
            }
        })
        .collect::<zsas_core::Result<Vec<_>>>()?;
    Ok((metrics, images, failures))
}

fn fmt(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "n/a".into())
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `zsas ablate-kernel`.
pub fn cmd_ablate_kernel(args: &AblateArgs) -> anyhow::Result<i32> {
    let session = Session::open(&args.common)?;
    let grid = kernel_grid();
    let configs: Vec<PipelineConfig> = grid
        .iter()
        .map(|&(shape, n)| {
            PipelineConfig {
                kernel: StructuringElement { shape, size: (n, n) },
                ..session.config.clone()
            }
            .validate()
        })
        .collect::<zsas_core::Result<_>>()?;

    let results = session.map_images(|entry, img| {
        let encoded = encode_image(&session.backends, &img.input)?;
        let maps = configs
            .iter()
            .map(|cfg| {
                segment_encoded(&session.backends, &img.input, &encoded, cfg)?
                    .output_map(cfg, img.height, img.width)
            })
            .collect::<zsas_core::Result<Vec<_>>>()?;
        Ok((entry.category.clone(), entry.truth()?, maps))
    })?;
    let results = results.into_iter().map(|(e, r)| (e.id(), r)).collect();
    let (metrics, images, failures) = reduce(configs.len(), results)?;

    let rows: Vec<KernelRow> = grid
        .iter()
        .zip(&configs)
        .zip(metrics)
        .map(|((&(shape, n), cfg), metrics)| KernelRow {
            shape: shape.as_str().to_string(),
            size: format!("({n},{n})"),
            effective_size: format!("({},{})", cfg.kernel.size.0, cfg.kernel.size.1),
            images,
            failures,
            metrics,
        })
        .collect();

    let out = &args.common.out;
    io::write_json(&out.join("run_manifest.json"), &RunManifest::new("ablate-kernel", &session))?;
    io::write_json(&out.join("ablation_kernel.json"), &KernelReport { rows: rows.clone() })?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.shape.clone(),
                r.size.clone(),
                r.effective_size.clone(),
                cell(r.metrics.auroc),
                cell(r.metrics.f1_max),
                cell(r.metrics.ap),
            ]
        })
        .collect();
    write_csv(
        &out.join("ablation_kernel.csv"),
        &["shape", "size", "effective_size", "auroc", "f1_max", "ap"],
        &table,
    )?;
    println!("{:<10} {:<8} {:>7} {:>7} {:>7}", "shape", "size", "AUROC", "F1-max", "AP");
    for r in &rows {
        println!(
            "{:<10} {:<8} {:>7} {:>7} {:>7}",
            r.shape,
            r.size,
            fmt(r.metrics.auroc),
            fmt(r.metrics.f1_max),
            fmt(r.metrics.ap)
        );
    }
    Ok(if failures > 0 { 1 } else { 0 })
}

/// `zsas ablate-cascade`. Each image costs three decoder calls.
pub fn cmd_ablate_cascade(args: &AblateArgs) -> anyhow::Result<i32> {
    let session = Session::open(&args.common)?;
    let counter = Arc::new(CountingSegmenter::new(session.backends.segmenter.clone()));
    let counted = Backends {
        scorer: session.backends.scorer.clone(),
        segmenter: counter.clone() as Arc<dyn SegmenterBackend>,
    };
    let config = &session.config;

    let results = session.map_images(|entry, img| {
        let ladder = depth_ladder(&counted, &img.input, config)?;
        let maps = ladder
            .iter()
            .zip(1u8..)
            .map(|(o, depth)| {
                let cfg = PipelineConfig {
                    cascade_depth: depth,
                    ..config.clone()
                };
                o.output_map(&cfg, img.height, img.width)
            })
            .collect::<zsas_core::Result<Vec<_>>>()?;
        Ok((entry.category.clone(), entry.truth()?, maps))
    })?;
    let results = results.into_iter().map(|(e, r)| (e.id(), r)).collect();
    let (metrics, images, failures) = reduce(3, results)?;

    let rows: Vec<CascadeRow> = CASCADE_LABELS
        .iter()
        .zip(1u8..)
        .zip(metrics)
        .map(|((label, depth), metrics)| CascadeRow {
            setting: label.to_string(),
            depth,
            images,
            failures,
            metrics,
        })
        .collect();

    let out = &args.common.out;
    let report = CascadeReport {
        rows: rows.clone(),
        decoder_calls: counter.decode_count(),
    };
    io::write_json(&out.join("run_manifest.json"), &RunManifest::new("ablate-cascade", &session))?;
    io::write_json(&out.join("ablation_cascade.json"), &report)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.setting.clone(),
                r.depth.to_string(),
                cell(r.metrics.auroc),
                cell(r.metrics.f1_max),
                cell(r.metrics.ap),
            ]
        })
        .collect();
    write_csv(
        &out.join("ablation_cascade.csv"),
        &["setting", "depth", "auroc", "f1_max", "ap"],
        &table,
    )?;
    println!("{:<20} {:>7} {:>7} {:>7}", "setting", "AUROC", "F1-max", "AP");
    for r in &rows {
        println!(
            "{:<20} {:>7} {:>7} {:>7}",
            r.setting,
            fmt(r.metrics.auroc),
            fmt(r.metrics.f1_max),
            fmt(r.metrics.ap)
        );
    }
    println!("decoder calls: {}", report.decoder_calls);
    Ok(if failures > 0 { 1 } else { 0 })
}
