//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use zsas_cli::args::Cli;
use zsas_cli::execute;
use zsas_core::backends::synthetic::{
    generate_scene, noise_suite, SceneOptions, SceneSpec, SyntheticBackend, DEFAULT_SCENE_SIZE,
};
use zsas_core::backends::{Backends, ImageInput};
use zsas_core::imgproc::{dilate, ring};
use zsas_core::metrics::{Accumulator, MetricSet};
use zsas_core::pipeline::{depth_ladder, process_image};
use zsas_core::ppg::{respects_spacing, select_spaced_topk, SelectOrder};
use zsas_core::{
    BinaryMask, KernelShape, PipelineConfig, Polarity, ScoreGrid, StructuringElement,
};

type Outcome = Result<String, String>;

fn within(start: Instant, limit: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    if took < limit {
        Ok(format!("{detail}, {:.2}s", took.as_secs_f64()))
    } else {
        Err(format!("{detail}, but took {:.2}s (limit {}s)", took.as_secs_f64(), limit.as_secs()))
    }
}

const SHAPES: [KernelShape; 3] = [KernelShape::Ellipse, KernelShape::Rectangle, KernelShape::Cross];

fn morphology() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut checked = 0;
    for m in 0..200 {
        let mask = oracle::random_mask(&mut rng, 64, 64);
        for shape in SHAPES {
            for n in (3..=31).step_by(2) {
                let el = StructuringElement::new(shape, n, n).map_err(|e| e.to_string())?;
                let d = dilate(&mask, &el).map_err(|e| e.to_string())?;
                let r = ring(&mask, &el).map_err(|e| e.to_string())?;
                if d != oracle::dilate(&mask, shape, n, n) {
                    return Err(format!("dilation differs: mask {m}, {shape:?} {n}x{n}"));
                }
                if r != oracle::ring(&mask, shape, n, n) {
                    return Err(format!("ring differs: mask {m}, {shape:?} {n}x{n}"));
                }
                checked += 1;
            }
        }
    }
    within(start, Duration::from_secs(30), format!("{checked} mask/element pairs exact"))
}

fn spaced_topk() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    for g in 0..500 {
        let (h, w) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let values = oracle::random_scores(&mut rng, h * w);
        let grid = ScoreGrid::new(h, w, values.into_iter().map(|v| v as f32).collect())
            .map_err(|e| e.to_string())?;
        let k = rng.gen_range(1..=5);
        let domain = rng
            .gen_bool(0.5)
            .then(|| oracle::random_mask(&mut rng, h, w))
            .filter(|d| !d.is_all_background());
        for spacing in [0.0, 8.0, 32.0] {
            for (order, highest) in [(SelectOrder::Highest, true), (SelectOrder::Lowest, false)] {
                let got = select_spaced_topk(&grid, k, spacing, order, domain.as_ref(), Polarity::Positive)
                    .map_err(|e| e.to_string())?;
                let got: Vec<(usize, usize)> =
                    got.iter().map(|p| (p.x as usize, p.y as usize)).collect();
                let want = oracle::greedy_rescan(&grid, k, spacing, highest, domain.as_ref());
                if got != want {
                    return Err(format!(
                        "grid {g} ({h}x{w}), k {k}, spacing {spacing}, {order:?}: {got:?} vs {want:?}"
                    ));
                }
            }
        }
    }
    within(start, Duration::from_secs(10), "500 grids x 3 spacings x 2 orders exact".into())
}

fn agree(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

fn metric_case(rng: &mut ChaCha8Rng, i: usize) -> (Vec<f64>, Vec<bool>) {
    let (h, w) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
    let n = h * w;
    match i % 10 {
        // All scores tied.
        0 => {
            let v = rng.gen_range(0.0..1.0);
            let t = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            (vec![v; n], t)
        }
        // Exactly one positive pixel.
        1 => {
            let mut t = vec![false; n];
            t[rng.gen_range(0..n)] = true;
            (oracle::random_scores(rng, n), t)
        }
        _ => {
            let truth = oracle::random_mask(rng, h, w);
            (oracle::random_scores(rng, n), truth.values().to_vec())
        }
    }
}

fn metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    for i in 0..300 {
        let (s, t) = metric_case(&mut rng, i);
        let m = MetricSet::compute(&s, &t).map_err(|e| e.to_string())?;
        let checks = [
            ("AUROC", m.auroc, oracle::auroc(&s, &t)),
            ("F1-max", m.f1_max, oracle::f1_max(&s, &t)),
            ("AP", m.ap, oracle::average_precision(&s, &t)),
        ];
        for (name, got, want) in checks {
            if !agree(got, want, 1e-9) {
                return Err(format!("case {i}: {name} {got:?} vs oracle {want:?}"));
            }
        }
    }
    within(start, Duration::from_secs(30), "300 score/truth pairs within 1e-9".into())
}

fn invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let n = rng.gen_range(16..=1024);
        // Scores on a 1/64 lattice keep every transform strictly increasing in f64.
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=64) as f64 / 64.0).collect();
        let t: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.25)).collect();
        let a = rng.gen_range(0.5..4.0);
        let b = rng.gen_range(-2.0..2.0);
        let f: Box<dyn Fn(f64) -> f64> = match i % 5 {
            0 => Box::new(move |v| a * v + b),
            1 => Box::new(move |v| (a * v).exp()),
            2 => Box::new(move |v| v * v * v + a * v),
            3 => Box::new(move |v| 1.0 / (1.0 + (-(a * v + b)).exp())),
            _ => Box::new(move |v| (v + 1.0).ln() * a + b),
        };
        let warped: Vec<f64> = s.iter().map(|&v| f(v)).collect();
        let m0 = MetricSet::compute(&s, &t).map_err(|e| e.to_string())?;
        let m1 = MetricSet::compute(&warped, &t).map_err(|e| e.to_string())?;
        for (x, y) in [(m0.auroc, m1.auroc), (m0.f1_max, m1.f1_max), (m0.ap, m1.ap)] {
            match (x, y) {
                (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
                (None, None) => {}
                _ => return Err(format!("pair {i}: definedness changed")),
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("50 transforms, max deviation {worst:e}"))
    } else {
        Err(format!("max deviation {worst:e} exceeds 1e-12"))
    }
}

fn scene_mix(count: usize) -> Vec<SceneSpec> {
    (0..count)
        .map(|i| {
            let opts = SceneOptions {
                anomalies: [1, 1, 2, 0, 1][i % 5],
                noise_per_anomaly: i % 3,
                parts: i % 3,
                flat: i % 10 == 3,
                ..Default::default()
            };
            generate_scene(&format!("mix/s/{i:03}"), 5000 + i as u64, opts)
        })
        .collect()
}

fn synthetic(specs: Vec<SceneSpec>) -> zsas_core::Result<(Arc<SyntheticBackend>, Backends)> {
    let synth = Arc::new(SyntheticBackend::new(specs, 8)?);
    let backends = Backends {
        scorer: synth.clone(),
        segmenter: synth.clone(),
    };
    Ok((synth, backends))
}

fn ppg_placement() -> Outcome {
    let (synth, backends) = synthetic(scene_mix(100)).map_err(|e| e.to_string())?;
    let config = PipelineConfig::default();
    let (mut degraded, mut negatives) = (0, 0);
    let ids: Vec<String> = synth.scene_ids().map(String::from).collect();
    for id in &ids {
        let o = process_image(&backends, &ImageInput::new(id.as_str()), &config)
            .map_err(|e| format!("{id}: {e}"))?;
        let anomaly = &synth.scene(id).map_err(|e| e.to_string())?.anomaly_map;
        // S_a and N_a recomputed from the oracles, not taken from the outcome.
        let (h, w) = anomaly.dims();
        let (lo, hi) = anomaly.min_max();
        let (lo, hi) = (lo as f64, hi as f64);
        let s_a = BinaryMask::from_fn(h, w, |y, x| {
            let v = if hi > lo { ((anomaly.get(y, x) as f64 - lo) / (hi - lo)) as f32 } else { 0.0 };
            v as f64 >= config.extreme_threshold
        })
        .map_err(|e| e.to_string())?;
        let (kw, kh) = config.kernel.size;
        let n_a = oracle::ring(&s_a, config.kernel.shape, kw, kh);
        let pos: Vec<_> = o.prompts.positives().cloned().collect();
        let neg: Vec<_> = o.prompts.negatives().cloned().collect();
        if o.ppg.degraded != s_a.is_all_background() {
            return Err(format!("{id}: degraded {} but S_a empty {}", o.ppg.degraded, s_a.is_all_background()));
        }
        if o.ppg.degraded {
            degraded += 1;
            continue;
        }
        if let Some(p) = pos.iter().find(|p| !s_a.contains(p)) {
            return Err(format!("{id}: positive {p:?} outside S_a"));
        }
        if let Some(p) = neg.iter().find(|p| !n_a.contains(p)) {
            return Err(format!("{id}: negative {p:?} outside N_a"));
        }
        let spacing = o.ppg.positive_spacing;
        if !respects_spacing(&pos, spacing) || !respects_spacing(&neg, spacing) {
            return Err(format!("{id}: same-polarity spacing {spacing} violated"));
        }
        negatives += neg.len();
    }
    if degraded == 0 {
        return Err("no scene exercised the degraded path".into());
    }
    Ok(format!("{} scenes, {degraded} degraded, {negatives} negatives placed", ids.len()))
}

fn cascade() -> Outcome {
    let start = Instant::now();
    let (synth, backends) =
        synthetic(noise_suite(50, 2024, DEFAULT_SCENE_SIZE)).map_err(|e| e.to_string())?;
    let config = PipelineConfig::default();
    let mut shallow = Accumulator::new();
    let mut deep = Accumulator::new();
    let ids: Vec<String> = synth.scene_ids().map(String::from).collect();
    for id in &ids {
        let truth = &synth.scene(id).map_err(|e| e.to_string())?.anomaly_truth;
        let ladder = depth_ladder(&backends, &ImageInput::new(id.as_str()), &config)
            .map_err(|e| format!("{id}: {e}"))?;
        let m1 = ladder[0].final_mask();
        let m3 = ladder[2].final_mask();
        let iou = m3.iou(truth).map_err(|e| e.to_string())?;
        if iou != 1.0 {
            return Err(format!("{id}: IoU(M_3, truth) = {iou}"));
        }
        shallow.push(id.clone(), "noise", &m1.to_scores(), truth).map_err(|e| e.to_string())?;
        deep.push(id.clone(), "noise", &m3.to_scores(), truth).map_err(|e| e.to_string())?;
    }
    let f1 = |a: Accumulator| -> Result<f64, String> {
        a.finish()
            .map_err(|e| e.to_string())?
            .pooled
            .metrics
            .f1_max
            .ok_or_else(|| "F1-max undefined".to_string())
    };
    let (f1_1, f1_3) = (f1(shallow)?, f1(deep)?);
    if f1_3 <= f1_1 {
        return Err(format!("depth-3 F1-max {f1_3:.4} does not exceed depth-1 {f1_1:.4}"));
    }
    within(
        start,
        Duration::from_secs(60),
        format!("{} scenes, F1-max {f1_1:.4} -> {f1_3:.4}, every IoU(M_3) = 1", ids.len()),
    )
}

fn run_cli(args: &[&str]) -> Result<i32, String> {
    let cli = Cli::try_parse_from(std::iter::once("zsas").chain(args.iter().copied()))
        .map_err(|e| e.to_string())?;
    execute(&cli).map_err(|e| format!("{e:#}"))
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn ablation_shape() -> Outcome {
    let default = PipelineConfig::default();
    if default.kernel.shape != KernelShape::Ellipse || default.kernel.size != (25, 25) {
        return Err(format!("default kernel is {:?}", default.kernel));
    }
    if default.cascade_depth != 3 {
        return Err(format!("default depth is {}", default.cascade_depth));
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let data_s = data.to_str().unwrap();
    run_cli(&["synth", "--out", data_s])?;
    let kern = tmp.path().join("kernel");
    let casc = tmp.path().join("cascade");
    run_cli(&["ablate-kernel", "--dataset", data_s, "--out", kern.to_str().unwrap()])?;
    run_cli(&["ablate-cascade", "--dataset", data_s, "--out", casc.to_str().unwrap()])?;

    let rows = read_json(&kern.join("ablation_kernel.json"))?["rows"].clone();
    let got: Vec<(String, String)> = rows
        .as_array()
        .ok_or("kernel rows missing")?
        .iter()
        .map(|r| (r["shape"].as_str().unwrap_or("").into(), r["size"].as_str().unwrap_or("").into()))
        .collect();
    let want: Vec<(String, String)> = ["cross", "rectangle", "ellipse"]
        .iter()
        .flat_map(|s| [20, 25, 30].map(|n| (s.to_string(), format!("({n},{n})"))))
        .collect();
    if got != want {
        return Err(format!("kernel rows {got:?}"));
    }
    let report = read_json(&casc.join("ablation_cascade.json"))?;
    let labels: Vec<&str> = report["rows"]
        .as_array()
        .ok_or("cascade rows missing")?
        .iter()
        .map(|r| r["setting"].as_str().unwrap_or(""))
        .collect();
    if labels != ["only points", "points+logit1", "points+box+logit2"] {
        return Err(format!("cascade rows {labels:?}"));
    }
    Ok(format!("9 kernel rows, 3 cascade rows, {} decoder calls", report["decoder_calls"]))
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let data_s = data.to_str().unwrap();
    run_cli(&["synth", "--out", data_s])?;
    let outs = [tmp.path().join("a"), tmp.path().join("b")];
    for (out, workers) in outs.iter().zip(["1", "4"]) {
        let code = run_cli(&["run", "--dataset", data_s, "--out", out.to_str().unwrap(), "--workers", workers])?;
        if code != 0 {
            return Err(format!("run exited with {code}"));
        }
    }
    let masks: Vec<_> = files_under(&outs[0].join("masks"));
    if masks.is_empty() || masks != files_under(&outs[1].join("masks")) {
        return Err("mask file sets differ or are empty".into());
    }
    let mut compared = 0;
    let rels = masks
        .iter()
        .map(|m| Path::new("masks").join(m))
        .chain([Path::new("run_report.json").to_path_buf()]);
    for rel in rels {
        let a = std::fs::read(outs[0].join(&rel)).map_err(|e| e.to_string())?;
        let b = std::fs::read(outs[1].join(&rel)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{} differs between runs", rel.display()));
        }
        compared += 1;
    }
    Ok(format!("{compared} files byte-identical across runs"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("morphology oracle", morphology),
        ("spaced top-k oracle", spaced_topk),
        ("metrics oracle", metrics),
        ("metric invariance", invariance),
        ("prompt placement", ppg_placement),
        ("cascade noise removal", cascade),
        ("ablation harness shape", ablation_shape),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
