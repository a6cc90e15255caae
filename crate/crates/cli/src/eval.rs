use std::path::PathBuf;

use anyhow::{bail, Context};
use zsas_core::dataset::DatasetIndex;
use zsas_core::io;
use zsas_core::metrics::{Accumulator, EvalResult};

use crate::args::EvalArgs;

/// Scores every indexed image's prediction against its truth.
pub fn evaluate(pred: &std::path::Path, index: &DatasetIndex) -> anyhow::Result<EvalResult> {
    // Accept both a run output directory and a bare directory of predictions.
    let base = if pred.join("masks").is_dir() {
        pred.join("masks")
    } else {
        pred.to_path_buf()
    };
    let path_for = |id: &str| -> PathBuf { base.join(format!("{id}.png")) };

    let missing: Vec<String> = index
        .entries
        .iter()
        .map(|e| e.id())
        .filter(|id| !path_for(id).is_file())
        .collect();
    if !missing.is_empty() {
        bail!(
            "missing predictions for {} image(s): {}",
            missing.len(),
            missing.join(", ")
        );
    }

    let mut acc = Accumulator::new();
    for entry in &index.entries {
        let id = entry.id();
        let scores = io::read_score_png(&path_for(&id))?;
        let truth = entry.truth()?;
        if scores.dims() != truth.dims() {
            bail!(
                "prediction for `{id}` is {:?} but its truth is {:?}",
                scores.dims(),
                truth.dims()
            );
        }
        acc.push(id, entry.category.clone(), &scores, &truth)?;
    }
    Ok(acc.finish()?)
}

/// `zsas eval`.
pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<i32> {
    let index = DatasetIndex::scan(&args.dataset)?;
    let result = evaluate(&args.pred, &index)?;
    let out = args.out.clone().unwrap_or_else(|| args.pred.clone());
    io::write_json(&out.join("eval.json"), &result)?;
    let csv_path = out.join("eval.csv");
    std::fs::write(&csv_path, result.to_csv()?)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let fmt = |v: Option<f64>| v.map(|v| format!("{:.4}", v)).unwrap_or_else(|| "n/a".into());
    let m = &result.pooled.metrics;
    println!(
        "pooled over {} images: AUROC {} F1-max {} AP {}",
        result.per_image.len(),
        fmt(m.auroc),
        fmt(m.f1_max),
        fmt(m.ap)
    );
    Ok(0)
}
