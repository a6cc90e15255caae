use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use zsas_core::{KernelShape, OutputMapMode, PipelineConfig, StructuringElement};

#[derive(Debug, Parser)]
#[command(name = "zsas", version, about = "Zero-shot anomaly segmentation with mined prompts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment every test image of a dataset.
    Run(RunArgs),
    /// Score predicted maps against ground truth.
    Eval(EvalArgs),
    /// Evaluate the 3x3 grid of dilation kernel shapes and sizes.
    AblateKernel(AblateArgs),
    /// Evaluate cascade depths 1 to 3.
    AblateCascade(AblateArgs),
    /// Write the bundled synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Dataset root in MVTec layout.
    #[arg(long)]
    pub dataset: PathBuf,

    /// `synthetic`, `files:<manifest>` or `graphs:<encoder>,<decoder>,<scorer>`.
    #[arg(long, default_value = "synthetic")]
    pub backend: String,

    #[arg(long)]
    pub out: PathBuf,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,

    /// Dump prompts, intermediate masks and per-stage logits.
    #[arg(long)]
    pub debug_dumps: bool,

    /// Write mask overlays on the input images.
    #[arg(long)]
    pub overlays: bool,
}

#[derive(Debug, Args, Clone)]
pub struct EvalArgs {
    /// Output directory of a previous `run` (or a directory of prediction PNGs).
    #[arg(long)]
    pub pred: PathBuf,

    #[arg(long)]
    pub dataset: PathBuf,

    /// Where to write eval.json and eval.csv; defaults to `--pred`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Clone)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also dump precomputed tensors and a file-backend manifest under `<out>/precomputed`.
    #[arg(long)]
    pub precomputed: bool,
}

/// Per-field overrides on top of `--config` (or the defaults).
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub extreme_threshold: Option<f64>,

    #[arg(long)]
    pub k_positive: Option<usize>,

    #[arg(long)]
    pub k_negative: Option<usize>,

    #[arg(long)]
    pub min_spacing: Option<f64>,

    /// ellipse, rectangle or cross.
    #[arg(long)]
    pub kernel_shape: Option<KernelShape>,

    /// `N` for a square element or `WxH`.
    #[arg(long)]
    pub kernel_size: Option<String>,

    #[arg(long)]
    pub cascade_depth: Option<u8>,

    #[arg(long = "output-map")]
    pub output_map: Option<OutputMapMode>,

    #[arg(long)]
    pub blend_weight: Option<f64>,

    #[arg(long)]
    pub working_resolution: Option<u32>,
}

fn parse_kernel_size(s: &str) -> anyhow::Result<(u32, u32)> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).map(str::trim).collect();
    let num = |p: &str| {
        p.parse::<u32>()
            .with_context(|| format!("invalid configuration `kernel.size`: `{s}`"))
    };
    match parts.as_slice() {
        [n] => {
            let n = num(n)?;
            Ok((n, n))
        }
        [w, h] => Ok((num(w)?, num(h)?)),
        _ => bail!("invalid configuration `kernel.size`: expected N or WxH, got `{s}`"),
    }
}

impl ConfigArgs {
    /// Loads `--config` if given, applies the overrides and validates.
    pub fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_path(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.extreme_threshold {
            config.extreme_threshold = v;
        }
        if let Some(v) = self.k_positive {
            config.k_positive = v;
        }
        if let Some(v) = self.k_negative {
            config.k_negative = v;
        }
        if let Some(v) = self.min_spacing {
            config.min_spacing = v;
        }
        if self.kernel_shape.is_some() || self.kernel_size.is_some() {
            let shape = self.kernel_shape.unwrap_or(config.kernel.shape);
            let (w, h) = match &self.kernel_size {
                Some(s) => parse_kernel_size(s)?,
                None => config.kernel.size,
            };
            config.kernel = StructuringElement { shape, size: (w, h) };
        }
        if let Some(v) = self.cascade_depth {
            config.cascade_depth = v;
        }
        if let Some(v) = self.output_map {
            config.output_map_mode = v;
        }
        if let Some(v) = self.blend_weight {
            config.blend_weight = v;
        }
        if let Some(v) = self.working_resolution {
            config.working_resolution = v;
        }
        Ok(config.validate()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_validate() {
        let args = ConfigArgs {
            kernel_shape: Some(KernelShape::Cross),
            kernel_size: Some("24".into()),
            cascade_depth: Some(2),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.kernel.shape, KernelShape::Cross);
        assert_eq!(c.kernel.size, (25, 25));
        assert_eq!(c.cascade_depth, 2);
    }

    #[test]
    fn bad_kernel_size_names_the_field() {
        for bad in ["0x5", "abc", "1x2x3"] {
            let args = ConfigArgs {
                kernel_size: Some(bad.into()),
                ..Default::default()
            };
            let err = format!("{:#}", args.resolve().unwrap_err());
            assert!(err.contains("kernel.size"), "{bad}: {err}");
        }
    }

    #[test]
    fn rectangular_size() {
        assert_eq!(parse_kernel_size("7x9").unwrap(), (7, 9));
        assert_eq!(parse_kernel_size("7,9").unwrap(), (7, 9));
    }
}
