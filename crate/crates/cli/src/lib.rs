//! The `zsas` command-line driver.
//!
//! Exit codes: 0 on success, 1 when some images failed, 2 on configuration,
//! contract or dataset errors that abort the command.

pub mod ablate;
pub mod args;
pub mod backend;
pub mod eval;
pub mod run;

use std::sync::Arc;

use args::{Cli, Command, SynthArgs};
use zsas_core::backends::file::{dump_precomputed, SegmenterRef};
use zsas_core::backends::synthetic::{bundled_suite, write_dataset, SyntheticBackend, DEFAULT_CHANNELS};
use zsas_core::backends::ImageInput;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IMAGE_FAILURES: i32 = 1;
pub const EXIT_FATAL: i32 = 2;

/// `zsas synth`: writes the bundled synthetic suite.
pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<i32> {
    let specs = bundled_suite(args.seed);
    write_dataset(&args.out, &specs, DEFAULT_CHANNELS)?;
    if args.precomputed {
        let synth = Arc::new(SyntheticBackend::new(specs, DEFAULT_CHANNELS)?);
        let images: Vec<ImageInput> = synth.scene_ids().map(ImageInput::new).collect();
        let manifest = dump_precomputed(
            &args.out.join("precomputed"),
            synth.as_ref(),
            synth.as_ref(),
            &images,
            SegmenterRef::Synthetic("../scenes.json".into()),
        )?;
        println!("wrote {}", manifest.display());
    }
    println!("wrote {} scenes to {}", bundled_suite(args.seed).len(), args.out.display());
    Ok(EXIT_OK)
}

pub fn execute(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Run(a) => run::cmd_run(a),
        Command::Eval(a) => eval::cmd_eval(a),
        Command::AblateKernel(a) => ablate::cmd_ablate_kernel(a),
        Command::AblateCascade(a) => ablate::cmd_ablate_cascade(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Runs a parsed command and maps fatal errors to [`EXIT_FATAL`].
pub fn run_cli(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FATAL
        }
    }
}
