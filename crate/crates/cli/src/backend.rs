use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use zsas_core::backends::file::file_backend_load;
use zsas_core::backends::synthetic::SyntheticBackend;
use zsas_core::backends::Backends;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    /// Scenes read from `<dataset>/scenes.json`.
    Synthetic,
    Files(PathBuf),
    Graphs {
        encoder: PathBuf,
        decoder: PathBuf,
        scorer: PathBuf,
    },
}

impl BackendSpec {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        if s == "synthetic" {
            return Ok(BackendSpec::Synthetic);
        }
        if let Some(path) = s.strip_prefix("files:") {
            if path.is_empty() {
                bail!("backend `files:` needs a manifest path");
            }
            return Ok(BackendSpec::Files(path.into()));
        }
        if let Some(rest) = s.strip_prefix("graphs:") {
            let parts: Vec<&str> = rest.split(',').collect();
            let [encoder, decoder, scorer] = parts.as_slice() else {
                bail!("backend `graphs:` needs <encoder>,<decoder>,<scorer>, got `{rest}`");
            };
            return Ok(BackendSpec::Graphs {
                encoder: encoder.into(),
                decoder: decoder.into(),
                scorer: scorer.into(),
            });
        }
        bail!("unknown backend `{s}` (expected synthetic, files:<manifest> or graphs:<enc>,<dec>,<scorer>)")
    }

    /// True when the backends consume decoded pixels rather than image ids.
    pub fn needs_pixels(&self) -> bool {
        matches!(self, BackendSpec::Graphs { .. })
    }

    pub fn load(&self, dataset: &Path) -> anyhow::Result<Backends> {
        match self {
            BackendSpec::Synthetic => {
                let scenes = dataset.join("scenes.json");
                let synth = Arc::new(
                    SyntheticBackend::load(&scenes)
                        .with_context(|| format!("loading synthetic scenes {}", scenes.display()))?,
                );
                Ok(Backends {
                    scorer: synth.clone(),
                    segmenter: synth,
                })
            }
            BackendSpec::Files(manifest) => {
                let (scorer, segmenter) = file_backend_load(manifest)?;
                Ok(Backends { scorer, segmenter })
            }
            BackendSpec::Graphs {
                encoder,
                decoder,
                scorer,
            } => load_graphs(encoder, decoder, scorer),
        }
    }
}

#[cfg(feature = "graphs")]
fn load_graphs(encoder: &Path, decoder: &Path, scorer: &Path) -> anyhow::Result<Backends> {
    let (scorer, segmenter) =
        zsas_core::backends::graph::graph_backend_load(encoder, decoder, scorer)?;
    Ok(Backends { scorer, segmenter })
}

#[cfg(not(feature = "graphs"))]
fn load_graphs(_: &Path, _: &Path, _: &Path) -> anyhow::Result<Backends> {
    Err(zsas_core::Error::Contract {
        context: "backend selection".into(),
        expected: "a build with the `graphs` feature".into(),
        found: "graphs backend".into(),
    }
    .into())
}
