//! Backends serving precomputed anomaly maps and feature grids.
//!
//! The manifest is a JSON document; tensor paths are relative to its directory:
//!
//! ```json
//! {
//!   "native_resolution": 256,
//!   "feature_dims": [8, 64, 64],
//!   "images": {
//!     "disc/blob/000": {"anomaly_map": "maps/0.f32", "features": "features/0.f32"}
//!   },
//!   "segmenter": {"synthetic": "scenes.json"}
//! }
//! ```
//!
//! `segmenter` is either `{"synthetic": <scenes file>}` or
//! `{"decoder_graph": <onnx file>}`; decoding is delegated to it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticBackend;
use super::{Candidate, FeatureDims, ImageInput, ScorerBackend, SegmenterBackend};
use crate::error::{Error, Result};
use crate::io::{self, TensorHeader};
use crate::types::{FeatureGrid, PromptSet, ScoreGrid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTensors {
    pub anomaly_map: PathBuf,
    pub features: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterRef {
    Synthetic(PathBuf),
    DecoderGraph(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub native_resolution: usize,
    pub feature_dims: [usize; 3],
    pub images: BTreeMap<String, ImageTensors>,
    pub segmenter: SegmenterRef,
}

struct Store {
    root: PathBuf,
    manifest: Manifest,
}

impl Store {
    fn entry(&self, id: &str) -> Result<&ImageTensors> {
        self.manifest.images.get(id).ok_or_else(|| {
            Error::Data(format!("image `{id}` is not listed in the file-backend manifest"))
        })
    }

    fn header(&self, id: &str, rel: &Path) -> Result<Vec<usize>> {
        let side = io::sidecar_path(&self.root.join(rel));
        let text = std::fs::read_to_string(&side)
            .map_err(|e| Error::Data(format!("image `{id}`: {}: {e}", side.display())))?;
        let header: TensorHeader = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("image `{id}`: {}: {e}", side.display())))?;
        Ok(header.dims)
    }

    /// Checks every listed tensor's sidecar against the declared shapes.
    fn validate(&self) -> Result<()> {
        let n = self.manifest.native_resolution;
        let fd = self.manifest.feature_dims.to_vec();
        for (id, t) in &self.manifest.images {
            let map_dims = self.header(id, &t.anomaly_map)?;
            if map_dims != [n, n] {
                return Err(Error::Data(format!(
                    "image `{id}`: anomaly map dims {map_dims:?}, manifest declares [{n}, {n}]"
                )));
            }
            let feat_dims = self.header(id, &t.features)?;
            if feat_dims != fd {
                return Err(Error::Data(format!(
                    "image `{id}`: feature dims {feat_dims:?}, manifest declares {fd:?}"
                )));
            }
        }
        Ok(())
    }
}

pub struct FileScorer {
    store: Arc<Store>,
}

impl ScorerBackend for FileScorer {
    fn name(&self) -> &str {
        "files"
    }

    fn native_resolution(&self) -> usize {
        self.store.manifest.native_resolution
    }

    fn score(&self, image: &ImageInput) -> Result<ScoreGrid> {
        let entry = self.store.entry(&image.id)?;
        let grid = io::read_score_grid(&self.store.root.join(&entry.anomaly_map))
            .map_err(|e| Error::Data(format!("image `{}`: {e}", image.id)))?;
        let n = self.native_resolution();
        if grid.dims() != (n, n) {
            return Err(Error::Data(format!(
                "image `{}`: anomaly map is {:?}, expected {n}x{n}",
                image.id,
                grid.dims()
            )));
        }
        crate::imgproc::minmax_normalize(&grid)
    }
}

pub struct FileSegmenter {
    store: Arc<Store>,
    decoder: Box<dyn SegmenterBackend>,
}

impl SegmenterBackend for FileSegmenter {
    fn name(&self) -> &str {
        "files"
    }

    fn working_resolution(&self) -> usize {
        self.decoder.working_resolution()
    }

    fn logit_resolution(&self) -> usize {
        self.decoder.logit_resolution()
    }

    fn feature_dims(&self) -> FeatureDims {
        let [c, h, w] = self.store.manifest.feature_dims;
        (c, h, w)
    }

    fn encode(&self, image: &ImageInput) -> Result<FeatureGrid> {
        let entry = self.store.entry(&image.id)?;
        let grid = io::read_feature_grid(&self.store.root.join(&entry.features))
            .map_err(|e| Error::Data(format!("image `{}`: {e}", image.id)))?;
        if grid.dims() != self.feature_dims() {
            return Err(Error::Data(format!(
                "image `{}`: features are {:?}, expected {:?}",
                image.id,
                grid.dims(),
                self.feature_dims()
            )));
        }
        Ok(grid)
    }

    fn decode(
        &self,
        image: &ImageInput,
        features: &FeatureGrid,
        prompts: &PromptSet,
        multimask: bool,
    ) -> Result<Vec<Candidate>> {
        self.decoder.decode(image, features, prompts, multimask)
    }
}

fn load_decoder(root: &Path, reference: &SegmenterRef) -> Result<Box<dyn SegmenterBackend>> {
    match reference {
        SegmenterRef::Synthetic(scenes) => {
            Ok(Box::new(SyntheticBackend::load(&root.join(scenes))?))
        }
        #[cfg(feature = "graphs")]
        SegmenterRef::DecoderGraph(path) => Ok(Box::new(
            super::graph::GraphDecoder::load(&root.join(path))?,
        )),
        #[cfg(not(feature = "graphs"))]
        SegmenterRef::DecoderGraph(_) => Err(Error::Contract {
            context: "file-backend manifest".into(),
            expected: "a build with the `graphs` feature".into(),
            found: "decoder_graph reference".into(),
        }),
    }
}

/// Loads a manifest and returns the scorer and segmenter it describes.
pub fn file_backend_load(
    manifest_path: &Path,
) -> Result<(Arc<dyn ScorerBackend>, Arc<dyn SegmenterBackend>)> {
    let text =
        std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let decoder = load_decoder(&root, &manifest.segmenter)?;
    let store = Arc::new(Store { root, manifest });
    store.validate()?;

    let declared = {
        let [c, h, w] = store.manifest.feature_dims;
        (c, h, w)
    };
    if decoder.feature_dims() != declared {
        return Err(Error::Contract {
            context: "file-backend manifest".into(),
            expected: format!("decoder feature dims {declared:?}"),
            found: format!("{:?}", decoder.feature_dims()),
        });
    }
    Ok((
        Arc::new(FileScorer {
            store: store.clone(),
        }),
        Arc::new(FileSegmenter { store, decoder }),
    ))
}

/// Dumps anomaly maps and features from live backends into `dir` and writes
/// `dir/manifest.json`. Returns the manifest path.
pub fn dump_precomputed(
    dir: &Path,
    scorer: &dyn ScorerBackend,
    segmenter: &dyn SegmenterBackend,
    images: &[ImageInput],
    decoder: SegmenterRef,
) -> Result<PathBuf> {
    let mut entries = BTreeMap::new();
    for (i, image) in images.iter().enumerate() {
        let map_rel = PathBuf::from(format!("maps/{i:05}.f32"));
        let feat_rel = PathBuf::from(format!("features/{i:05}.f32"));
        io::write_score_grid(&dir.join(&map_rel), &scorer.score(image)?)?;
        io::write_feature_grid(&dir.join(&feat_rel), &segmenter.encode(image)?)?;
        entries.insert(
            image.id.clone(),
            ImageTensors {
                anomaly_map: map_rel,
                features: feat_rel,
            },
        );
    }
    let (c, h, w) = segmenter.feature_dims();
    let manifest = Manifest {
        native_resolution: scorer.native_resolution(),
        feature_dims: [c, h, w],
        images: entries,
        segmenter: decoder,
    };
    let path = dir.join("manifest.json");
    io::write_json(&path, &manifest)?;
    Ok(path)
}
