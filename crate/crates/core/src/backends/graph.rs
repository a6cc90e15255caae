//! ONNX-backed scorer and segmenter.
//!
//! Expected signatures:
//!
//! * encoder: one `f32[1, 3, S, S]` input, one `f32[1, C, h, w]` output.
//! * decoder: inputs `image_embeddings`, `point_coords` `[1, N, 2]`,
//!   `point_labels` `[1, N]`, `mask_input` `[1, 1, L, L]`, `has_mask_input`
//!   `[1]` and optionally `orig_im_size` `[2]`; outputs `masks`,
//!   `iou_predictions` and `low_res_masks`. Point labels are 1 for positive,
//!   0 for negative, 2 and 3 for the box corners, -1 for padding.
//! * scorer: one `f32[1, 3, S, S]` input, one anomaly-map output whose last two
//!   dims are the native resolution.
//!
//! Preprocessing constants come from the graph metadata keys `mean`, `std`
//! and `input_size`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use tract_onnx::prelude::*;

use super::{Candidate, FeatureDims, ImageInput, ScorerBackend, SegmenterBackend};
use crate::error::{Error, Result};
use crate::imgproc::{minmax_normalize, resize_bilinear};
use crate::types::{BinaryMask, FeatureGrid, PromptSet, ScoreGrid};

const DECODER_INPUTS: [&str; 5] = [
    "image_embeddings",
    "point_coords",
    "point_labels",
    "mask_input",
    "has_mask_input",
];
const DECODER_OUTPUTS: [&str; 3] = ["masks", "iou_predictions", "low_res_masks"];
const DEFAULT_LOGIT_SIZE: usize = 256;
const DEFAULT_INPUT_SIZE: usize = 1024;

type Plan = Arc<TypedRunnableModel>;

fn tract_err(context: &str, e: impl std::fmt::Display) -> Error {
    Error::Backend {
        backend: "graphs".into(),
        stage: None,
        reason: format!("{context}: {e}"),
    }
}

struct GraphModel {
    path: PathBuf,
    model: InferenceModel,
    inputs: Vec<String>,
    outputs: Vec<String>,
    metadata: HashMap<String, String>,
    plans: Mutex<HashMap<Vec<Vec<usize>>, Plan>>,
}

impl GraphModel {
    fn load(path: &Path) -> Result<Self> {
        let contract = |found: String| Error::Contract {
            context: path.display().to_string(),
            expected: "a readable ONNX model".into(),
            found,
        };
        let onnx = tract_onnx::onnx();
        let proto = onnx
            .proto_model_for_path(path)
            .map_err(|e| contract(format!("{e:#}")))?;
        let model = onnx
            .model_for_proto_model(&proto)
            .map_err(|e| contract(format!("{e:#}")))?;
        let metadata = proto
            .metadata_props
            .iter()
            .map(|p| (p.key.clone(), p.value.clone()))
            .collect();
        let inputs = model
            .input_outlets()
            .map_err(|e| contract(format!("{e:#}")))?
            .iter()
            .map(|o| model.node(o.node).name.clone())
            .collect();
        let outputs = model
            .output_outlets()
            .map_err(|e| contract(format!("{e:#}")))?
            .iter()
            .map(|&o| {
                model
                    .outlet_label(o)
                    .map(str::to_string)
                    .unwrap_or_else(|| model.node(o.node).name.clone())
            })
            .collect();
        Ok(GraphModel {
            path: path.to_path_buf(),
            model,
            inputs,
            outputs,
            metadata,
            plans: Mutex::new(HashMap::new()),
        })
    }

    fn signature_error(&self, role: &str, expected: &[&str]) -> Error {
        Error::Contract {
            context: format!("{role} graph {}", self.path.display()),
            expected: format!("inputs/outputs {expected:?}"),
            found: format!("inputs {:?}, outputs {:?}", self.inputs, self.outputs),
        }
    }

    fn input_index(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|n| n == name)
    }

    fn output_index(&self, name: &str) -> Option<usize> {
        self.outputs.iter().position(|n| n == name)
    }

    /// Concrete shape of input `ix` as declared by the graph, when fully known.
    fn declared_input_shape(&self, ix: usize) -> Option<Vec<usize>> {
        let fact = self.model.input_fact(ix).ok()?;
        fact.shape
            .as_concrete_finite()
            .ok()
            .flatten()
            .map(|s| s.to_vec())
    }

    fn meta_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.metadata.get(key) {
            None => Ok(None),
            Some(v) => v.trim().parse().map(Some).map_err(|_| Error::Contract {
                context: format!("{} metadata", self.path.display()),
                expected: format!("integer `{key}`"),
                found: v.clone(),
            }),
        }
    }

    fn meta_floats(&self, key: &str) -> Result<Option<Vec<f32>>> {
        let Some(v) = self.metadata.get(key) else {
            return Ok(None);
        };
        let parsed: std::result::Result<Vec<f32>, _> = v
            .trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .split(',')
            .map(|s| s.trim().parse::<f32>())
            .collect();
        parsed.map(Some).map_err(|_| Error::Contract {
            context: format!("{} metadata", self.path.display()),
            expected: format!("list of numbers for `{key}`"),
            found: v.clone(),
        })
    }

    fn plan_for(&self, shapes: &[Vec<usize>]) -> Result<Plan> {
        let mut plans = self.plans.lock().expect("plan cache poisoned");
        if let Some(p) = plans.get(shapes) {
            return Ok(p.clone());
        }
        let mut model = self.model.clone();
        for (ix, shape) in shapes.iter().enumerate() {
            model = model
                .with_input_fact(ix, f32::fact(shape).into())
                .map_err(|e| tract_err("setting input shape", format!("{e:#}")))?;
        }
        let plan = model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(|e| tract_err(&format!("preparing {}", self.path.display()), format!("{e:#}")))?;
        plans.insert(shapes.to_vec(), plan.clone());
        Ok(plan)
    }

    /// Runs the graph with inputs given in declaration order.
    fn run(&self, inputs: Vec<(Vec<usize>, Vec<f32>)>) -> Result<Vec<(Vec<usize>, Vec<f32>)>> {
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|(s, _)| s.clone()).collect();
        let plan = self.plan_for(&shapes)?;
        let tensors = inputs
            .into_iter()
            .map(|(shape, data)| {
                Tensor::from_shape(&shape, &data)
                    .map(|t| t.into_tvalue())
                    .map_err(|e| tract_err("building input", format!("{e:#}")))
            })
            .collect::<Result<TVec<_>>>()?;
        let outputs = plan
            .run(tensors)
            .map_err(|e| tract_err(&format!("running {}", self.path.display()), format!("{e:#}")))?;
        outputs
            .iter()
            .map(|t| {
                let view = t
                    .to_plain_array_view::<f32>()
                    .map_err(|e| tract_err("reading output", format!("{e:#}")))?;
                Ok((t.shape().to_vec(), view.iter().copied().collect()))
            })
            .collect()
    }
}

struct Preprocess {
    input_size: usize,
    mean: [f32; 3],
    std: [f32; 3],
}

impl Preprocess {
    fn from_metadata(graph: &GraphModel, role: &str) -> Result<Self> {
        let missing: Vec<&str> = ["mean", "std", "input_size"]
            .into_iter()
            .filter(|k| !graph.metadata.contains_key(*k))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Contract {
                context: format!("{role} graph {} metadata", graph.path.display()),
                expected: "keys mean, std, input_size".into(),
                found: format!("missing {missing:?}"),
            });
        }
        let triple = |key: &str| -> Result<[f32; 3]> {
            let v = graph.meta_floats(key)?.unwrap_or_default();
            match v.as_slice() {
                [a] => Ok([*a; 3]),
                [a, b, c] => Ok([*a, *b, *c]),
                _ => Err(Error::Contract {
                    context: format!("{role} graph metadata"),
                    expected: format!("1 or 3 values for `{key}`"),
                    found: format!("{v:?}"),
                }),
            }
        };
        let std = triple("std")?;
        if std.iter().any(|&s| s == 0.0) {
            return Err(Error::Contract {
                context: format!("{role} graph metadata"),
                expected: "non-zero std".into(),
                found: format!("{std:?}"),
            });
        }
        Ok(Preprocess {
            input_size: graph.meta_usize("input_size")?.unwrap_or(DEFAULT_INPUT_SIZE),
            mean: triple("mean")?,
            std,
        })
    }

    /// Resizes to the square input size and normalizes into NCHW layout.
    fn tensor(&self, image: &ImageInput) -> Result<(Vec<usize>, Vec<f32>)> {
        let pixels = image.pixels.as_ref().ok_or_else(|| {
            Error::Data(format!("image `{}` has no pixel data for graph inference", image.id))
        })?;
        let (w, h) = (pixels.width() as usize, pixels.height() as usize);
        let s = self.input_size;
        let mut data = Vec::with_capacity(3 * s * s);
        for c in 0..3 {
            let plane = ScoreGrid::new(
                h,
                w,
                pixels.pixels().map(|p| p.0[c] as f32).collect(),
            )?;
            let resized = resize_bilinear(&plane, s, s)?;
            data.extend(
                resized
                    .values()
                    .iter()
                    .map(|v| (v - self.mean[c]) / self.std[c]),
            );
        }
        Ok((vec![1, 3, s, s], data))
    }
}

pub struct GraphEncoder {
    graph: GraphModel,
    pre: Preprocess,
    feature_dims: FeatureDims,
}

impl GraphEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        let graph = GraphModel::load(path)?;
        if graph.inputs.len() != 1 || graph.outputs.is_empty() {
            return Err(graph.signature_error("encoder", &["image", "image_embeddings"]));
        }
        let pre = Preprocess::from_metadata(&graph, "encoder")?;
        let s = pre.input_size;
        let typed = graph
            .model
            .clone()
            .with_input_fact(0, f32::fact([1, 3, s, s]).into())
            .and_then(|m| m.into_typed())
            .map_err(|e| tract_err("typing encoder", format!("{e:#}")))?;
        let out_ix = graph.output_index("image_embeddings").unwrap_or(0);
        let shape = typed
            .output_fact(out_ix)
            .ok()
            .and_then(|f| f.shape.as_concrete().map(|s| s.to_vec()));
        let feature_dims = match shape.as_deref() {
            Some([1, c, h, w]) => (*c, *h, *w),
            _ => {
                return Err(Error::Contract {
                    context: format!("encoder graph {}", path.display()),
                    expected: "output f32[1, C, h, w]".into(),
                    found: format!("{shape:?}"),
                })
            }
        };
        if let Some(declared) = graph.meta_floats("feature_dims")? {
            let declared: Vec<usize> = declared.iter().map(|&v| v as usize).collect();
            if declared != [feature_dims.0, feature_dims.1, feature_dims.2] {
                return Err(Error::Contract {
                    context: format!("encoder graph {} metadata", path.display()),
                    expected: format!("feature_dims {feature_dims:?} matching the output"),
                    found: format!("{declared:?}"),
                });
            }
        }
        Ok(GraphEncoder {
            graph,
            pre,
            feature_dims,
        })
    }

    pub fn input_size(&self) -> usize {
        self.pre.input_size
    }

    pub fn feature_dims(&self) -> FeatureDims {
        self.feature_dims
    }

    pub fn encode(&self, image: &ImageInput) -> Result<FeatureGrid> {
        let input = self.pre.tensor(image)?;
        let outputs = self.graph.run(vec![input])?;
        let out_ix = self.graph.output_index("image_embeddings").unwrap_or(0);
        let (shape, data) = outputs.into_iter().nth(out_ix).expect("output exists");
        let (c, h, w) = self.feature_dims;
        if shape != [1, c, h, w] {
            return Err(Error::Contract {
                context: "encoder output".into(),
                expected: format!("[1, {c}, {h}, {w}]"),
                found: format!("{shape:?}"),
            });
        }
        FeatureGrid::new(c, h, w, data)
    }
}

pub struct GraphDecoder {
    graph: GraphModel,
    working_resolution: usize,
    logit_resolution: usize,
    feature_dims: FeatureDims,
}

impl GraphDecoder {
    pub fn load(path: &Path) -> Result<Self> {
        let graph = GraphModel::load(path)?;
        let mut expected: Vec<&str> = DECODER_INPUTS.to_vec();
        expected.extend(DECODER_OUTPUTS);
        let inputs_ok = DECODER_INPUTS.iter().all(|n| graph.input_index(n).is_some());
        let outputs_ok = DECODER_OUTPUTS.iter().all(|n| graph.output_index(n).is_some());
        let extra = graph
            .inputs
            .iter()
            .any(|n| !DECODER_INPUTS.contains(&n.as_str()) && n != "orig_im_size");
        if !inputs_ok || !outputs_ok || extra {
            return Err(graph.signature_error("decoder", &expected));
        }

        let logit_resolution = match graph
            .declared_input_shape(graph.input_index("mask_input").expect("checked"))
            .as_deref()
        {
            Some([1, 1, l, l2]) if l == l2 => *l,
            _ => graph.meta_usize("logit_size")?.unwrap_or(DEFAULT_LOGIT_SIZE),
        };
        let feature_dims = match graph
            .declared_input_shape(graph.input_index("image_embeddings").expect("checked"))
            .as_deref()
        {
            Some([1, c, h, w]) => (*c, *h, *w),
            _ => match graph.meta_floats("feature_dims")?.as_deref() {
                Some([c, h, w]) => (*c as usize, *h as usize, *w as usize),
                _ => {
                    return Err(Error::Contract {
                        context: format!("decoder graph {}", path.display()),
                        expected: "concrete image_embeddings shape or `feature_dims` metadata"
                            .into(),
                        found: "neither".into(),
                    })
                }
            },
        };
        Ok(GraphDecoder {
            working_resolution: graph.meta_usize("input_size")?.unwrap_or(DEFAULT_INPUT_SIZE),
            graph,
            logit_resolution,
            feature_dims,
        })
    }

    fn decode(
        &self,
        features: &FeatureGrid,
        prompts: &PromptSet,
        multimask: bool,
    ) -> Result<Vec<Candidate>> {
        if features.dims() != self.feature_dims {
            return Err(Error::Contract {
                context: "decoder image_embeddings".into(),
                expected: format!("{:?}", self.feature_dims),
                found: format!("{:?}", features.dims()),
            });
        }
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for p in &prompts.points {
            coords.extend([p.x as f32, p.y as f32]);
            labels.push(if p.is_positive() { 1.0 } else { 0.0 });
        }
        match prompts.bbox {
            Some(b) => {
                coords.extend([b.x_min as f32, b.y_min as f32, b.x_max as f32, b.y_max as f32]);
                labels.extend([2.0, 3.0]);
            }
            None => {
                coords.extend([0.0, 0.0]);
                labels.push(-1.0);
            }
        }
        let l = self.logit_resolution;
        let (mask_input, has_mask) = match &prompts.dense_logit {
            Some(logit) => (resize_bilinear(logit, l, l)?.into_values(), 1.0),
            None => (vec![0.0; l * l], 0.0),
        };
        let n = labels.len();
        let (c, h, w) = self.feature_dims;
        let work = self.working_resolution as f32;

        let inputs = self
            .graph
            .inputs
            .iter()
            .map(|name| match name.as_str() {
                "image_embeddings" => (vec![1, c, h, w], features.values().to_vec()),
                "point_coords" => (vec![1, n, 2], coords.clone()),
                "point_labels" => (vec![1, n], labels.clone()),
                "mask_input" => (vec![1, 1, l, l], mask_input.clone()),
                "has_mask_input" => (vec![1], vec![has_mask]),
                _ => (vec![2], vec![work, work]),
            })
            .collect();
        let outputs = self.graph.run(inputs)?;
        let get = |name: &str| &outputs[self.graph.output_index(name).expect("checked")];
        let (mask_shape, masks) = get("masks");
        let (_, scores) = get("iou_predictions");
        let (low_shape, low) = get("low_res_masks");

        let [1, m, mh, mw] = mask_shape.as_slice() else {
            return Err(Error::Contract {
                context: "decoder masks output".into(),
                expected: "[1, M, H, W]".into(),
                found: format!("{mask_shape:?}"),
            });
        };
        let [1, m2, lh, lw] = low_shape.as_slice() else {
            return Err(Error::Contract {
                context: "decoder low_res_masks output".into(),
                expected: "[1, M, L, L]".into(),
                found: format!("{low_shape:?}"),
            });
        };
        if m != m2 || scores.len() != *m || *m == 0 {
            return Err(Error::Contract {
                context: "decoder outputs".into(),
                expected: "matching candidate counts".into(),
                found: format!("masks {m}, low_res {m2}, scores {}", scores.len()),
            });
        }
        // Four outputs follow the single-mask-first convention.
        let picks: Vec<usize> = match (*m >= 4, multimask) {
            (true, true) => (1..*m).collect(),
            (_, false) => vec![0],
            (false, true) => (0..*m).collect(),
        };
        let work = self.working_resolution;
        picks
            .into_iter()
            .map(|i| {
                let plane = mh * mw;
                let logits = ScoreGrid::new(*mh, *mw, masks[i * plane..(i + 1) * plane].to_vec())?;
                let logits = resize_bilinear(&logits, work, work)?;
                let mask = BinaryMask::new(
                    work,
                    work,
                    logits.values().iter().map(|&v| v > 0.0).collect(),
                )?;
                let lplane = lh * lw;
                let low_grid =
                    ScoreGrid::new(*lh, *lw, low[i * lplane..(i + 1) * lplane].to_vec())?;
                Ok(Candidate {
                    mask,
                    logit: resize_bilinear(&low_grid, l, l)?,
                    score: scores[i] as f64,
                })
            })
            .collect()
    }
}

impl SegmenterBackend for GraphDecoder {
    fn name(&self) -> &str {
        "graphs"
    }

    fn working_resolution(&self) -> usize {
        self.working_resolution
    }

    fn logit_resolution(&self) -> usize {
        self.logit_resolution
    }

    fn feature_dims(&self) -> FeatureDims {
        self.feature_dims
    }

    fn encode(&self, image: &ImageInput) -> Result<FeatureGrid> {
        Err(Error::Backend {
            backend: "graphs".into(),
            stage: None,
            reason: format!("decoder-only backend cannot encode image `{}`", image.id),
        })
    }

    fn decode(
        &self,
        _image: &ImageInput,
        features: &FeatureGrid,
        prompts: &PromptSet,
        multimask: bool,
    ) -> Result<Vec<Candidate>> {
        GraphDecoder::decode(self, features, prompts, multimask)
    }
}

pub struct GraphSegmenter {
    encoder: GraphEncoder,
    decoder: GraphDecoder,
}

impl SegmenterBackend for GraphSegmenter {
    fn name(&self) -> &str {
        "graphs"
    }

    fn working_resolution(&self) -> usize {
        self.decoder.working_resolution
    }

    fn logit_resolution(&self) -> usize {
        self.decoder.logit_resolution
    }

    fn feature_dims(&self) -> FeatureDims {
        self.encoder.feature_dims
    }

    fn encode(&self, image: &ImageInput) -> Result<FeatureGrid> {
        self.encoder.encode(image)
    }

    fn decode(
        &self,
        _image: &ImageInput,
        features: &FeatureGrid,
        prompts: &PromptSet,
        multimask: bool,
    ) -> Result<Vec<Candidate>> {
        self.decoder.decode(features, prompts, multimask)
    }
}

pub struct GraphScorer {
    graph: GraphModel,
    pre: Preprocess,
    native_resolution: usize,
}

impl GraphScorer {
    pub fn load(path: &Path) -> Result<Self> {
        let graph = GraphModel::load(path)?;
        if graph.inputs.len() != 1 || graph.outputs.len() != 1 {
            return Err(graph.signature_error("scorer", &["image", "anomaly_map"]));
        }
        let pre = Preprocess::from_metadata(&graph, "scorer")?;
        let s = pre.input_size;
        let typed = graph
            .model
            .clone()
            .with_input_fact(0, f32::fact([1, 3, s, s]).into())
            .and_then(|m| m.into_typed())
            .map_err(|e| tract_err("typing scorer", format!("{e:#}")))?;
        let shape = typed
            .output_fact(0)
            .ok()
            .and_then(|f| f.shape.as_concrete().map(|s| s.to_vec()));
        let native_resolution = match shape.as_deref() {
            Some([.., h, w]) if h == w => *h,
            _ => {
                return Err(Error::Contract {
                    context: format!("scorer graph {}", path.display()),
                    expected: "square anomaly-map output [.., R, R]".into(),
                    found: format!("{shape:?}"),
                })
            }
        };
        Ok(GraphScorer {
            graph,
            pre,
            native_resolution,
        })
    }
}

impl ScorerBackend for GraphScorer {
    fn name(&self) -> &str {
        "graphs"
    }

    fn native_resolution(&self) -> usize {
        self.native_resolution
    }

    fn score(&self, image: &ImageInput) -> Result<ScoreGrid> {
        let input = self.pre.tensor(image)?;
        let (_, data) = self.graph.run(vec![input])?.remove(0);
        let r = self.native_resolution;
        if data.len() != r * r {
            return Err(Error::Contract {
                context: "scorer output".into(),
                expected: format!("{r}x{r} values"),
                found: format!("{}", data.len()),
            });
        }
        minmax_normalize(&ScoreGrid::new(r, r, data)?)
    }
}

/// Loads encoder, decoder and scorer graphs and checks they agree on shapes.
pub fn graph_backend_load(
    encoder: &Path,
    decoder: &Path,
    scorer: &Path,
) -> Result<(Arc<dyn ScorerBackend>, Arc<dyn SegmenterBackend>)> {
    let encoder = GraphEncoder::load(encoder)?;
    let mut decoder = GraphDecoder::load(decoder)?;
    let scorer = GraphScorer::load(scorer)?;
    if !decoder.graph.metadata.contains_key("input_size") {
        decoder.working_resolution = encoder.input_size();
    }
    if decoder.feature_dims != encoder.feature_dims {
        return Err(Error::Contract {
            context: "encoder/decoder pairing".into(),
            expected: format!("decoder embeddings {:?}", encoder.feature_dims),
            found: format!("{:?}", decoder.feature_dims),
        });
    }
    Ok((
        Arc::new(scorer),
        Arc::new(GraphSegmenter { encoder, decoder }),
    ))
}
