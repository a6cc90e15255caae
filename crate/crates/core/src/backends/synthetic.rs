//! Deterministic synthetic scenes acting as both scorer and segmenter.
//!
//! A scene is a partition of the image into latent regions: background
//! (label 0), one object, optional normal parts and the anomalous regions
//! whose union is the ground truth. The decoder answers prompts with unions of
//! whole regions. With only point prompts it also attaches small noise blobs
//! registered to each selected region, which box or dense-logit prompts
//! suppress. That makes cascade refinement an exact, checkable property.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Candidate, FeatureDims, ImageInput, ScorerBackend, SegmenterBackend};
use crate::error::{Error, Result};
use crate::imgproc::{minmax_normalize, nearest_source, resize_bilinear};
use crate::io;
use crate::types::{BinaryMask, FeatureGrid, PromptSet, ScoreGrid};

pub const DEFAULT_SCENE_SIZE: usize = 256;
pub const DEFAULT_CHANNELS: usize = 8;
/// Encoder grid and logit grid are this many times smaller than the scene.
pub const FEATURE_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: i64,
    pub cy: i64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    /// Squared normalized radius of pixel `(x, y)`; `<= 1` means inside.
    fn radial_sq(&self, x: i64, y: i64) -> f64 {
        let dx = (x - self.cx) as f64 / self.rx;
        let dy = (y - self.cy) as f64 / self.ry;
        dx * dx + dy * dy
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        self.radial_sq(x, y) <= 1.0
    }
}

/// A small disk attached to the mask of `region` under sparse-only prompting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBlob {
    pub region: u32,
    pub cx: i64,
    pub cy: i64,
    pub radius: f64,
}

/// Compact, serializable description of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub size: usize,
    pub seed: u64,
    pub object: Ellipse,
    #[serde(default)]
    pub parts: Vec<Ellipse>,
    #[serde(default)]
    pub anomalies: Vec<Ellipse>,
    #[serde(default)]
    pub noise: Vec<NoiseBlob>,
    /// When set the scorer returns a constant map.
    #[serde(default)]
    pub flat_anomaly_map: bool,
}

impl SceneSpec {
    /// Label of the first anomalous region; object is 1, parts follow it.
    pub fn first_anomaly_label(&self) -> u32 {
        2 + self.parts.len() as u32
    }

    pub fn is_defective(&self) -> bool {
        !self.anomalies.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub size: usize,
    pub channels: usize,
    pub scenes: Vec<SceneSpec>,
}

/// A rasterized scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub latent_labels: Vec<u32>,
    pub region_count: usize,
    pub region_feature_vectors: Vec<Vec<f32>>,
    /// Pixel masks of each noise blob, paired with the owning region.
    pub noise_components: Vec<(u32, BinaryMask)>,
    pub anomaly_truth: BinaryMask,
    pub anomaly_map: ScoreGrid,
}

impl SyntheticScene {
    pub fn rasterize(spec: SceneSpec, channels: usize) -> Result<Self> {
        let n = spec.size;
        if n < 16 || n % FEATURE_STRIDE != 0 {
            return Err(Error::Data(format!(
                "scene `{}` size {n} must be >= 16 and divisible by {FEATURE_STRIDE}",
                spec.id
            )));
        }
        let first_anomaly = spec.first_anomaly_label();
        let mut labels = vec![0u32; n * n];
        for y in 0..n as i64 {
            for x in 0..n as i64 {
                let mut label = 0;
                if spec.object.contains(x, y) {
                    label = 1;
                }
                for (i, p) in spec.parts.iter().enumerate() {
                    if p.contains(x, y) {
                        label = 2 + i as u32;
                    }
                }
                for (i, a) in spec.anomalies.iter().enumerate() {
                    if a.contains(x, y) {
                        label = first_anomaly + i as u32;
                    }
                }
                labels[y as usize * n + x as usize] = label;
            }
        }
        let region_count = first_anomaly as usize + spec.anomalies.len();

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_f00d);
        let region_feature_vectors = (0..region_count)
            .map(|_| {
                let mut v: Vec<f32> = (0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
                // Keep every vector away from zero norm.
                v[0] += 2.0f32.copysign(v[0]);
                v
            })
            .collect();

        let noise_components = spec
            .noise
            .iter()
            .map(|b| {
                let r2 = b.radius * b.radius;
                let mask = BinaryMask::from_fn(n, n, |y, x| {
                    let dx = (x as i64 - b.cx) as f64;
                    let dy = (y as i64 - b.cy) as f64;
                    dx * dx + dy * dy <= r2
                })?;
                Ok((b.region, mask))
            })
            .collect::<Result<Vec<_>>>()?;

        let anomaly_truth =
            BinaryMask::new(n, n, labels.iter().map(|&l| l >= first_anomaly).collect())?;
        let anomaly_map = synthetic_anomaly_map(&spec)?;

        Ok(SyntheticScene {
            spec,
            latent_labels: labels,
            region_count,
            region_feature_vectors,
            noise_components,
            anomaly_truth,
            anomaly_map,
        })
    }

    pub fn size(&self) -> usize {
        self.spec.size
    }

    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.latent_labels[y * self.spec.size + x]
    }

    pub fn region_mask(&self, regions: &[u32]) -> BinaryMask {
        let n = self.size();
        BinaryMask::new(
            n,
            n,
            self.latent_labels.iter().map(|l| regions.contains(l)).collect(),
        )
        .expect("scene dims are valid")
    }

    /// Union of the noise blobs attached to `regions`, excluding pixels of those regions.
    pub fn noise_for(&self, regions: &[u32]) -> BinaryMask {
        let n = self.size();
        let mut out = BinaryMask::empty(n, n).expect("scene dims are valid");
        for (region, blob) in &self.noise_components {
            if !regions.contains(region) {
                continue;
            }
            for (i, &on) in blob.values().iter().enumerate() {
                if on && !regions.contains(&self.latent_labels[i]) {
                    out.set(i / n, i % n, true);
                }
            }
        }
        out
    }

    pub fn features(&self, channels: usize) -> Result<FeatureGrid> {
        let n = self.size();
        let f = n / FEATURE_STRIDE;
        let mut values = vec![0.0f32; channels * f * f];
        for fy in 0..f {
            let y = nearest_source(fy, n, f);
            for fx in 0..f {
                let x = nearest_source(fx, n, f);
                let v = &self.region_feature_vectors[self.label(y, x) as usize];
                for c in 0..channels {
                    values[(c * f + fy) * f + fx] = v[c];
                }
            }
        }
        FeatureGrid::new(channels, f, f, values)
    }

    /// Decoder semantics; see the module docs.
    pub fn decode(&self, prompts: &PromptSet, multimask: bool) -> Result<Vec<Candidate>> {
        let n = self.size();
        let mut positive_regions: Vec<u32> = Vec::new();
        let mut negative_regions: Vec<u32> = Vec::new();
        for p in &prompts.points {
            let (x, y) = (p.x as usize, p.y as usize);
            if x >= n || y >= n {
                return Err(Error::Data(format!(
                    "prompt ({x}, {y}) outside the {n}x{n} frame"
                )));
            }
            let l = self.label(y, x);
            let list = if p.is_positive() {
                &mut positive_regions
            } else {
                &mut negative_regions
            };
            if !list.contains(&l) {
                list.push(l);
            }
        }
        let kept: Vec<u32> = positive_regions
            .iter()
            .copied()
            .filter(|&l| l != 0 && !negative_regions.contains(&l))
            .collect();

        let dense_full = match &prompts.dense_logit {
            Some(logit) => Some(resize_bilinear(logit, n, n)?),
            None => None,
        };

        let mut sets = vec![kept.clone()];
        if multimask && kept.len() > 1 {
            sets.extend(kept.iter().map(|&l| vec![l]));
        }
        sets.iter()
            .map(|regions| self.candidate(regions, prompts, dense_full.as_ref()))
            .collect()
    }

    fn candidate(
        &self,
        regions: &[u32],
        prompts: &PromptSet,
        dense_full: Option<&ScoreGrid>,
    ) -> Result<Candidate> {
        let n = self.size();
        let mut mask = self.region_mask(regions);
        let noise = self.noise_for(regions);
        let sparse_only = prompts.bbox.is_none() && prompts.dense_logit.is_none();
        if sparse_only {
            mask = mask.or(&noise)?;
        }
        if let Some(b) = prompts.bbox {
            mask = BinaryMask::from_fn(n, n, |y, x| mask.get(y, x) && b.contains(y, x))?;
        }
        if let Some(dense) = dense_full {
            for (region, blob) in &self.noise_components {
                if !regions.contains(region) {
                    continue;
                }
                let pixels: Vec<usize> = blob
                    .values()
                    .iter()
                    .enumerate()
                    .filter(|(i, &on)| on && !regions.contains(&self.latent_labels[*i]))
                    .map(|(i, _)| i)
                    .collect();
                if pixels.is_empty() {
                    continue;
                }
                let mean = pixels.iter().map(|&i| dense.values()[i] as f64).sum::<f64>()
                    / pixels.len() as f64;
                if mean < 0.0 {
                    for i in pixels {
                        mask.set(i / n, i % n, false);
                    }
                }
            }
        }
        let total = mask.foreground_count();
        let clean = mask.and_not(&noise)?.foreground_count();
        let score = if total == 0 {
            0.0
        } else {
            clean as f64 / total as f64
        };
        let logit_res = n / FEATURE_STRIDE;
        let signed = ScoreGrid::new(
            n,
            n,
            mask.values().iter().map(|&m| if m { 1.0 } else { -1.0 }).collect(),
        )?;
        Ok(Candidate {
            logit: resize_bilinear(&signed, logit_res, logit_res)?,
            mask,
            score,
        })
    }

    /// A rendering of the scene for overlays; anomalies are visible, noise is not.
    pub fn render(&self) -> RgbImage {
        let n = self.size();
        let first_anomaly = self.spec.first_anomaly_label();
        RgbImage::from_fn(n as u32, n as u32, |x, y| {
            let l = self.label(y as usize, x as usize);
            let shade = ((x * 7 + y * 13) % 17) as u8;
            match l {
                0 => Rgb([28 + shade, 28 + shade, 32 + shade]),
                1 => Rgb([150 + shade, 150 + shade, 145 + shade]),
                l if l >= first_anomaly => Rgb([170, 80 + shade, 50]),
                _ => Rgb([95, 100 + shade, 160]),
            }
        })
    }
}

/// Anomaly map: at least 0.6 on anomalous pixels (peaking at 1 on each
/// anomaly center), at most 0.45 elsewhere, so the default 0.5 threshold
/// recovers the truth exactly after min-max normalization.
fn synthetic_anomaly_map(spec: &SceneSpec) -> Result<ScoreGrid> {
    let n = spec.size;
    if spec.flat_anomaly_map {
        return ScoreGrid::normalized(n, n, vec![0.0; n * n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xa70_3a1);
    let (fx, fy): (f64, f64) = (rng.gen_range(0.02..0.06), rng.gen_range(0.02..0.06));
    let (px, py): (f64, f64) = (rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28));
    let raw = ScoreGrid::from_fn(n, n, |y, x| {
        let texture = 0.15 * (1.0 + (fx * x as f64 + px).sin() * (fy * y as f64 + py).sin());
        let mut inside = f64::NEG_INFINITY;
        let mut outside = 0.0f64;
        for a in &spec.anomalies {
            let r2 = a.radial_sq(x as i64, y as i64);
            if r2 <= 1.0 {
                inside = inside.max(0.6 + 0.4 * (1.0 - r2));
            } else {
                outside = outside.max(0.45 * (-(r2.sqrt() - 1.0) * 3.0).exp());
            }
        }
        if inside.is_finite() {
            inside as f32
        } else {
            outside.max(texture) as f32
        }
    })?;
    minmax_normalize(&raw)
}

#[derive(Debug, Clone, Copy)]
pub struct SceneOptions {
    pub size: usize,
    pub anomalies: usize,
    /// Noise blobs registered per anomaly.
    pub noise_per_anomaly: usize,
    pub parts: usize,
    pub flat: bool,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            size: DEFAULT_SCENE_SIZE,
            anomalies: 1,
            noise_per_anomaly: 2,
            parts: 1,
            flat: false,
        }
    }
}

/// Draws a scene. Anomaly centers are kept at least `0.45 * size` apart and
/// noise blobs well clear of every anomaly.
pub fn generate_scene(id: &str, seed: u64, opts: SceneOptions) -> SceneSpec {
    let n = opts.size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (n / 2.0) as i64;
    let object = Ellipse {
        cx: c + rng.gen_range(-(n * 0.03) as i64..=(n * 0.03) as i64),
        cy: c + rng.gen_range(-(n * 0.03) as i64..=(n * 0.03) as i64),
        rx: rng.gen_range(0.36..0.44) * n,
        ry: rng.gen_range(0.36..0.44) * n,
    };
    let inside_object = |rng: &mut ChaCha8Rng, margin: f64| loop {
        let x = rng.gen_range(0..opts.size) as i64;
        let y = rng.gen_range(0..opts.size) as i64;
        let shrunk = Ellipse {
            rx: (object.rx - margin).max(1.0),
            ry: (object.ry - margin).max(1.0),
            ..object
        };
        if shrunk.contains(x, y) {
            return (x, y);
        }
    };

    let mut anomalies: Vec<Ellipse> = Vec::new();
    let mut attempts = 0;
    while anomalies.len() < opts.anomalies && attempts < 10_000 {
        attempts += 1;
        let rx = rng.gen_range(0.05..0.11) * n;
        let ry = rng.gen_range(0.05..0.11) * n;
        let (cx, cy) = inside_object(&mut rng, rx.max(ry) + 2.0);
        let far = anomalies.iter().all(|a| {
            let d = (((a.cx - cx).pow(2) + (a.cy - cy).pow(2)) as f64).sqrt();
            d >= 0.45 * n
        });
        if far {
            anomalies.push(Ellipse { cx, cy, rx, ry });
        } else if attempts % 200 == 0 {
            // An early anomaly near the center can leave no room for the rest.
            anomalies.clear();
        }
    }

    let mut parts = Vec::new();
    for _ in 0..opts.parts {
        let r = rng.gen_range(0.05..0.09) * n;
        let (cx, cy) = inside_object(&mut rng, r);
        parts.push(Ellipse { cx, cy, rx: r, ry: r });
    }

    let first_anomaly = 2 + parts.len() as u32;
    let mut noise = Vec::new();
    for (i, _) in anomalies.iter().enumerate() {
        let mut placed = 0;
        let mut tries = 0;
        while placed < opts.noise_per_anomaly && tries < 10_000 {
            tries += 1;
            let radius = rng.gen_range(2.0..4.5);
            let cx = rng.gen_range(8..opts.size as i64 - 8);
            let cy = rng.gen_range(8..opts.size as i64 - 8);
            let clear = anomalies.iter().all(|a| {
                let reach = Ellipse {
                    rx: a.rx + radius + 0.2 * n,
                    ry: a.ry + radius + 0.2 * n,
                    ..*a
                };
                !reach.contains(cx, cy)
            });
            if clear {
                noise.push(NoiseBlob {
                    region: first_anomaly + i as u32,
                    cx,
                    cy,
                    radius,
                });
                placed += 1;
            }
        }
    }

    SceneSpec {
        id: id.to_string(),
        size: opts.size,
        seed,
        object,
        parts,
        anomalies,
        noise,
        flat_anomaly_map: opts.flat,
    }
}

/// The bundled twelve-scene suite in MVTec layout terms: two categories, each
/// with single and double anomalies plus defect-free images.
pub fn bundled_suite(seed: u64) -> Vec<SceneSpec> {
    let mut specs = Vec::new();
    for (ci, category) in ["disc", "plate"].iter().enumerate() {
        let plan: [(&str, SceneOptions); 6] = [
            ("blob", SceneOptions::default()),
            ("blob", SceneOptions::default()),
            ("blob", SceneOptions { noise_per_anomaly: 1, parts: 2, ..Default::default() }),
            ("pair", SceneOptions { anomalies: 2, ..Default::default() }),
            ("good", SceneOptions { anomalies: 0, ..Default::default() }),
            ("good", SceneOptions { anomalies: 0, flat: ci == 0, ..Default::default() }),
        ];
        let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, (defect, opts)) in plan.into_iter().enumerate() {
            let k = counters.entry(defect).or_default();
            let id = format!("{category}/{defect}/{k:03}");
            *k += 1;
            specs.push(generate_scene(&id, seed.wrapping_add((ci * 100 + i) as u64), opts));
        }
    }
    specs
}

/// Single-anomaly scenes that all carry noise blobs.
pub fn noise_suite(count: usize, seed: u64, size: usize) -> Vec<SceneSpec> {
    (0..count)
        .map(|i| {
            generate_scene(
                &format!("noise/blob/{i:03}"),
                seed.wrapping_add(i as u64),
                SceneOptions {
                    size,
                    noise_per_anomaly: 1 + i % 3,
                    ..Default::default()
                },
            )
        })
        .collect()
}

/// Writes scenes as an MVTec-style dataset plus `scenes.json`.
///
/// Scene ids must look like `<category>/<defect>/<name>`.
pub fn write_dataset(root: &Path, specs: &[SceneSpec], channels: usize) -> Result<()> {
    let size = specs.first().map(|s| s.size).unwrap_or(DEFAULT_SCENE_SIZE);
    for spec in specs {
        let parts: Vec<&str> = spec.id.split('/').collect();
        let [category, defect, name] = parts.as_slice() else {
            return Err(Error::Data(format!(
                "scene id `{}` is not <category>/<defect>/<name>",
                spec.id
            )));
        };
        let scene = SyntheticScene::rasterize(spec.clone(), channels)?;
        let image_path = root.join(category).join("test").join(defect).join(format!("{name}.png"));
        io::write_rgb_png(&image_path, &scene.render())?;
        if *defect != "good" {
            let gt = root
                .join(category)
                .join("ground_truth")
                .join(defect)
                .join(format!("{name}_mask.png"));
            io::write_mask_png(&gt, &scene.anomaly_truth)?;
        }
    }
    let file = SceneFile {
        size,
        channels,
        scenes: specs.to_vec(),
    };
    io::write_json(&root.join("scenes.json"), &file)
}

pub struct SyntheticBackend {
    scenes: BTreeMap<String, SyntheticScene>,
    size: usize,
    channels: usize,
}

impl SyntheticBackend {
    pub fn new(specs: Vec<SceneSpec>, channels: usize) -> Result<Self> {
        let size = specs.first().map(|s| s.size).unwrap_or(DEFAULT_SCENE_SIZE);
        let mut scenes = BTreeMap::new();
        for spec in specs {
            if spec.size != size {
                return Err(Error::Data(format!(
                    "scene `{}` is {}px but the backend works at {size}px",
                    spec.id, spec.size
                )));
            }
            let id = spec.id.clone();
            scenes.insert(id, SyntheticScene::rasterize(spec, channels)?);
        }
        Ok(SyntheticBackend {
            scenes,
            size,
            channels,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SceneFile = serde_json::from_str(&text)?;
        SyntheticBackend::new(file.scenes, file.channels)
    }

    pub fn scene(&self, id: &str) -> Result<&SyntheticScene> {
        self.scenes.get(id).ok_or_else(|| Error::Backend {
            backend: "synthetic".into(),
            stage: None,
            reason: format!("no scene registered for image `{id}`"),
        })
    }

    pub fn scene_ids(&self) -> impl Iterator<Item = &str> {
        self.scenes.keys().map(String::as_str)
    }
}

impl ScorerBackend for SyntheticBackend {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn native_resolution(&self) -> usize {
        self.size
    }

    fn score(&self, image: &ImageInput) -> Result<ScoreGrid> {
        Ok(self.scene(&image.id)?.anomaly_map.clone())
    }
}

impl SegmenterBackend for SyntheticBackend {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn working_resolution(&self) -> usize {
        self.size
    }

    fn logit_resolution(&self) -> usize {
        self.size / FEATURE_STRIDE
    }

    fn feature_dims(&self) -> FeatureDims {
        let f = self.size / FEATURE_STRIDE;
        (self.channels, f, f)
    }

    fn encode(&self, image: &ImageInput) -> Result<FeatureGrid> {
        self.scene(&image.id)?.features(self.channels)
    }

    fn decode(
        &self,
        image: &ImageInput,
        _features: &FeatureGrid,
        prompts: &PromptSet,
        multimask: bool,
    ) -> Result<Vec<Candidate>> {
        if !prompts.has_positive() {
            return Err(Error::Data("decode needs at least one positive point".into()));
        }
        self.scene(&image.id)?.decode(prompts, multimask)
    }
}
