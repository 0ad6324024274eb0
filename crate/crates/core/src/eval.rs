//! Metrics, dataset assembly and the comparison / universality experiments.
//!
//! Reports are JSON. Everything in `report.json` is a deterministic function
//! of the recorded fingerprint; wall-clock timings go to `timing.json` so the
//! report itself can be compared byte for byte across reruns.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::beamform::{bmode, save_png, scan_convert, Apodization, BModeImage, DEFAULT_DYNAMIC_RANGE_DB};
use crate::completion::{complete_plane, CompletionConfig};
use crate::data::{apply_mask, apply_mask_cube, extract_plane, insert_plane_in_place, make_mask, write_atomic, RfCube, SamplingMask};
use crate::error::{Error, Result};
use crate::hankel::LiftDirection;
use crate::neural::{interpolate_cube, make_pair, observed_scale, NetworkSpec, ParameterSet, TrainConfig, TrainingPair};
use crate::phantom::{convex_scene, linear_scene, ArrayKind, Scene, SceneSize};
use crate::seeding;

pub const REPORT_SCHEMA: &str = "rfinterp-report/1";

/// A dB value that serializes `+inf` as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Db(v)),
            Raw::Text(t) if t == "inf" => Ok(Db(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid dB value {t:?}"))),
        }
    }
}

impl fmt::Display for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else {
            write!(f, "{:.2}", self.0)
        }
    }
}

/// `20 log10(peak / rmse)` with `peak = max |reference|`; identical inputs give
/// `+inf`.
pub fn psnr(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    if reference.dim() != test.dim() {
        return Err(Error::shape(format!("{:?}", reference.dim()), format!("{:?}", test.dim())));
    }
    let peak = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return Err(Error::UndefinedMetric("reference is identically zero".into()));
    }
    let mse = reference.iter().zip(test).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / reference.len() as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite("psnr test image".into()));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// Display intensity in `[0, 1]` of a log-compressed image; B-mode PSNR is
/// computed on this scale.
pub fn bmode_intensity(img: &BModeImage) -> Array2<f64> {
    let dr = img.dynamic_range_db;
    img.values.mapv(|v| ((v + dr) / dr).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SceneSplit {
    pub fn describe(&self) -> String {
        format!(
            "scenes train {:?}, validation {:?}, test {:?}",
            self.train, self.validation, self.test
        )
    }
}

/// Seeded partition of scene indices `0..num_scenes`. Split sizes are the
/// rounded fractions; the test split takes the remainder.
pub fn split_scenes(num_scenes: usize, train_frac: f64, val_frac: f64, seed: u64) -> Result<SceneSplit> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Parameter(format!(
            "fractions must be positive with sum < 1, got {train_frac} + {val_frac}"
        )));
    }
    let n_train = (train_frac * num_scenes as f64).round() as usize;
    let n_val = (val_frac * num_scenes as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= num_scenes {
        return Err(Error::Parameter(format!(
            "{num_scenes} scenes are too few for three nonempty splits"
        )));
    }
    let mut order: Vec<usize> = (0..num_scenes).collect();
    order.shuffle(&mut seeding::stream(seeding::derive(seed, "split"), 0));
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let train = sorted(&order[..n_train]);
    let validation = sorted(&order[n_train..n_train + n_val]);
    let test = sorted(&order[n_train + n_val..]);
    Ok(SceneSplit { train, validation, test })
}

/// Plane indices per split, given the source scene of every plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub scenes: SceneSplit,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits planes by source scene, so no scene straddles two splits.
pub fn split_dataset(plane_scenes: &[usize], train_frac: f64, val_frac: f64, seed: u64) -> Result<DatasetSplit> {
    let num_scenes = plane_scenes.iter().max().map_or(0, |m| m + 1);
    let scenes = split_scenes(num_scenes, train_frac, val_frac, seed)?;
    let pick = |set: &[usize]| -> Vec<usize> {
        (0..plane_scenes.len()).filter(|&i| set.contains(&plane_scenes[i])).collect()
    };
    Ok(DatasetSplit {
        train: pick(&scenes.train),
        validation: pick(&scenes.validation),
        test: pick(&scenes.test),
        scenes,
    })
}

/// Which depth planes count as test or training planes: up to `per_scene`
/// depths, evenly spaced among those whose observed entries reach
/// `min_scale_sigmas` times the scene noise level (99th percentile).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneSelection {
    pub per_scene: usize,
    pub min_scale_sigmas: f64,
}

impl Default for PlaneSelection {
    fn default() -> Self {
        Self {
            per_scene: 200,
            min_scale_sigmas: 10.0,
        }
    }
}

impl PlaneSelection {
    fn floor(&self, scene: &Scene) -> f64 {
        let sigma = scene.acquisition.noise_sigma;
        if sigma > 0.0 {
            self.min_scale_sigmas * sigma
        } else {
            f64::MIN_POSITIVE
        }
    }
}

fn evenly_spaced(candidates: &[usize], count: usize) -> Vec<usize> {
    if candidates.len() <= count {
        return candidates.to_vec();
    }
    (0..count).map(|i| candidates[i * candidates.len() / count]).collect()
}

/// Depths of a zero-filled cube selected by `sel`.
pub fn select_depths(masked: &RfCube, mask: &SamplingMask, scene: &Scene, sel: &PlaneSelection) -> Result<Vec<usize>> {
    let floor = sel.floor(scene);
    let mut candidates = Vec::new();
    for k in 0..masked.depth_samples() {
        let plane = extract_plane(masked, k)?;
        if observed_scale(&plane.values, mask.active()) >= floor {
            candidates.push(k);
        }
    }
    Ok(evenly_spaced(&candidates, sel.per_scene))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub ratio: usize,
    pub mask_seed: u64,
    pub selection: PlaneSelection,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            ratio: 4,
            mask_seed: 0,
            selection: PlaneSelection::default(),
        }
    }
}

/// Training pairs from one simulated scene. Every plane draws its own mask
/// (seeded by scene and depth) so the network sees many sampling patterns.
pub fn scene_training_pairs(scene: &Scene, cube: &RfCube, cfg: &DatasetConfig) -> Result<Vec<TrainingPair>> {
    let floor = cfg.selection.floor(scene);
    let mut candidates = Vec::new();
    for k in 0..cube.depth_samples() {
        let seed = seeding::derive(cfg.mask_seed, &format!("train/{}/{k}", scene.seed));
        let mask = make_mask(cube.num_rx(), cube.num_sc(), cfg.ratio, seed)?;
        let full = extract_plane(cube, k)?;
        let masked = apply_mask(&full, &mask)?;
        if observed_scale(&masked.values, mask.active()) >= floor {
            candidates.push((full, mask));
        }
    }
    let idx: Vec<usize> = (0..candidates.len()).collect();
    let keep = evenly_spaced(&idx, cfg.selection.per_scene);
    let mut pairs = Vec::with_capacity(keep.len());
    for i in keep {
        let (full, mask) = &candidates[i];
        if let Some(p) = make_pair(full, mask)? {
            pairs.push(p);
        }
    }
    Ok(pairs)
}

/// Simulates every scene and collects its training pairs.
pub fn build_dataset(scenes: &[Scene], cfg: &DatasetConfig) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let cube = scene.simulate().map_err(|e| e.at_stage(format!("simulate scene {i}")))?;
        pairs.extend(scene_training_pairs(scene, &cube, cfg)?);
    }
    Ok(pairs)
}

/// `count` linear or convex scenes of the given size with seeds
/// `base_seed, base_seed + 1, ...`.
pub fn make_scenes(kind: ArrayKind, count: usize, base_seed: u64, size: SceneSize) -> Vec<Scene> {
    (0..count as u64)
        .map(|i| match kind {
            ArrayKind::Linear => linear_scene(base_seed + i, size),
            ArrayKind::Convex => convex_scene(base_seed + i, size),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    ZeroFilled,
    Completion,
    Cnn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Full, Method::ZeroFilled, Method::Completion, Method::Cnn];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Full => "full",
            Method::ZeroFilled => "zero_filled",
            Method::Completion => "completion",
            Method::Cnn => "cnn",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Method::Full),
            "zero_filled" | "zero-filled" => Ok(Method::ZeroFilled),
            "completion" => Ok(Method::Completion),
            "cnn" => Ok(Method::Cnn),
            other => Err(Error::Parameter(format!(
                "unknown method {other:?} (full|zero_filled|completion|cnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    pub ratio: usize,
    pub mask_seed: u64,
    /// Independent mask draws per scene; frame `f` uses mask seed
    /// `mask_seed + f`.
    pub frames: usize,
    pub methods: Vec<Method>,
    pub completion: CompletionConfig,
    pub apodization: Apodization,
    pub dynamic_range_db: f64,
    pub selection: PlaneSelection,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            ratio: 4,
            mask_seed: 0,
            frames: 1,
            methods: vec![Method::Full, Method::ZeroFilled, Method::Cnn],
            completion: CompletionConfig {
                direction: LiftDirection::Receiver,
                ..CompletionConfig::default()
            },
            apodization: Apodization::None,
            dynamic_range_db: DEFAULT_DYNAMIC_RANGE_DB,
            selection: PlaneSelection::default(),
        }
    }
}

/// Identifies a trained model inside a report fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub conv_layers: usize,
    pub width: usize,
    pub bypasses: Vec<(usize, usize)>,
    pub input_channels: usize,
    pub train: Option<TrainConfig>,
    pub train_scene_seeds: Vec<u64>,
}

impl ModelInfo {
    pub fn of(spec: &NetworkSpec) -> Self {
        Self {
            conv_layers: spec.conv_count(),
            width: spec.width,
            bypasses: spec.bypasses.clone(),
            input_channels: spec.input_channels,
            train: None,
            train_scene_seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub scene_seeds: Vec<u64>,
    pub comparison: ComparisonConfig,
    pub model: Option<ModelInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneScore {
    pub scene: usize,
    pub frame: usize,
    pub depth: usize,
    pub psnr_db: Db,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub scene: usize,
    pub frame: usize,
    pub psnr_db: Db,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub planes: Vec<PlaneScore>,
    pub bmode: Vec<ImageScore>,
    /// Mean over all scored planes.
    pub mean_plane_psnr_db: Db,
    /// Mean over all B-mode images (frames).
    pub mean_bmode_psnr_db: Db,
    /// Mean over scenes of each scene's mean B-mode PSNR.
    pub mean_scene_bmode_psnr_db: Db,
}

impl MethodReport {
    fn build(method: Method, planes: Vec<PlaneScore>, bmode: Vec<ImageScore>) -> Self {
        let mean = |v: &[f64]| Db(if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 });
        let plane_vals: Vec<f64> = planes.iter().map(|p| p.psnr_db.0).collect();
        let image_vals: Vec<f64> = bmode.iter().map(|p| p.psnr_db.0).collect();
        let mut scenes: Vec<usize> = bmode.iter().map(|b| b.scene).collect();
        scenes.dedup();
        let scene_means: Vec<f64> = scenes
            .iter()
            .map(|&s| {
                let v: Vec<f64> = bmode.iter().filter(|b| b.scene == s).map(|b| b.psnr_db.0).collect();
                mean(&v).0
            })
            .collect();
        Self {
            method,
            mean_plane_psnr_db: mean(&plane_vals),
            mean_bmode_psnr_db: mean(&image_vals),
            mean_scene_bmode_psnr_db: mean(&scene_means),
            planes,
            bmode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: Method,
    /// Reconstruction time summed over frames (beamforming excluded).
    pub seconds: f64,
    pub planes: usize,
    pub seconds_per_plane: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Comparison,
    Universality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub kind: ExperimentKind,
    pub train_geometry: Option<ArrayKind>,
    pub test_geometry: ArrayKind,
    pub fingerprint: Fingerprint,
    pub split: Option<String>,
    pub methods: Vec<MethodReport>,
    /// Written to `timing.json`, not `report.json`.
    #[serde(skip)]
    pub timing: Vec<MethodTiming>,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn timing_of(&self, m: Method) -> Option<&MethodTiming> {
        self.timing.iter().find(|t| t.method == m)
    }

    /// Fraction of planes where `better` scores strictly above `baseline`.
    pub fn fraction_improved(&self, better: Method, baseline: Method) -> Option<f64> {
        let a = self.method(better)?;
        let b = self.method(baseline)?;
        if a.planes.is_empty() || a.planes.len() != b.planes.len() {
            return None;
        }
        let wins = a
            .planes
            .iter()
            .zip(&b.planes)
            .filter(|(p, q)| p.psnr_db.0 > q.psnr_db.0)
            .count();
        Some(wins as f64 / a.planes.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `report.json` and `timing.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("report.json"), self.to_json()?.as_bytes())?;
        let timing = serde_json::to_string_pretty(&self.timing).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&dir.join("timing.json"), timing.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Trained network handed to the experiments.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParameterSet,
    pub info: &'a ModelInfo,
}

fn complete_cube(masked: &RfCube, mask: &SamplingMask, cfg: &CompletionConfig) -> Result<RfCube> {
    let mut out = masked.clone();
    for k in 0..masked.depth_samples() {
        let plane = extract_plane(masked, k)?;
        let done = complete_plane(&plane, mask, cfg)?;
        insert_plane_in_place(&mut out, &done.plane, k)?;
    }
    Ok(out)
}

fn image_for_png(img: &BModeImage, scene: &Scene) -> Result<Array2<f64>> {
    match img.kind {
        ArrayKind::Linear => Ok(img.values.clone()),
        ArrayKind::Convex => Ok(scan_convert(img, &scene.geometry)?.values),
    }
}

fn validate_comparison(cfg: &ComparisonConfig, scenes: &[Scene], model: Option<&Model>) -> Result<()> {
    if scenes.is_empty() {
        return Err(Error::Parameter("no test scenes".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Parameter("no methods requested".into()));
    }
    if cfg.frames == 0 {
        return Err(Error::Parameter("frames must be >= 1".into()));
    }
    if cfg.methods.contains(&Method::Cnn) && model.is_none() {
        return Err(Error::Parameter("the cnn method needs a trained model".into()));
    }
    let kind = scenes[0].geometry.kind;
    if scenes.iter().any(|s| s.geometry.kind != kind) {
        return Err(Error::Parameter("test scenes mix array geometries".into()));
    }
    Ok(())
}

/// Simulate, mask, reconstruct with each method, beamform and score against
/// the full-data image. PNGs of every reconstruction go to `out_dir`.
pub fn run_comparison(
    cfg: &ComparisonConfig,
    scenes: &[Scene],
    model: Option<Model>,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    validate_comparison(cfg, scenes, model.as_ref())?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut planes: Vec<Vec<PlaneScore>> = vec![Vec::new(); cfg.methods.len()];
    let mut images: Vec<Vec<ImageScore>> = vec![Vec::new(); cfg.methods.len()];
    let mut timing: Vec<MethodTiming> = cfg
        .methods
        .iter()
        .map(|&method| MethodTiming {
            method,
            seconds: 0.0,
            planes: 0,
            seconds_per_plane: 0.0,
        })
        .collect();

    for (si, scene) in scenes.iter().enumerate() {
        let full = scene.simulate().map_err(|e| e.at_stage(format!("simulate scene {si}")))?;
        let reference = bmode(&full, &scene.geometry, cfg.apodization, cfg.dynamic_range_db)
            .map_err(|e| e.at_stage("beamform full"))?;
        let reference_intensity = bmode_intensity(&reference);
        if let Some(dir) = out_dir {
            save_png(
                &image_for_png(&reference, scene)?,
                cfg.dynamic_range_db,
                dir.join(format!("scene{si}-reference.png")),
            )?;
        }
        for frame in 0..cfg.frames {
            let mask = make_mask(full.num_rx(), full.num_sc(), cfg.ratio, cfg.mask_seed + frame as u64)
                .map_err(|e| e.at_stage("mask"))?;
            let masked = apply_mask_cube(&full, &mask).map_err(|e| e.at_stage("mask"))?;
            let depths = select_depths(&masked, &mask, scene, &cfg.selection)?;
            for (mi, &method) in cfg.methods.iter().enumerate() {
                let stage = format!("{method} (scene {si}, frame {frame})");
                let start = Instant::now();
                let recon = match method {
                    Method::Full => Ok(full.clone()),
                    Method::ZeroFilled => Ok(masked.clone()),
                    Method::Completion => complete_cube(&masked, &mask, &cfg.completion),
                    Method::Cnn => {
                        let m = model.expect("checked in validation");
                        interpolate_cube(m.spec, m.params, &masked, &mask)
                    }
                }
                .map_err(|e| e.at_stage(stage.clone()))?;
                timing[mi].seconds += start.elapsed().as_secs_f64();
                timing[mi].planes += full.depth_samples();
                for &k in &depths {
                    let truth = extract_plane(&full, k)?;
                    let got = extract_plane(&recon, k)?;
                    planes[mi].push(PlaneScore {
                        scene: si,
                        frame,
                        depth: k,
                        psnr_db: Db(psnr(&truth.values, &got.values).map_err(|e| e.at_stage(stage.clone()))?),
                    });
                }
                let img = bmode(&recon, &scene.geometry, cfg.apodization, cfg.dynamic_range_db)
                    .map_err(|e| e.at_stage(format!("beamform {stage}")))?;
                images[mi].push(ImageScore {
                    scene: si,
                    frame,
                    psnr_db: Db(psnr(&reference_intensity, &bmode_intensity(&img))?),
                });
                if let Some(dir) = out_dir {
                    save_png(
                        &image_for_png(&img, scene)?,
                        cfg.dynamic_range_db,
                        dir.join(format!("scene{si}-frame{frame}-{method}.png")),
                    )?;
                }
            }
        }
    }
    for t in &mut timing {
        t.seconds_per_plane = t.seconds / t.planes.max(1) as f64;
    }
    let methods = cfg
        .methods
        .iter()
        .zip(planes.into_iter().zip(images))
        .map(|(&m, (p, i))| MethodReport::build(m, p, i))
        .collect();
    let report = ExperimentReport {
        schema: REPORT_SCHEMA.to_string(),
        kind: ExperimentKind::Comparison,
        train_geometry: None,
        test_geometry: scenes[0].geometry.kind,
        fingerprint: Fingerprint {
            scene_seeds: scenes.iter().map(|s| s.seed).collect(),
            comparison: cfg.clone(),
            model: model.map(|m| m.info.clone()),
        },
        split: None,
        methods,
        timing,
    };
    if let Some(dir) = out_dir {
        report.save(dir)?;
    }
    Ok(report)
}

/// Evaluates a model trained on `train_geometry` planes on scenes of another
/// geometry; the report records both.
pub fn run_universality(
    cfg: &ComparisonConfig,
    scenes: &[Scene],
    model: Model,
    train_geometry: ArrayKind,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    let mut report = run_comparison(cfg, scenes, Some(model), None)?;
    report.kind = ExperimentKind::Universality;
    report.train_geometry = Some(train_geometry);
    if let Some(dir) = out_dir {
        report.save(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{Acquisition, Phantom, Scatterer, TransducerGeometry};
    use rand::Rng;
    use rand_distr::{Distribution, Uniform};

    #[test]
    fn psnr_arithmetic() {
        let mut reference = Array2::zeros((10, 10));
        reference[(0, 0)] = 1.0;
        // mse 0.01 everywhere -> 20 dB
        let test = reference.mapv(|v: f64| v + 0.1);
        assert!((psnr(&reference, &test).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&reference, &reference).unwrap(), f64::INFINITY);
        assert!(matches!(
            psnr(&Array2::zeros((2, 2)), &Array2::zeros((2, 2))),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(psnr(&reference, &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn psnr_matches_noise_variance() {
        // uniform noise on [-a, a] has variance a^2 / 3
        let a = 0.05;
        let expected = 20.0 * (1.0 / (a * a / 3.0f64).sqrt()).log10();
        for seed in 0..10 {
            let mut rng = seeding::stream(seed, 0);
            let reference = Array2::from_shape_fn((128, 128), |_| rng.gen_range(-1.0..1.0));
            let mut reference = reference;
            reference[(0, 0)] = 1.0;
            let dist = Uniform::new(-a, a);
            let test = reference.mapv(|v| v + dist.sample(&mut rng));
            let peak = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert_eq!(peak, 1.0);
            assert!((psnr(&reference, &test).unwrap() - expected).abs() < 0.2);
        }
    }

    #[test]
    fn db_serializes_infinity() {
        assert_eq!(serde_json::to_string(&Db(f64::INFINITY)).unwrap(), "\"inf\"");
        let back: Db = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(back.0, f64::INFINITY);
        let back: Db = serde_json::from_str("12.5").unwrap();
        assert_eq!(back.0, 12.5);
    }

    #[test]
    fn nine_scenes_split_seven_one_one() {
        let s = split_scenes(9, 7.0 / 9.0, 1.0 / 9.0, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 1));
        assert_eq!(s, split_scenes(9, 7.0 / 9.0, 1.0 / 9.0, 3).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
        assert!(split_scenes(2, 0.5, 0.3, 0).is_err());
    }

    #[test]
    fn planes_never_straddle_splits() {
        let plane_scenes: Vec<usize> = (0..90).map(|i| i / 10).collect();
        let split = split_dataset(&plane_scenes, 7.0 / 9.0, 1.0 / 9.0, 1).unwrap();
        assert_eq!(split.train.len() + split.validation.len() + split.test.len(), 90);
        for &i in &split.test {
            assert!(split.scenes.test.contains(&plane_scenes[i]));
        }
        for &i in &split.train {
            assert!(split.scenes.train.contains(&plane_scenes[i]));
        }
    }

    fn tiny_scene(seed: u64) -> Scene {
        let geometry = TransducerGeometry::linear(16, 0.2e-3, 8.48e6);
        Scene {
            geometry,
            phantom: Phantom::new(vec![
                Scatterer {
                    x_m: 0.0,
                    z_m: 2.5e-3,
                    amplitude: 1.0,
                },
                Scatterer {
                    x_m: 0.4e-3,
                    z_m: 3.5e-3,
                    amplitude: -0.7,
                },
            ]),
            acquisition: Acquisition {
                depth_samples: 192,
                num_rx: 8,
                num_sc: 16,
                sampling_freq_hz: 40e6,
                noise_sigma: 0.002,
            },
            seed,
        }
    }

    #[test]
    fn zero_filled_only_gives_one_series() {
        let cfg = ComparisonConfig {
            methods: vec![Method::ZeroFilled],
            ..ComparisonConfig::default()
        };
        let report = run_comparison(&cfg, &[tiny_scene(1)], None, None).unwrap();
        assert_eq!(report.methods.len(), 1);
        assert_eq!(report.methods[0].method, Method::ZeroFilled);
        assert!(!report.methods[0].planes.is_empty());
        assert_eq!(report.methods[0].bmode.len(), 1);
    }

    #[test]
    fn full_method_is_infinite() {
        let cfg = ComparisonConfig {
            methods: vec![Method::Full],
            frames: 2,
            ..ComparisonConfig::default()
        };
        let report = run_comparison(&cfg, &[tiny_scene(2)], None, None).unwrap();
        let full = report.method(Method::Full).unwrap();
        assert!(full.planes.iter().all(|p| p.psnr_db.0 == f64::INFINITY));
        assert!(full.bmode.iter().all(|p| p.psnr_db.0 == f64::INFINITY));
        assert!(report.to_json().unwrap().contains("\"inf\""));
    }

    #[test]
    fn cnn_without_model_rejected() {
        let cfg = ComparisonConfig::default();
        assert!(run_comparison(&cfg, &[tiny_scene(1)], None, None).is_err());
    }

    #[test]
    fn reports_are_reproducible() {
        let cfg = ComparisonConfig {
            methods: vec![Method::ZeroFilled, Method::Completion],
            completion: CompletionConfig {
                window: 2,
                direction: LiftDirection::Receiver,
                ..CompletionConfig::default()
            },
            ..ComparisonConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let a = run_comparison(&cfg, &[tiny_scene(3)], None, Some(&dir.path().join("a"))).unwrap();
        let b = run_comparison(&cfg, &[tiny_scene(3)], None, Some(&dir.path().join("b"))).unwrap();
        assert_eq!(a.methods, b.methods);
        let ra = std::fs::read(dir.path().join("a/report.json")).unwrap();
        let rb = std::fs::read(dir.path().join("b/report.json")).unwrap();
        assert_eq!(ra, rb);
        let loaded = ExperimentReport::load(&dir.path().join("a/report.json")).unwrap();
        assert_eq!(loaded.methods, a.methods);
        assert!(dir.path().join("a/scene0-frame0-completion.png").exists());
    }

    #[test]
    fn selection_is_evenly_spaced() {
        let c: Vec<usize> = (0..10).collect();
        assert_eq!(evenly_spaced(&c, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(evenly_spaced(&c[..3], 5), vec![0, 1, 2]);
    }
}
