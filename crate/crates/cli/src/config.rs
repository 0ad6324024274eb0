use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rfinterp::beamform::{Apodization, DEFAULT_DYNAMIC_RANGE_DB};
use rfinterp::completion::CompletionConfig;
use rfinterp::eval::{ComparisonConfig, DatasetConfig, Method, PlaneSelection};
use rfinterp::hankel::LiftDirection;
use rfinterp::neural::{build_network, NetworkSpec, Preset, TrainConfig};
use rfinterp::phantom::{convex_scene, linear_scene, ArrayKind, Scene, SceneSize};

use crate::CliError;

/// Fully resolved settings for one run. Loaded from TOML, then overridden by
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Source of every random choice in the run.
    pub seed: u64,
    /// Worker thread cap; 0 leaves the default.
    pub threads: usize,
    pub paths: Paths,
    pub scene: SceneConfig,
    pub mask: MaskConfig,
    pub completion: CompletionConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub dataset: PlaneSelection,
    pub beamform: BeamformConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            paths: Paths::default(),
            scene: SceneConfig::default(),
            mask: MaskConfig::default(),
            completion: CompletionConfig {
                direction: LiftDirection::Receiver,
                ..CompletionConfig::default()
            },
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            dataset: PlaneSelection::default(),
            beamform: BeamformConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizePreset {
    Toy,
    Full,
}

impl SizePreset {
    pub fn size(self) -> SceneSize {
        match self {
            SizePreset::Toy => SceneSize::TOY,
            SizePreset::Full => SceneSize::FULL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub geometry: ArrayKind,
    pub size: SizePreset,
    /// Scenes in the synthetic training/evaluation set.
    pub count: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            geometry: ArrayKind::Linear,
            size: SizePreset::Toy,
            count: 9,
            train_frac: 7.0 / 9.0,
            val_frac: 1.0 / 9.0,
        }
    }
}

impl SceneConfig {
    pub fn scene(&self, kind: ArrayKind, seed: u64) -> Scene {
        match kind {
            ArrayKind::Linear => linear_scene(seed, self.size.size()),
            ArrayKind::Convex => convex_scene(seed, self.size.size()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub ratio: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { ratio: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub preset: Preset,
    /// Defaults to the preset width.
    pub width: Option<usize>,
    /// Must match the preset when given; presets are closed.
    pub conv_layers: Option<usize>,
    pub bypasses: Option<Vec<(usize, usize)>>,
    pub input_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Toy,
            width: None,
            conv_layers: None,
            bypasses: None,
            input_channels: 1,
        }
    }
}

impl NetworkConfig {
    pub fn check(&self) -> Result<(), CliError> {
        if let Some(n) = self.conv_layers {
            let expected = self.preset.conv_layers();
            if n != expected {
                return Err(CliError::Usage(format!(
                    "--conv-layers {n} conflicts with preset {} ({expected} conv layers); presets are closed",
                    self.preset
                )));
            }
        }
        if !(1..=2).contains(&self.input_channels) {
            return Err(CliError::Usage("network.input_channels must be 1 or 2".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<NetworkSpec, CliError> {
        self.check()?;
        let width = self.width.unwrap_or(self.preset.default_width());
        let bypasses = self.bypasses.clone().unwrap_or(self.preset.default_bypasses());
        build_network(width, self.preset, bypasses, self.input_channels).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamformConfig {
    pub apodization: Apodization,
    pub dynamic_range_db: f64,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self {
            apodization: Apodization::None,
            dynamic_range_db: DEFAULT_DYNAMIC_RANGE_DB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub methods: Vec<Method>,
    pub frames: usize,
    /// Scenes generated for the `universality` command.
    pub universality_scenes: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Full, Method::ZeroFilled, Method::Cnn],
            frames: 1,
            universality_scenes: 2,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            ratio: self.mask.ratio,
            mask_seed: self.seed,
            selection: self.dataset,
        }
    }

    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig {
            ratio: self.mask.ratio,
            mask_seed: self.seed,
            frames: self.report.frames,
            methods: self.report.methods.clone(),
            completion: self.completion.clone(),
            apodization: self.beamform.apodization,
            dynamic_range_db: self.beamform.dynamic_range_db,
            selection: self.dataset,
        }
    }

    /// Training config with the run seed folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// The config with paths and the thread cap cleared: what a fingerprint
    /// covers.
    pub fn semantic(&self) -> Self {
        Self {
            paths: Paths::default(),
            threads: 0,
            ..self.clone()
        }
    }
}
