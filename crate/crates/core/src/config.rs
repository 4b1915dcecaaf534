//! Run configuration: one structured TOML file drives every stage.
//! A persisted config re-runs to identical outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::VfError;
use crate::neural::{KlForm, TrainConfig, Variant};
use crate::noise::NoiseModel;
use crate::progression::MethodThresholds;
use crate::sim::{Scenario, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub simulate: SimSection,
    pub train: TrainSection,
    pub analyze: MethodThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            simulate: SimSection::default(),
            train: TrainSection::default(),
            analyze: MethodThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub eyes: usize,
    pub exams: usize,
    pub duration: f64,
    pub baseline_age: f64,
    pub age_slope: f64,
    pub pinned_rates: bool,
    pub noise: NoiseModel,
    pub scenarios: Vec<String>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            eyes: 376,
            exams: 20,
            duration: 9.5,
            baseline_age: 60.0,
            age_slope: -0.1,
            pinned_rates: false,
            noise: NoiseModel::default(),
            scenarios: Scenario::ALL.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub max_epochs: usize,
    pub mask_count: usize,
    pub kl_weight: f64,
    pub kl_form: String,
    pub split: [f64; 3],
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 32,
            learning_rate: 1e-4,
            lr_factor: 0.1,
            lr_patience: 5,
            max_epochs: 200,
            mask_count: 10,
            kl_weight: 1.0,
            kl_form: "as_printed".into(),
            split: [0.70, 0.15, 0.15],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, VfError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| VfError::Io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| VfError::Config(format!("bad config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<(), VfError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| VfError::Config(format!("cannot serialize config: {e}")))?;
        std::fs::write(path, text).map_err(|e| VfError::Io(path.display().to_string(), e))
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>, VfError> {
        self.simulate
            .scenarios
            .iter()
            .map(|s| {
                Scenario::parse(s)
                    .ok_or_else(|| VfError::Config(format!("unknown scenario: {s}")))
            })
            .collect()
    }

    pub fn scenario_spec(&self, kind: Scenario) -> ScenarioSpec {
        ScenarioSpec {
            kind,
            n_eyes: self.simulate.eyes,
            n_exams: self.simulate.exams,
            duration: self.simulate.duration,
            baseline_age: self.simulate.baseline_age,
            age_slope: self.simulate.age_slope,
            noise: self.simulate.noise.clone(),
            pinned_rates: self.simulate.pinned_rates,
        }
    }

    /// Training uses the run seed directly, so every variant starts from
    /// the same stream.
    pub fn train_config(&self) -> Result<TrainConfig, VfError> {
        let kl_form = KlForm::parse(&self.train.kl_form)
            .ok_or_else(|| VfError::Config(format!("unknown kl_form: {}", self.train.kl_form)))?;
        let config = TrainConfig {
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            lr_factor: self.train.lr_factor,
            lr_patience: self.train.lr_patience,
            max_epochs: self.train.max_epochs,
            seed: self.seed,
            split: self.train.split,
            mask_count: self.train.mask_count,
            kl_weight: self.train.kl_weight,
            kl_form,
        };
        config.validate()?;
        Ok(config)
    }
}

/// The five analysis pipelines: raw data or one of the four denoisers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PipelineTag {
    Raw,
    Mae,
    MaeP,
    Vae,
    VaeP,
}

impl PipelineTag {
    /// Report row order mirroring the result tables.
    pub const ALL: [PipelineTag; 5] = [
        PipelineTag::Raw,
        PipelineTag::MaeP,
        PipelineTag::Mae,
        PipelineTag::VaeP,
        PipelineTag::Vae,
    ];

    pub fn variant(self) -> Option<Variant> {
        match self {
            PipelineTag::Raw => None,
            PipelineTag::Mae => Some(Variant::Mae),
            PipelineTag::MaeP => Some(Variant::MaeP),
            PipelineTag::Vae => Some(Variant::Vae),
            PipelineTag::VaeP => Some(Variant::VaeP),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            PipelineTag::Raw => "raw",
            PipelineTag::Mae => "mae",
            PipelineTag::MaeP => "mae+p",
            PipelineTag::Vae => "vae",
            PipelineTag::VaeP => "vae+p",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            PipelineTag::Raw => "Raw",
            PipelineTag::Mae => "MAE",
            PipelineTag::MaeP => "MAE w/p",
            PipelineTag::Vae => "VAE",
            PipelineTag::VaeP => "VAE w/p",
        }
    }

    pub fn parse(s: &str) -> Option<PipelineTag> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Some(PipelineTag::Raw),
            "mae" => Some(PipelineTag::Mae),
            "mae+p" | "mae_p" | "maep" => Some(PipelineTag::MaeP),
            "vae" => Some(PipelineTag::Vae),
            "vae+p" | "vae_p" | "vaep" => Some(PipelineTag::VaeP),
            _ => None,
        }
    }
}

impl std::fmt::Display for PipelineTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}
