//! Experiment configuration file (TOML) with `[data]`, `[model]`, `[train]`
//! and `[kd]` sections, plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbones::{BackboneConfig, DESKNET};
use crate::data::{Augmentation, ModalitySpec, SynthConfig, REFERENCE_CLASS_COUNTS, WBC_CLASS_NAMES};
use crate::error::{Error, Result};
use crate::fusion::Strategy;
use crate::losses::{Temperature, DEFAULT_TEMPERATURE};
use crate::train::{OptimizerKind, Schedule, TrainConfig};

/// Environment variable naming the artifact output root.
pub const OUTPUT_ROOT_ENV: &str = "MIMOFUSE_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Existing dataset directory; when unset the synthetic generator is used.
    pub dir: Option<PathBuf>,
    pub n_samples: usize,
    pub class_names: Vec<String>,
    /// Relative class frequencies (normalised to ratios).
    pub class_weights: Vec<f64>,
    pub n_modalities: usize,
    pub channels_per_modality: usize,
    pub image_side: usize,
    pub informativeness: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: None,
            n_samples: 1492,
            class_names: WBC_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            class_weights: REFERENCE_CLASS_COUNTS.iter().map(|&c| c as f64).collect(),
            n_modalities: 4,
            channels_per_modality: 3,
            image_side: 32,
            informativeness: vec![0.85, 0.9, 0.9, 0.95],
            noise_std: 0.15,
            seed: 0,
        }
    }
}

impl DataSection {
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let total: f64 = self.class_weights.iter().sum();
        if !(total > 0.0) || self.class_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("class_weights must be nonnegative with a positive sum".into()));
        }
        Ok(SynthConfig {
            n_samples: self.n_samples,
            class_ratios: self.class_weights.iter().map(|w| w / total).collect(),
            class_names: self.class_names.clone(),
            spec: ModalitySpec::new(self.n_modalities, self.channels_per_modality, self.image_side)?,
            informativeness: self.informativeness.clone(),
            noise_std: self.noise_std,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone: String,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            backbone: DESKNET.into(),
            widths: vec![16, 32, 64],
            depths: vec![1, 1, 1],
        }
    }
}

impl ModelSection {
    /// Backbone with `in_channels` left at one modality; trainers widen it per strategy.
    pub fn backbone_config(&self, spec: &ModalitySpec) -> BackboneConfig {
        BackboneConfig {
            name: self.backbone.clone(),
            in_channels: spec.channels_per_modality,
            input_side: spec.image_side,
            widths: self.widths.clone(),
            depths: self.depths.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub strategy: Strategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub folds: usize,
    /// Fold seed for the stratified split.
    pub fold_seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            strategy: Strategy::Mimo,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            optimizer: t.optimizer,
            schedule: t.schedule,
            seed: t.seed,
            augmentation: t.augmentation,
            folds: 5,
            fold_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdSection {
    pub temperature: f64,
    /// Late-fusion teacher checkpoints (one per modality).
    pub teachers: Vec<PathBuf>,
}

impl Default for KdSection {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            teachers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub kd: KdSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = toml::from_str(s).map_err(|e| Error::Toml(e.to_string()))?;
        apply_overrides(&mut value, overrides)?;
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth_config()?.spec.validate()?;
        if self.data.informativeness.len() != self.data.n_modalities {
            return Err(Error::Config(format!(
                "{} informativeness values for {} modalities",
                self.data.informativeness.len(),
                self.data.n_modalities
            )));
        }
        Temperature::new(self.kd.temperature)?;
        if self.train.folds < 2 {
            return Err(Error::Config("train.folds must be at least 2".into()));
        }
        self.train_config(self.train.strategy)?.validate()
    }

    /// Hyper-parameters for one strategy's run.
    pub fn train_config(&self, strategy: Strategy) -> Result<TrainConfig> {
        let spec = ModalitySpec::new(
            self.data.n_modalities,
            self.data.channels_per_modality,
            self.data.image_side,
        )?;
        Ok(TrainConfig {
            strategy,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            optimizer: self.train.optimizer,
            schedule: self.train.schedule,
            seed: self.train.seed,
            augmentation: self.train.augmentation,
            temperature: Temperature::new(self.kd.temperature)?,
            teachers: if strategy.uses_teachers() {
                self.kd.teachers.clone()
            } else {
                Vec::new()
            },
            backbone: self.model.backbone_config(&spec),
        })
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Reuse the TOML parser for numbers, booleans, arrays and quoted strings;
    // anything else is taken as a bare string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value` overrides to a parsed TOML table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("invalid override key '{key}'")));
        }
        let mut cur = &mut *table;
        for part in &parts[..parts.len() - 1] {
            cur = cur
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("'{part}' in '{key}' is not a section")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_file() {
        let cfg = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let synth = cfg.data.synth_config().unwrap();
        assert_eq!(
            crate::data::largest_remainder_counts(synth.n_samples, &synth.class_ratios).unwrap(),
            vec![962, 445, 68, 12, 5]
        );
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::from_toml_str(
            "[train]\nepochs = 3\n",
            &[
                "train.strategy=mimo_kd".into(),
                "kd.temperature=2".into(),
                "data.informativeness=[1.0,1.0,1.0,1.0]".into(),
                "train.augmentation.kind=rand_augment".into(),
                "train.augmentation.n=2".into(),
                "train.augmentation.magnitude=18".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.strategy, Strategy::MimoKd);
        assert_eq!(cfg.kd.temperature, 2.0);
        assert_eq!(cfg.data.informativeness, vec![1.0; 4]);
        assert_eq!(cfg.train.augmentation, Augmentation::RandAugment { n: 2, magnitude: 18 });
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("[kd]\ntemperature = 0.0\n", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[train]\nbogus = 1\n", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["nokey".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["data.n_modalities=1".into()]).is_err());
    }
}
