use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::datagen::{self, LabeledDataset, SynthConfig};
use crate::error::{Error, Result};
use crate::fedsim::FLConfig;
use crate::metrics::{Norm, OutputSide, PredictiveFamily};
use crate::nn::{model_zoo, LayerSpec, ModelSpec};

/// Where an experiment's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Regenerated every trial; `config.seed` is replaced by a trial seed.
    Synthetic { config: SynthConfig },
    /// Loaded once; trials differ only in splits, model init and batching.
    Csv {
        path: PathBuf,
        label_column: String,
        property_columns: Vec<String>,
        #[serde(default)]
        feature_columns: Vec<String>,
    },
}

impl DataConfig {
    pub fn load(&self, trial_seed: u64) -> Result<LabeledDataset> {
        match self {
            DataConfig::Synthetic { config } => datagen::generate(&SynthConfig {
                seed: trial_seed,
                ..config.clone()
            }),
            DataConfig::Csv {
                path,
                label_column,
                property_columns,
                feature_columns,
            } => datagen::load_csv(path, label_column, property_columns, feature_columns),
        }
    }
}

/// A zoo preset or an explicit layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
}

impl ModelConfig {
    pub fn preset(name: &str) -> Self {
        ModelConfig {
            preset: Some(name.to_string()),
            layers: None,
        }
    }

    pub fn layers(layers: Vec<LayerSpec>) -> Self {
        ModelConfig {
            preset: None,
            layers: Some(layers),
        }
    }

    pub fn resolve(&self, input_shape: &[usize], num_classes: usize) -> Result<ModelSpec> {
        let spec = match (&self.preset, &self.layers) {
            (Some(name), None) => model_zoo(name, input_shape, num_classes)?,
            (None, Some(layers)) => ModelSpec::new(input_shape.to_vec(), layers.clone()),
            _ => {
                return Err(Error::InvalidConfig(
                    "model needs exactly one of `preset` or `layers`".into(),
                ))
            }
        };
        let shapes = spec.infer_shapes()?;
        let out = shapes.last().expect("at least the input shape");
        if out != &vec![num_classes] {
            return Err(Error::InvalidConfig(format!(
                "model output {out:?} does not match {num_classes} classes"
            )));
        }
        Ok(spec)
    }
}

fn all_norms() -> Vec<Norm> {
    Norm::ALL.to_vec()
}
fn default_sens_samples() -> usize {
    100
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Auxiliary samples fed one by one to the sensitivity estimate.
    #[serde(default = "default_sens_samples")]
    pub sensitivity_samples: usize,
    #[serde(default = "all_norms")]
    pub norms: Vec<Norm>,
    #[serde(default)]
    pub output_side: OutputSide,
    /// Estimate usable information from the attack's gradient samples.
    #[serde(default = "yes")]
    pub v_info: bool,
    #[serde(default)]
    pub clamp_zero: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            sensitivity_samples: default_sens_samples(),
            norms: all_norms(),
            output_side: OutputSide::Logits,
            v_info: true,
            clamp_zero: false,
        }
    }
}

fn default_permutations() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    /// Property against which ΔR is reported; defaults to the first one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_property: Option<String>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            permutations: default_permutations(),
            baseline_property: None,
        }
    }
}

fn one() -> usize {
    1
}

fn default_attack() -> AttackConfig {
    AttackConfig::new("")
}

/// Full description of a layer-wise leakage experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every trial seed derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub fl: FLConfig,
    /// Properties to attack, in report order.
    pub properties: Vec<String>,
    /// Attack settings shared by every property (its `property` and `seed`
    /// fields are filled in per trial).
    #[serde(default = "default_attack")]
    pub attack: AttackConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub correlation: CorrelationConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.properties.is_empty() {
            return bad("at least one property is required".into());
        }
        if let Some(b) = &self.correlation.baseline_property {
            if !self.properties.contains(b) {
                return bad(format!("baseline property `{b}` is not listed in properties"));
            }
        }
        if self.correlation.permutations < 1000 {
            return bad("correlation.permutations must be >= 1000".into());
        }
        if self.metrics.sensitivity_samples == 0 || self.metrics.norms.is_empty() {
            return bad("metrics need sensitivity_samples >= 1 and at least one norm".into());
        }
        if let DataConfig::Synthetic { config } = &self.data {
            config.validate()?;
            for p in &self.properties {
                if !config.properties.iter().any(|s| &s.name == p) {
                    return bad(format!("property `{p}` is not generated by the synthetic data"));
                }
            }
        }
        if self.model.preset.is_some() == self.model.layers.is_some() {
            return bad("model needs exactly one of `preset` or `layers`".into());
        }
        self.fl.validate()?;
        self.attack.validate()
    }

    pub fn baseline_property(&self) -> &str {
        self.correlation
            .baseline_property
            .as_deref()
            .unwrap_or(&self.properties[0])
    }

    pub fn attack_family(&self) -> &PredictiveFamily {
        &self.attack.family
    }
}
