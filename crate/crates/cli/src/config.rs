//! Run configuration: one JSON document with explicit sections, overridden by flags.

use std::path::Path;

use dadsim::dataset::{Regime, RegimeConfig, SyntheticPlantConfig};
use dadsim::losses::LossConfig;
use dadsim::lstm::{self, ModelConfig};
use dadsim::trainer::{improve_defaults, ImprovementConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub state_dim: usize,
    pub control_dim: usize,
    /// Trailing whole days held out from training and improvement.
    pub test_days: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            state_dim: 3,
            control_dim: 1,
            test_days: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub history_length: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_size: lstm::defaults::hidden_size(),
            num_layers: lstm::defaults::num_layers(),
            dropout: lstm::defaults::dropout(),
            history_length: lstm::defaults::history_length(),
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, data: &DataSection) -> ModelConfig {
        ModelConfig {
            input_dim: data.state_dim + data.control_dim,
            state_dim: data.state_dim,
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
            dropout: self.dropout,
            history_length: self.history_length,
            output_length: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImproveSection {
    pub experiment: Regime,
    pub min_el: usize,
    pub max_el: usize,
    pub max_episodes: Option<usize>,
    pub epochs: usize,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub test_horizon: usize,
    pub test_episodes: usize,
    pub validation_fraction: f64,
    pub per_step_dad: bool,
}

impl Default for ImproveSection {
    fn default() -> Self {
        Self {
            experiment: Regime::E4,
            min_el: 10,
            max_el: 480,
            max_episodes: None,
            epochs: improve_defaults::epochs(),
            loss: LossConfig::dilate(1.0, 1e-2),
            learning_rate: improve_defaults::learning_rate(),
            clip_norm: improve_defaults::clip_norm(),
            test_horizon: improve_defaults::test_horizon(),
            test_episodes: improve_defaults::test_episodes(),
            validation_fraction: improve_defaults::validation_fraction(),
            per_step_dad: false,
        }
    }
}

impl ImproveSection {
    pub fn improvement_config(&self, seed: u64) -> ImprovementConfig {
        ImprovementConfig {
            regime: RegimeConfig {
                regime: self.experiment,
                min_el: self.min_el,
                max_el: self.max_el,
                seed,
                max_episodes: self.max_episodes,
            },
            epochs: self.epochs,
            loss: self.loss,
            test_horizon: self.test_horizon,
            test_episodes: self.test_episodes,
            validation_fraction: self.validation_fraction,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            seed,
            per_step_dad: self.per_step_dad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub horizon: usize,
    /// Day-aligned episodes taken from the held-out days; all of them when absent.
    pub episodes: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            horizon: 1440,
            episodes: None,
        }
    }
}

/// Everything a run needs. The top-level seed is copied into every section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub plant: SyntheticPlantConfig,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub improve: ImproveSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// Applies the seed precedence flag > config > `RF_SEED` > 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let env = match std::env::var("RF_SEED") {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::usage(format!("RF_SEED={v:?} is not an integer")))?,
            ),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(0);
        self.seed = Some(seed);
        self.plant.seed = seed;
        self.train.seed = seed;
        Ok(seed)
    }

    pub fn write_next_to(&self, out: &Path) -> Result<(), CliError> {
        let mut name = out.as_os_str().to_owned();
        name.push(".config.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        std::fs::write(&name, text + "\n").map_err(|e| {
            CliError::runtime(format!("{}: {e}", Path::new(&name).display()))
        })
    }
}
