//! Versioned JSON checkpoints. Floats are written in shortest round-trip form
//! and parsed with correct rounding, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Scaler;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::lstm::{LayerParams, LstmModel, ModelConfig, ModelParams};
use crate::matrix::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerMeta {
    pub name: OptimizerName,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
}

impl OptimizerMeta {
    pub fn adam(lr: f64) -> Self {
        Self {
            name: OptimizerName::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Base,
    Improved,
}

/// One epoch of training or improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_episode_loss: f64,
    pub test_sim_loss: f64,
    pub saved: bool,
    pub skipped_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub stage: Stage,
    pub seed: u64,
    pub epochs: usize,
    pub loss_config: LossConfig,
    pub metrics: BTreeMap<String, f64>,
    pub history: Vec<EpochRecord>,
    /// Free-form resolved settings of the run that produced the checkpoint.
    pub settings: serde_json::Value,
}

impl TrainingMeta {
    pub fn initial(seed: u64) -> Self {
        Self {
            stage: Stage::Initial,
            seed,
            epochs: 0,
            loss_config: LossConfig::mse(),
            metrics: BTreeMap::new(),
            history: Vec::new(),
            settings: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub scaler: Scaler,
    pub optimizer: OptimizerMeta,
    pub meta: TrainingMeta,
}

impl ModelCheckpoint {
    pub fn model(&self) -> LstmModel {
        LstmModel {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile::from(self);
        serde_json::to_string_pretty(&file)
            .map_err(|e| Error::checkpoint("<root>", e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::checkpoint("<file>", format!("malformed or truncated: {e}")))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::checkpoint(
                    "format_version",
                    format!("unsupported version {v}, expected {FORMAT_VERSION}"),
                ))
            }
            None => return Err(Error::checkpoint("format_version", "missing")),
        }
        let file: CheckpointFile = serde_json::from_value(raw)
            .map_err(|e| Error::checkpoint("<schema>", e.to_string()))?;
        file.into_checkpoint()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerShape {
    input_dim: usize,
    hidden_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    shape: LayerShape,
    w_input: Vec<f64>,
    w_recurrent: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadShape {
    state_dim: usize,
    hidden_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadFile {
    shape: HeadShape,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    model_config: ModelConfig,
    optimizer_meta: OptimizerMeta,
    scaler: Scaler,
    layers: Vec<LayerFile>,
    head: HeadFile,
    training_meta: TrainingMeta,
}

impl From<&ModelCheckpoint> for CheckpointFile {
    fn from(c: &ModelCheckpoint) -> Self {
        let h = c.config.hidden_size;
        let layers = c
            .params
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| LayerFile {
                shape: LayerShape {
                    input_dim: c.config.layer_input_dim(k),
                    hidden_size: h,
                },
                w_input: l.w_input.as_slice().to_vec(),
                w_recurrent: l.w_recurrent.as_slice().to_vec(),
                bias: l.bias.clone(),
            })
            .collect();
        CheckpointFile {
            format_version: FORMAT_VERSION,
            model_config: c.config.clone(),
            optimizer_meta: c.optimizer,
            scaler: c.scaler.clone(),
            layers,
            head: HeadFile {
                shape: HeadShape {
                    state_dim: c.config.state_dim,
                    hidden_size: h,
                },
                w: c.params.head_w.as_slice().to_vec(),
                b: c.params.head_b.clone(),
            },
            training_meta: c.meta.clone(),
        }
    }
}

fn expect_len(field: String, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::checkpoint(
            field,
            format!("holds {} values, expected {len}", v.len()),
        ));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::checkpoint(field, format!("entry {i} is not finite")));
    }
    Ok(())
}

fn expect_eq(field: String, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::checkpoint(
            field,
            format!("is {found}, model_config implies {expected}"),
        ));
    }
    Ok(())
}

impl CheckpointFile {
    fn into_checkpoint(self) -> Result<ModelCheckpoint> {
        let cfg = self.model_config;
        cfg.validate()
            .map_err(|e| Error::checkpoint("model_config", e.to_string()))?;
        let h = cfg.hidden_size;
        expect_eq("layers".into(), self.layers.len(), cfg.num_layers)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, lf) in self.layers.into_iter().enumerate() {
            let in_dim = cfg.layer_input_dim(k);
            expect_eq(format!("layers[{k}].shape.input_dim"), lf.shape.input_dim, in_dim)?;
            expect_eq(format!("layers[{k}].shape.hidden_size"), lf.shape.hidden_size, h)?;
            expect_len(format!("layers[{k}].w_input"), &lf.w_input, 4 * h * in_dim)?;
            expect_len(format!("layers[{k}].w_recurrent"), &lf.w_recurrent, 4 * h * h)?;
            expect_len(format!("layers[{k}].bias"), &lf.bias, 4 * h)?;
            layers.push(LayerParams {
                w_input: Matrix::from_vec(4 * h, in_dim, lf.w_input)?,
                w_recurrent: Matrix::from_vec(4 * h, h, lf.w_recurrent)?,
                bias: lf.bias,
            });
        }
        let head = self.head;
        expect_eq("head.shape.state_dim".into(), head.shape.state_dim, cfg.state_dim)?;
        expect_eq("head.shape.hidden_size".into(), head.shape.hidden_size, h)?;
        expect_len("head.w".into(), &head.w, cfg.state_dim * h)?;
        expect_len("head.b".into(), &head.b, cfg.state_dim)?;
        let scaler = self.scaler;
        expect_eq("scaler.mins".into(), scaler.mins.len(), cfg.input_dim)?;
        expect_eq("scaler.maxs".into(), scaler.maxs.len(), cfg.input_dim)?;
        scaler
            .validate()
            .map_err(|e| Error::checkpoint("scaler", e.to_string()))?;
        Ok(ModelCheckpoint {
            params: ModelParams {
                layers,
                head_w: Matrix::from_vec(cfg.state_dim, h, head.w)?,
                head_b: head.b,
            },
            config: cfg,
            scaler,
            optimizer: self.optimizer_meta,
            meta: self.training_meta,
        })
    }
}
