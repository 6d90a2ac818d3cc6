//! Teacher-forced base training and iterative improvement on the model's own rollouts.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{EpochRecord, ModelCheckpoint, OptimizerMeta, Stage, TrainingMeta};
use crate::dataset::{
    build_episodes, make_window, EpisodePair, Regime, RegimeConfig, Scaler, TimeSeriesDataset,
};
use crate::error::{Error, Result};
use crate::losses::{loss_and_grad, mse_multi, mse_single, LossConfig, LossKind};
use crate::lstm::{
    adam_step, backward_into, clip_global_norm, forward, init_params, predict, Mode, ModelConfig,
    ModelParams, OptimizerState, ParamGrads,
};
use crate::matrix::Matrix;
use crate::rng;
use crate::simulator::{push_row, rollout_from, SimState};

pub use crate::dataset::{sample_horizon, HorizonDistribution};

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Training windows drawn per epoch; all of them when absent.
    pub samples_per_epoch: Option<usize>,
    /// Validation windows, evenly spaced; all of them when absent.
    pub validation_samples: Option<usize>,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            seed: 0,
            loss: LossConfig::mse(),
            samples_per_epoch: None,
            validation_samples: None,
            clip_norm: DEFAULT_CLIP_NORM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.loss.kind != LossKind::Mse {
            return bad("base training minimizes the single-step MSE");
        }
        if self.samples_per_epoch == Some(0) || self.validation_samples == Some(0) {
            return bad("sample caps must be positive");
        }
        Ok(())
    }
}

/// Row index where the validation tail begins.
pub fn split_point(len: usize, fraction: f64) -> usize {
    ((len as f64) * (1.0 - fraction)).floor() as usize
}

fn evenly_spaced(items: Vec<usize>, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < items.len() => (0..c).map(|i| items[i * items.len() / c]).collect(),
        _ => items,
    }
}

/// Mean eval-mode single-step MSE over the windows anchored at `anchors`.
pub fn single_step_mse(
    params: &ModelParams,
    cfg: &ModelConfig,
    ds: &TimeSeriesDataset,
    anchors: &[usize],
) -> Result<f64> {
    let l = cfg.history_length;
    let losses: Vec<f64> = anchors
        .par_iter()
        .map(|&t| {
            let w = make_window(ds, t, l)?;
            let p = predict(params, cfg, &w.rows)?;
            mse_single(&p, ds.state(t + 1))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains from scratch on `(window, next state)` pairs of an already scaled dataset.
/// The last `validation_fraction` of rows is held out and the best-validation
/// parameters are returned.
pub fn train_base(
    ds: &TimeSeriesDataset,
    scaler: &Scaler,
    cfg: &TrainConfig,
    mcfg: &ModelConfig,
) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    mcfg.validate()?;
    if mcfg.input_dim != ds.width() || mcfg.state_dim != ds.state_dim() {
        return Err(Error::Shape(format!(
            "model expects {} inputs / {} states, dataset has {} / {}",
            mcfg.input_dim,
            mcfg.state_dim,
            ds.width(),
            ds.state_dim()
        )));
    }
    if scaler.width() != ds.width() {
        return Err(Error::Shape("scaler width differs from dataset".into()));
    }
    let l = mcfg.history_length;
    let split = split_point(ds.len(), cfg.validation_fraction);
    if split < l + 1 || split + 1 >= ds.len() {
        return Err(Error::Config(format!(
            "{} rows cannot hold history {l} plus train and validation pairs",
            ds.len()
        )));
    }
    let train_anchors: Vec<usize> = (l - 1..split - 1).collect();
    let val_anchors = evenly_spaced((split - 1..ds.len() - 1).collect(), cfg.validation_samples);

    let mut params = init_params(mcfg, cfg.seed)?;
    let mut opt = OptimizerState::new(mcfg, cfg.learning_rate);
    let mut best_val = single_step_mse(&params, mcfg, ds, &val_anchors)?;
    let mut best = params.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let dropout_seed = rng::derive(cfg.seed, rng::streams::DROPOUT);
    let mut sample_counter: u64 = 0;

    for epoch in 1..=cfg.epochs {
        let mut order = train_anchors.clone();
        let mut r = rng::seeded(rng::derive(
            rng::derive(cfg.seed, rng::streams::SHUFFLE),
            epoch as u64,
        ));
        order.shuffle(&mut r);
        if let Some(cap) = cfg.samples_per_epoch {
            order.truncate(cap);
        }
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let base = sample_counter;
            sample_counter += batch.len() as u64;
            let per_sample: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .enumerate()
                .map(|(i, &t)| {
                    let w = make_window(ds, t, l)?;
                    let seed = rng::derive(dropout_seed, base + i as u64);
                    let (pred, cache) = forward(&params, mcfg, &w.rows, Mode::Train, seed)?;
                    let target = ds.state(t + 1);
                    let loss = mse_single(&pred, target)?;
                    let scale = 2.0 / pred.len() as f64;
                    let g: Vec<f64> = pred
                        .iter()
                        .zip(target)
                        .map(|(p, y)| scale * (p - y))
                        .collect();
                    let mut grads = ModelParams::zeros(mcfg);
                    backward_into(&params, mcfg, &cache, &g, &mut grads)?;
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;
            let mut grads = ModelParams::zeros(mcfg);
            let mut batch_loss = 0.0;
            for (loss, g) in &per_sample {
                batch_loss += loss;
                grads.add_assign(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            clip_global_norm(&mut grads, cfg.clip_norm);
            let (p, o) = adam_step(&params, &grads, &opt)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
            params = p;
            opt = o;
        }
        let val = single_step_mse(&params, mcfg, ds, &val_anchors)?;
        if !val.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let saved = val < best_val;
        if saved {
            best_val = val;
            best = params.clone();
        }
        log::info!(
            "base epoch {epoch}: train mse {:.6e}, validation mse {val:.6e}{}",
            loss_sum / order.len().max(1) as f64,
            if saved { " (saved)" } else { "" }
        );
        history.push(EpochRecord {
            epoch,
            mean_episode_loss: loss_sum / order.len().max(1) as f64,
            test_sim_loss: val,
            saved,
            skipped_episodes: 0,
        });
    }

    let mut metrics = BTreeMap::new();
    metrics.insert("best_validation_mse".to_string(), best_val);
    let mut optimizer = OptimizerMeta::adam(cfg.learning_rate);
    optimizer.clip_norm = cfg.clip_norm;
    optimizer.steps = opt.step;
    Ok(ModelCheckpoint {
        config: mcfg.clone(),
        params: best,
        scaler: scaler.clone(),
        optimizer,
        meta: TrainingMeta {
            stage: if cfg.epochs == 0 { Stage::Initial } else { Stage::Base },
            seed: cfg.seed,
            epochs: cfg.epochs,
            loss_config: cfg.loss,
            metrics,
            history,
            settings: serde_json::to_value(cfg).unwrap_or_default(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImprovementConfig {
    pub regime: RegimeConfig,
    #[serde(default = "improve_defaults::epochs")]
    pub epochs: usize,
    pub loss: LossConfig,
    #[serde(default = "improve_defaults::test_horizon")]
    pub test_horizon: usize,
    #[serde(default = "improve_defaults::test_episodes")]
    pub test_episodes: usize,
    #[serde(default = "improve_defaults::validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "improve_defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "improve_defaults::clip_norm")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// One-step training on rollout inputs, without gradients through the feedback.
    #[serde(default)]
    pub per_step_dad: bool,
}

pub mod improve_defaults {
    pub fn epochs() -> usize {
        50
    }
    pub fn test_horizon() -> usize {
        1440
    }
    pub fn test_episodes() -> usize {
        5
    }
    pub fn validation_fraction() -> f64 {
        0.1
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn clip_norm() -> f64 {
        super::DEFAULT_CLIP_NORM
    }
}

impl ImprovementConfig {
    pub fn new(regime: RegimeConfig, loss: LossConfig) -> Self {
        Self {
            regime,
            epochs: improve_defaults::epochs(),
            loss,
            test_horizon: improve_defaults::test_horizon(),
            test_episodes: improve_defaults::test_episodes(),
            validation_fraction: improve_defaults::validation_fraction(),
            learning_rate: improve_defaults::learning_rate(),
            clip_norm: improve_defaults::clip_norm(),
            seed: 0,
            per_step_dad: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regime.validate()?;
        self.loss.validate()?;
        let bad = |m: &str| Err(Error::Config(format!("improvement config: {m}")));
        if self.test_horizon == 0 || self.test_episodes == 0 {
            return bad("test_horizon and test_episodes must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        Ok(())
    }
}

/// Hooks into the improvement loop, for instrumentation and tests.
pub trait ImprovementObserver {
    /// Called with every window fed to the model during an episode rollout.
    /// `step` counts predictions already made in the episode.
    fn on_rollout_window(
        &mut self,
        _epoch: usize,
        _episode: &EpisodePair,
        _step: usize,
        _window: &Matrix,
    ) {
    }

    /// Called after an episode's rollout with the parameters that produced it.
    fn on_episode(
        &mut self,
        _epoch: usize,
        _episode: &EpisodePair,
        _params_before: &ModelParams,
        _loss: f64,
    ) {
    }
}

pub struct NoObserver;

impl ImprovementObserver for NoObserver {}

/// Held-out day-aligned episodes in the validation tail.
fn test_episodes(
    ds: &TimeSeriesDataset,
    l: usize,
    split: usize,
    icfg: &ImprovementConfig,
) -> Result<Vec<EpisodePair>> {
    let per_day = ds.steps_per_day();
    let first_day = split.div_ceil(per_day).max(1);
    let mut out = Vec::new();
    let mut day = first_day;
    while out.len() < icfg.test_episodes {
        let start = day * per_day - 1;
        if start + icfg.test_horizon >= ds.len() {
            break;
        }
        out.push(EpisodePair::build(ds, start, l, icfg.test_horizon)?);
        day += 1;
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "validation tail from row {split} holds no {}-step day-aligned episode",
            icfg.test_horizon
        )));
    }
    Ok(out)
}

/// Mean closed-loop multi-step MSE over `episodes`.
pub fn simulation_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    episodes: &[EpisodePair],
) -> Result<f64> {
    let model = crate::lstm::LstmModel {
        config: cfg.clone(),
        params: params.clone(),
    };
    let losses: Vec<f64> = episodes
        .par_iter()
        .map(|e| {
            let sim = SimState {
                window: e.input.rows.clone(),
                t: e.start_index,
                start: e.start_index,
                horizon_elapsed: 0,
            };
            match rollout_from(&model, sim, &e.controls) {
                Ok(traj) => mse_multi(&traj.states, &e.targets),
                Err(Error::Divergence { .. }) => Ok(f64::INFINITY),
                Err(err) => Err(err),
            }
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Outcome of one episode update.
enum EpisodeOutcome {
    Updated { loss: f64 },
    Diverged { step: usize },
}

struct EpisodeContext<'a> {
    cfg: &'a ModelConfig,
    icfg: &'a ImprovementConfig,
    epoch: usize,
    dropout_seed: u64,
}

/// Loss of one closed-loop episode and its parameter gradient.
#[derive(Debug, Clone)]
pub struct RolloutGradient {
    pub loss: f64,
    /// Eval-mode predictions, row `j` for step `j + 1`.
    pub predictions: Matrix,
    pub grads: ParamGrads,
}

/// Rolls the model over `episode` in eval mode, scores the trajectory with
/// `loss`, and differentiates it. With `through_feedback` the gradient flows
/// back through every prediction fed into later windows; without it each step
/// is treated as a one-step problem on its rollout input.
///
/// `on_window` sees each window before it is fed to the model. A non-finite
/// prediction returns [`Error::Divergence`] with the step.
pub fn rollout_loss_grad(
    params: &ModelParams,
    cfg: &ModelConfig,
    episode: &EpisodePair,
    loss: &LossConfig,
    through_feedback: bool,
    dropout_seed: u64,
    on_window: &mut dyn FnMut(usize, &Matrix),
) -> Result<RolloutGradient> {
    let l = cfg.history_length;
    let d_s = cfg.state_dim;
    let horizon = episode.horizon();

    // Windows are kept for the differentiated pass; row j of `preds` is fed
    // back into window j + 1.
    let mut windows = Vec::with_capacity(horizon);
    let mut preds = Matrix::zeros(horizon, d_s);
    let mut window = episode.input.rows.clone();
    for j in 0..horizon {
        on_window(j, &window);
        let p = predict(params, cfg, &window)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: j });
        }
        preds.row_mut(j).copy_from_slice(&p);
        windows.push(window.clone());
        push_row(&mut window, &p, episode.controls.row(j));
    }

    let (value, grad_pred) = loss_and_grad(&preds, &episode.targets, loss)?;
    let mut grads = ModelParams::zeros(cfg);
    let mut carried = Matrix::zeros(horizon, d_s);
    for j in (0..horizon).rev() {
        let seed = rng::derive(dropout_seed, j as u64);
        let (_, cache) = forward(params, cfg, &windows[j], Mode::Train, seed)?;
        let mut g = grad_pred.row(j).to_vec();
        for (gi, ci) in g.iter_mut().zip(carried.row(j)) {
            *gi += ci;
        }
        let dx = backward_into(params, cfg, &cache, &g, &mut grads)?;
        if through_feedback {
            // Row l-1-m of window j holds prediction j-1-m.
            for m in 0..j.min(l) {
                let src = &dx.row(l - 1 - m)[..d_s];
                let dst = carried.row_mut(j - 1 - m);
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
    }
    Ok(RolloutGradient {
        loss: value,
        predictions: preds,
        grads,
    })
}

/// One Adam step on the episode's trajectory loss.
fn improve_episode(
    ctx: &EpisodeContext<'_>,
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    episode: &EpisodePair,
    observer: &mut dyn ImprovementObserver,
) -> Result<EpisodeOutcome> {
    let loss = if ctx.icfg.per_step_dad {
        LossConfig::mse()
    } else {
        ctx.icfg.loss
    };
    let epoch = ctx.epoch;
    let out = rollout_loss_grad(
        params,
        ctx.cfg,
        episode,
        &loss,
        !ctx.icfg.per_step_dad,
        ctx.dropout_seed,
        &mut |j, w| observer.on_rollout_window(epoch, episode, j, w),
    );
    let mut out = match out {
        Ok(o) => o,
        Err(Error::Divergence { step }) => return Ok(EpisodeOutcome::Diverged { step }),
        Err(e) => return Err(e),
    };
    if !out.loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss at epoch {epoch} on episode starting at {}",
            episode.start_index
        )));
    }
    observer.on_episode(epoch, episode, params, out.loss);
    clip_global_norm(&mut out.grads, ctx.icfg.clip_norm);
    let (p, o) = adam_step(params, &out.grads, opt).map_err(|e| {
        Error::Training(format!(
            "epoch {epoch}, episode at {}: {e}",
            episode.start_index
        ))
    })?;
    *params = p;
    *opt = o;
    Ok(EpisodeOutcome::Updated { loss: out.loss })
}

/// Iterative improvement of a base checkpoint on a scaled dataset.
///
/// The first `1 - validation_fraction` of rows feed the regime's episodes; the
/// tail holds the day-aligned test simulations used to select the snapshot.
pub fn improve_dad(
    base: &ModelCheckpoint,
    ds: &TimeSeriesDataset,
    icfg: &ImprovementConfig,
) -> Result<ModelCheckpoint> {
    improve_dad_observed(base, ds, icfg, &mut NoObserver)
}

pub fn improve_dad_observed(
    base: &ModelCheckpoint,
    ds: &TimeSeriesDataset,
    icfg: &ImprovementConfig,
    observer: &mut dyn ImprovementObserver,
) -> Result<ModelCheckpoint> {
    icfg.validate()?;
    let cfg = &base.config;
    cfg.validate()?;
    if cfg.input_dim != ds.width() || cfg.state_dim != ds.state_dim() {
        return Err(Error::Shape(
            "checkpoint and dataset dimensions differ".into(),
        ));
    }
    let l = cfg.history_length;
    let split = split_point(ds.len(), icfg.validation_fraction);
    let train = ds.slice(0, split)?;
    let tests = test_episodes(ds, l, split, icfg)?;

    let mut params = base.params.clone();
    let mut opt = OptimizerState::new(cfg, icfg.learning_rate);
    opt.beta1 = base.optimizer.beta1;
    opt.beta2 = base.optimizer.beta2;
    opt.eps = base.optimizer.eps;

    let base_loss = simulation_loss(&params, cfg, &tests)?;
    let mut best_loss = base_loss;
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(icfg.epochs);
    log::info!("improvement baseline test simulation loss {base_loss:.6e}");

    for epoch in 1..=icfg.epochs {
        let mut rc = icfg.regime.clone();
        if rc.regime != Regime::E1 {
            rc.seed = rng::derive(icfg.regime.seed, epoch as u64);
        }
        let episodes = build_episodes(&train, l, &rc)?;
        let mut skipped = 0;
        let mut loss_sum = 0.0;
        for (i, episode) in episodes.iter().enumerate() {
            let ctx = EpisodeContext {
                cfg,
                icfg,
                epoch,
                dropout_seed: rng::derive(
                    rng::derive(icfg.seed, rng::streams::DROPOUT),
                    ((epoch as u64) << 32) | i as u64,
                ),
            };
            match improve_episode(&ctx, &mut params, &mut opt, episode, observer)? {
                EpisodeOutcome::Updated { loss } => loss_sum += loss,
                EpisodeOutcome::Diverged { step } => {
                    skipped += 1;
                    log::warn!(
                        "epoch {epoch}: rollout from {} diverged at step {step}; episode skipped",
                        episode.start_index
                    );
                    if 2 * skipped > episodes.len() {
                        return Err(Error::Training(format!(
                            "epoch {epoch}: {skipped} of {} episodes diverged",
                            episodes.len()
                        )));
                    }
                }
            }
        }
        let used = episodes.len() - skipped;
        let mean_loss = if used > 0 {
            loss_sum / used as f64
        } else {
            f64::NAN
        };
        let test_loss = simulation_loss(&params, cfg, &tests)?;
        let saved = test_loss < best_loss;
        if saved {
            best_loss = test_loss;
            best = params.clone();
            best_epoch = epoch;
        }
        log::info!(
            "improve epoch {epoch}: {used} episodes, mean loss {mean_loss:.6e}, test simulation loss {test_loss:.6e}{}",
            if saved { " (saved)" } else { "" }
        );
        history.push(EpochRecord {
            epoch,
            mean_episode_loss: mean_loss,
            test_sim_loss: test_loss,
            saved,
            skipped_episodes: skipped,
        });
    }

    let mut metrics = BTreeMap::new();
    metrics.insert("base_test_sim_loss".to_string(), base_loss);
    metrics.insert("best_test_sim_loss".to_string(), best_loss);
    metrics.insert("best_epoch".to_string(), best_epoch as f64);
    let mut optimizer = base.optimizer;
    optimizer.lr = icfg.learning_rate;
    optimizer.clip_norm = icfg.clip_norm;
    optimizer.steps = opt.step;
    Ok(ModelCheckpoint {
        config: cfg.clone(),
        params: best,
        scaler: base.scaler.clone(),
        optimizer,
        meta: TrainingMeta {
            stage: if icfg.epochs == 0 { base.meta.stage } else { Stage::Improved },
            seed: icfg.seed,
            epochs: icfg.epochs,
            loss_config: icfg.loss,
            metrics,
            history,
            settings: serde_json::to_value(icfg).unwrap_or_default(),
        },
    })
}
