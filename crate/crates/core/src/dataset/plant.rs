//! Synthetic wastewater-like plant with one chemical dosing control.
//!
//! States, one row per minute:
//! - `phosphate`: `s1' = s1 + dt * (q_in * c_in - k_r * u * s1 / (k_m + s1) - k_out * s1) + noise`,
//!   floored at zero,
//! - `inflow`: `q0 * (1 + amplitude * sin(2 pi t / 1440)) + noise` (diurnal),
//! - `aux_load` and any further states: first-order lags of the previous state with time constant `aux_tau`.
//!
//! `u` is the mean of the control columns. Row `t` holds the states at `t` and the control applied at `t`.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{TimeSeriesDataset, MINUTES_PER_DAY};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::simulator::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ControlSchedule {
    /// Dosing levels drawn uniformly from `[min_level, max_level]`, each held
    /// for a uniformly drawn `[min_block, max_block]` minutes.
    RandomBlocks {
        min_level: f64,
        max_level: f64,
        min_block: usize,
        max_block: usize,
    },
    Constant { level: f64 },
}

impl Default for ControlSchedule {
    fn default() -> Self {
        ControlSchedule::RandomBlocks {
            min_level: 0.0,
            max_level: 1.0,
            min_block: 30,
            max_block: 240,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticPlantConfig {
    pub days: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub dt: f64,
    pub q0: f64,
    pub diurnal_amplitude: f64,
    pub c_in: f64,
    pub k_r: f64,
    pub k_m: f64,
    pub k_out: f64,
    pub aux_tau: f64,
    pub initial_phosphate: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub control: ControlSchedule,
}

impl Default for SyntheticPlantConfig {
    fn default() -> Self {
        Self {
            days: 60,
            state_dim: 3,
            control_dim: 1,
            dt: 1.0,
            q0: 1.0,
            diurnal_amplitude: 0.4,
            c_in: 0.05,
            k_r: 0.08,
            k_m: 0.5,
            k_out: 0.01,
            aux_tau: 60.0,
            initial_phosphate: 2.0,
            noise_std: 0.01,
            seed: 0,
            control: ControlSchedule::default(),
        }
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("plant parameter out of range: {what}")))
    }
}

impl SyntheticPlantConfig {
    /// Documented parameter ranges. Inside them the series is bounded and finite.
    pub fn validate(&self) -> Result<()> {
        check((1..=3660).contains(&self.days), "1 <= days <= 3660")?;
        check(self.state_dim >= 2, "state_dim >= 2")?;
        check((1..=8).contains(&self.control_dim), "1 <= control_dim <= 8")?;
        check(self.dt > 0.0 && self.dt <= 1.0, "0 < dt <= 1")?;
        check(self.q0 > 0.0 && self.q0 <= 100.0, "0 < q0 <= 100")?;
        check(
            (0.0..=1.0).contains(&self.diurnal_amplitude),
            "0 <= diurnal_amplitude <= 1",
        )?;
        check((0.0..=10.0).contains(&self.c_in), "0 <= c_in <= 10")?;
        check((0.0..=10.0).contains(&self.k_r), "0 <= k_r <= 10")?;
        check(self.k_m > 0.0 && self.k_m <= 100.0, "0 < k_m <= 100")?;
        check(
            self.k_out > 0.0 && self.k_out * self.dt <= 1.0,
            "k_out > 0 and k_out * dt <= 1",
        )?;
        check(
            self.aux_tau >= self.dt && self.aux_tau <= 1e4,
            "dt <= aux_tau <= 1e4",
        )?;
        check(
            (0.0..=1e3).contains(&self.initial_phosphate),
            "0 <= initial_phosphate <= 1000",
        )?;
        check((0.0..=10.0).contains(&self.noise_std), "0 <= noise_std <= 10")?;
        match self.control {
            ControlSchedule::RandomBlocks {
                min_level,
                max_level,
                min_block,
                max_block,
            } => {
                check(
                    min_level >= 0.0 && min_level <= max_level && max_level <= 100.0,
                    "0 <= min_level <= max_level <= 100",
                )?;
                check(
                    min_block >= 1 && min_block <= max_block,
                    "1 <= min_block <= max_block",
                )?;
            }
            ControlSchedule::Constant { level } => {
                check((0.0..=100.0).contains(&level), "0 <= level <= 100")?;
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.days * MINUTES_PER_DAY
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["phosphate".to_string(), "inflow".to_string()];
        names.extend((2..self.state_dim).map(|k| {
            if k == 2 {
                "aux_load".to_string()
            } else {
                format!("aux_load{}", k - 1)
            }
        }));
        names.extend((0..self.control_dim).map(|k| {
            if self.control_dim == 1 {
                "dosing".to_string()
            } else {
                format!("dosing{}", k + 1)
            }
        }));
        names
    }

    fn inflow_mean(&self, t: usize) -> f64 {
        let phase = 2.0 * PI * t as f64 / MINUTES_PER_DAY as f64;
        self.q0 * (1.0 + self.diurnal_amplitude * phase.sin())
    }

    /// Noise for every state at every step, from its own stream so that the
    /// control schedule does not perturb it.
    fn noise(&self) -> Result<Matrix> {
        let rows = self.rows();
        let mut m = Matrix::zeros(rows, self.state_dim);
        if self.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.noise_std)
                .map_err(|e| Error::Config(format!("noise_std: {e}")))?;
            let mut r = rng::seeded(rng::derive(self.seed, rng::streams::PLANT_NOISE));
            for v in m.as_mut_slice() {
                *v = normal.sample(&mut r);
            }
        }
        Ok(m)
    }

    fn controls(&self) -> Matrix {
        let rows = self.rows();
        let mut m = Matrix::zeros(rows, self.control_dim);
        match self.control {
            ControlSchedule::Constant { level } => m.as_mut_slice().fill(level),
            ControlSchedule::RandomBlocks {
                min_level,
                max_level,
                min_block,
                max_block,
            } => {
                let mut r = rng::seeded(rng::derive(self.seed, rng::streams::PLANT_CONTROL));
                for c in 0..self.control_dim {
                    let mut t = 0;
                    while t < rows {
                        let block = r.random_range(min_block..=max_block);
                        let level = if max_level > min_level {
                            r.random_range(min_level..=max_level)
                        } else {
                            min_level
                        };
                        for s in t..(t + block).min(rows) {
                            m.set(s, c, level);
                        }
                        t += block;
                    }
                }
            }
        }
        m
    }

    /// States at `t + 1` from the row at `t`.
    fn transition(&self, row: &[f64], t: usize, noise: &Matrix, out: &mut [f64]) {
        let d_s = self.state_dim;
        let controls = &row[d_s..];
        let dose = controls.iter().sum::<f64>() / controls.len() as f64;
        let s1 = row[0];
        let inflow = row[1];
        let uptake = self.k_r * dose * s1 / (self.k_m + s1);
        let next_s1 =
            s1 + self.dt * (inflow * self.c_in - uptake - self.k_out * s1) + noise.get(t, 0);
        out[0] = next_s1.max(0.0);
        if t + 1 < noise.rows() {
            out[1] = self.inflow_mean(t + 1) + noise.get(t + 1, 1);
        } else {
            out[1] = self.inflow_mean(t + 1);
        }
        for k in 2..d_s {
            out[k] = row[k] + self.dt * (row[k - 1] - row[k]) / self.aux_tau + noise.get(t, k);
        }
    }
}

/// Generates `days * 1440` rows. Deterministic in `cfg.seed`.
pub fn gen_synthetic(cfg: &SyntheticPlantConfig) -> Result<TimeSeriesDataset> {
    cfg.validate()?;
    let d_s = cfg.state_dim;
    let n = d_s + cfg.control_dim;
    let rows = cfg.rows();
    let noise = cfg.noise()?;
    let controls = cfg.controls();
    let mut values = Matrix::zeros(rows, n);

    let mut state = vec![0.0; d_s];
    state[0] = cfg.initial_phosphate;
    state[1] = cfg.inflow_mean(0) + noise.get(0, 1);
    for s in state.iter_mut().skip(2) {
        *s = cfg.q0;
    }
    let mut next = vec![0.0; d_s];
    for t in 0..rows {
        let row = values.row_mut(t);
        row[..d_s].copy_from_slice(&state);
        row[d_s..].copy_from_slice(controls.row(t));
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "plant state {j} at step {t}; reject this configuration"
            )));
        }
        if t + 1 < rows {
            cfg.transition(values.row(t), t, &noise, &mut next);
            std::mem::swap(&mut state, &mut next);
        }
    }
    TimeSeriesDataset::with_names(values, d_s, cfg.control_dim, cfg.column_names())
}

/// The exact plant transition exposed as a one-step predictor over raw
/// (unscaled) windows. It replays the generator's noise, so a rollout under
/// recorded controls reproduces the generated series exactly.
#[derive(Debug, Clone)]
pub struct PlantTransition {
    cfg: SyntheticPlantConfig,
    noise: Matrix,
}

impl PlantTransition {
    pub fn new(cfg: &SyntheticPlantConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            noise: cfg.noise()?,
        })
    }
}

impl Predictor for PlantTransition {
    fn state_dim(&self) -> usize {
        self.cfg.state_dim
    }

    fn predict(&self, window: &Matrix, t: usize) -> Result<Vec<f64>> {
        let n = self.cfg.state_dim + self.cfg.control_dim;
        if window.cols() != n || window.rows() == 0 {
            return Err(Error::Shape(format!(
                "plant expects windows with {n} columns, got {}x{}",
                window.rows(),
                window.cols()
            )));
        }
        if t >= self.noise.rows() {
            return Err(Error::OutOfRange(format!(
                "plant noise covers {} steps, asked for step {t}",
                self.noise.rows()
            )));
        }
        let mut out = vec![0.0; self.cfg.state_dim];
        self.cfg
            .transition(window.row(window.rows() - 1), t, &self.noise, &mut out);
        Ok(out)
    }
}
