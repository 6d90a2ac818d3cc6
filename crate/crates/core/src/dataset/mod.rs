//! Time-series storage, min-max scaling, history windows and episode construction.

mod episodes;
mod io;
pub mod plant;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use episodes::{
    build_episodes, day_aligned_episodes, sample_horizon, EpisodePair, HorizonDistribution, Regime,
    RegimeConfig,
};
pub use io::{load_csv, write_csv};
pub use plant::{gen_synthetic, ControlSchedule, PlantTransition, SyntheticPlantConfig};

pub const MINUTES_PER_DAY: usize = 1440;

/// Default origin for series that carry no calendar information.
pub fn default_origin() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

/// State columns followed by control columns, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    values: Matrix,
    state_dim: usize,
    control_dim: usize,
    step_minutes: u32,
    origin: NaiveDateTime,
    names: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn new(values: Matrix, state_dim: usize, control_dim: usize) -> Result<Self> {
        let names = (0..state_dim)
            .map(|i| format!("x{}", i + 1))
            .chain((0..control_dim).map(|i| format!("u{}", i + 1)))
            .collect();
        Self::with_names(values, state_dim, control_dim, names)
    }

    pub fn with_names(
        values: Matrix,
        state_dim: usize,
        control_dim: usize,
        names: Vec<String>,
    ) -> Result<Self> {
        if state_dim == 0 || control_dim == 0 {
            return Err(Error::Config(
                "state and control dimensions must both be positive".into(),
            ));
        }
        let n = state_dim + control_dim;
        if values.cols() != n {
            return Err(Error::Shape(format!(
                "dataset has {} columns, expected {n}",
                values.cols()
            )));
        }
        if names.len() != n {
            return Err(Error::Shape(format!(
                "{} column names for {n} columns",
                names.len()
            )));
        }
        for (i, row) in values.row_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("row {i}, column {}", names[j])));
            }
        }
        Ok(Self {
            values,
            state_dim,
            control_dim,
            step_minutes: 1,
            origin: default_origin(),
            names,
        })
    }

    pub fn with_origin(mut self, origin: NaiveDateTime) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_step_minutes(mut self, step_minutes: u32) -> Self {
        assert!(step_minutes > 0, "step_minutes must be positive");
        self.step_minutes = step_minutes;
        self
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn width(&self) -> usize {
        self.state_dim + self.control_dim
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    pub fn origin(&self) -> NaiveDateTime {
        self.origin
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn state_names(&self) -> &[String] {
        &self.names[..self.state_dim]
    }

    pub fn control_names(&self) -> &[String] {
        &self.names[self.state_dim..]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.values.row(t)[..self.state_dim]
    }

    pub fn control(&self, t: usize) -> &[f64] {
        &self.values.row(t)[self.state_dim..]
    }

    /// Calendar instant of row `t`.
    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.origin + Duration::minutes(t as i64 * i64::from(self.step_minutes))
    }

    pub fn steps_per_day(&self) -> usize {
        MINUTES_PER_DAY / self.step_minutes as usize
    }

    /// Rows `start..end` as a new dataset whose origin is shifted to `start`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::OutOfRange(format!(
                "row slice {start}..{end} of a {}-row dataset",
                self.len()
            )));
        }
        Ok(Self {
            values: self.values.slice_rows(start, end),
            origin: self.timestamp(start),
            names: self.names.clone(),
            ..*self
        })
    }

    fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let n = self.width();
        let data = self
            .values
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % n, v))
            .collect();
        Self {
            values: Matrix::from_vec(self.len(), n, data).expect("same shape"),
            names: self.names.clone(),
            ..*self
        }
    }
}

/// Per-column min-max scaling to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Scaler {
    pub fn validate(&self) -> Result<()> {
        if self.mins.len() != self.maxs.len() {
            return Err(Error::Shape(format!(
                "scaler has {} mins and {} maxs",
                self.mins.len(),
                self.maxs.len()
            )));
        }
        for (j, (lo, hi)) in self.mins.iter().zip(&self.maxs).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Config(format!(
                    "scaler column {j} has min {lo} and max {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.mins.len()
    }

    pub fn scale_value(&self, j: usize, v: f64) -> f64 {
        (v - self.mins[j]) / (self.maxs[j] - self.mins[j])
    }

    pub fn unscale_value(&self, j: usize, v: f64) -> f64 {
        v * (self.maxs[j] - self.mins[j]) + self.mins[j]
    }

    /// Maps a scaled prefix of columns (e.g. a state vector) back to raw units.
    pub fn unscale_prefix(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(j, &v)| self.unscale_value(j, v))
            .collect()
    }

    fn check_width(&self, ds: &TimeSeriesDataset) -> Result<()> {
        if ds.width() != self.width() {
            return Err(Error::Shape(format!(
                "scaler covers {} columns, dataset has {}",
                self.width(),
                ds.width()
            )));
        }
        Ok(())
    }
}

/// Fits per-column extrema. Constant columns are rejected.
pub fn fit_scaler(ds: &TimeSeriesDataset) -> Result<Scaler> {
    let n = ds.width();
    let mut mins = vec![f64::INFINITY; n];
    let mut maxs = vec![f64::NEG_INFINITY; n];
    for row in ds.values.row_iter() {
        for (j, &v) in row.iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    for j in 0..n {
        if !(maxs[j] > mins[j]) {
            return Err(Error::Config(format!(
                "column `{}` is constant and cannot be min-max scaled",
                ds.names[j]
            )));
        }
    }
    Ok(Scaler { mins, maxs })
}

/// Applies the scaler without clamping; values outside the fit range leave [0, 1].
pub fn apply_scaler(ds: &TimeSeriesDataset, scaler: &Scaler) -> Result<TimeSeriesDataset> {
    scaler.check_width(ds)?;
    Ok(ds.map_values(|j, v| scaler.scale_value(j, v)))
}

pub fn invert_scaler(ds: &TimeSeriesDataset, scaler: &Scaler) -> Result<TimeSeriesDataset> {
    scaler.check_width(ds)?;
    Ok(ds.map_values(|j, v| scaler.unscale_value(j, v)))
}

/// The model input: `l` contiguous rows ending at `anchor_index`, most recent last.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub rows: Matrix,
    pub anchor_index: usize,
}

pub fn make_window(ds: &TimeSeriesDataset, t: usize, l: usize) -> Result<WindowSample> {
    if l == 0 {
        return Err(Error::Config("history length must be at least 1".into()));
    }
    if t + 1 < l || t >= ds.len() {
        return Err(Error::OutOfRange(format!(
            "window ending at {t} with history {l} over {} rows",
            ds.len()
        )));
    }
    Ok(WindowSample {
        rows: ds.values.slice_rows(t + 1 - l, t + 1),
        anchor_index: t,
    })
}
