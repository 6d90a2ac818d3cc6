//! Closed-loop simulation: the model's predictions are appended to its own
//! history window, with the applied control alongside.

use crate::dataset::{make_window, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Anything that maps a history window to the next state.
///
/// `t` is the absolute index of the window's last row.
pub trait Predictor: Sync {
    fn state_dim(&self) -> usize;
    fn predict(&self, window: &Matrix, t: usize) -> Result<Vec<f64>>;
}

/// Current simulator state: the `l x n` window and the absolute step it ends at.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub window: Matrix,
    pub t: usize,
    pub start: usize,
    pub horizon_elapsed: usize,
}

impl SimState {
    pub fn history_length(&self) -> usize {
        self.window.rows()
    }
}

/// Predicted states with the controls applied alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Row `j` predicts absolute step `t0 + 1 + j`.
    pub states: Matrix,
    pub controls: Matrix,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

/// Starts a simulation from real data ending at `t0`.
pub fn reset(ds: &TimeSeriesDataset, t0: usize, l: usize) -> Result<SimState> {
    let w = make_window(ds, t0, l)?;
    Ok(SimState {
        window: w.rows,
        t: t0,
        start: t0,
        horizon_elapsed: 0,
    })
}

/// Shifts `window` up one row and writes `(state, action)` as the newest row.
pub fn push_row(window: &mut Matrix, state: &[f64], action: &[f64]) {
    let (l, n) = window.shape();
    debug_assert_eq!(state.len() + action.len(), n);
    let data = window.as_mut_slice();
    data.copy_within(n.., 0);
    let last = &mut data[(l - 1) * n..];
    last[..state.len()].copy_from_slice(state);
    last[state.len()..].copy_from_slice(action);
}

/// One closed-loop step: predict, then feed the prediction back with `action`.
pub fn step<P: Predictor + ?Sized>(
    model: &P,
    sim: &SimState,
    action: &[f64],
) -> Result<(SimState, Vec<f64>)> {
    let d_s = model.state_dim();
    if action.len() + d_s != sim.window.cols() {
        return Err(Error::Shape(format!(
            "action has {} entries, window expects {}",
            action.len(),
            sim.window.cols() - d_s
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("action".into()));
    }
    let pred = model.predict(&sim.window, sim.t)?;
    if pred.len() != d_s {
        return Err(Error::Shape(format!(
            "model returned {} states, expected {d_s}",
            pred.len()
        )));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: sim.horizon_elapsed,
        });
    }
    let mut next = sim.clone();
    push_row(&mut next.window, &pred, action);
    next.t += 1;
    next.horizon_elapsed += 1;
    Ok((next, pred))
}

/// `T = controls.rows()` chained steps from real data ending at `t0`.
pub fn rollout<P: Predictor + ?Sized>(
    model: &P,
    ds: &TimeSeriesDataset,
    t0: usize,
    controls: &Matrix,
    l: usize,
) -> Result<Trajectory> {
    let sim = reset(ds, t0, l)?;
    rollout_from(model, sim, controls)
}

/// Rollout from an explicit starting state.
pub fn rollout_from<P: Predictor + ?Sized>(
    model: &P,
    mut sim: SimState,
    controls: &Matrix,
) -> Result<Trajectory> {
    let d_s = model.state_dim();
    if !controls.is_finite() {
        return Err(Error::NonFinite("control sequence".into()));
    }
    let mut states = Matrix::zeros(controls.rows(), d_s);
    for j in 0..controls.rows() {
        let (next, pred) = step(model, &sim, controls.row(j))?;
        states.row_mut(j).copy_from_slice(&pred);
        sim = next;
    }
    Ok(Trajectory {
        states,
        controls: controls.clone(),
    })
}

/// Gym-style wrapper around one model and one dataset.
pub struct SimEnv<'a, P: Predictor + ?Sized> {
    model: &'a P,
    ds: &'a TimeSeriesDataset,
    l: usize,
    state: Option<SimState>,
}

impl<'a, P: Predictor + ?Sized> SimEnv<'a, P> {
    pub fn new(model: &'a P, ds: &'a TimeSeriesDataset, l: usize) -> Self {
        Self {
            model,
            ds,
            l,
            state: None,
        }
    }

    /// Returns the newest state row of the initial window.
    pub fn reset(&mut self, t0: usize) -> Result<Vec<f64>> {
        let s = reset(self.ds, t0, self.l)?;
        let obs = s.window.row(self.l - 1)[..self.model.state_dim()].to_vec();
        self.state = Some(s);
        Ok(obs)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Vec<f64>> {
        let s = self
            .state
            .as_ref()
            .ok_or_else(|| Error::Config("step() called before reset()".into()))?;
        let (next, pred) = step(self.model, s, action)?;
        self.state = Some(next);
        Ok(pred)
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref()
    }
}
