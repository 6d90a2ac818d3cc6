//! Stacked LSTM over a history window with a linear head predicting the next state.
//!
//! Gate rows are ordered input, forget, candidate, output in every weight
//! matrix and bias vector. Dropout sits between layers only (inverted, seeded).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{axpy, Matrix};
use crate::rng;
use crate::simulator::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub state_dim: usize,
    #[serde(default = "defaults::hidden_size")]
    pub hidden_size: usize,
    #[serde(default = "defaults::num_layers")]
    pub num_layers: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    #[serde(default = "defaults::history_length")]
    pub history_length: usize,
    #[serde(default = "defaults::output_length")]
    pub output_length: usize,
}

pub mod defaults {
    pub fn hidden_size() -> usize {
        64
    }
    pub fn num_layers() -> usize {
        2
    }
    pub fn dropout() -> f64 {
        0.15
    }
    pub fn history_length() -> usize {
        30
    }
    pub fn output_length() -> usize {
        1
    }
}

impl ModelConfig {
    pub fn new(input_dim: usize, state_dim: usize) -> Self {
        Self {
            input_dim,
            state_dim,
            hidden_size: defaults::hidden_size(),
            num_layers: defaults::num_layers(),
            dropout: defaults::dropout(),
            history_length: defaults::history_length(),
            output_length: defaults::output_length(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model config: {m}")));
        if self.output_length != 1 {
            return bad("output_length must be 1");
        }
        if self.hidden_size == 0 || self.num_layers == 0 {
            return bad("hidden_size and num_layers must be positive");
        }
        if self.state_dim == 0 || self.input_dim <= self.state_dim {
            return bad("input_dim must exceed state_dim (states plus at least one control)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.history_length == 0 {
            return bad("history_length must be positive");
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_size
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `4H x input`
    pub w_input: Matrix,
    /// `4H x H`
    pub w_recurrent: Matrix,
    /// `4H`
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    /// `d_s x H`
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_size;
        let layers = (0..cfg.num_layers)
            .map(|k| LayerParams {
                w_input: Matrix::zeros(4 * h, cfg.layer_input_dim(k)),
                w_recurrent: Matrix::zeros(4 * h, h),
                bias: vec![0.0; 4 * h],
            })
            .collect();
        Self {
            layers,
            head_w: Matrix::zeros(cfg.state_dim, h),
            head_b: vec![0.0; cfg.state_dim],
        }
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(l.w_input.as_slice());
            out.push(l.w_recurrent.as_slice());
            out.push(&l.bias);
        }
        out.push(self.head_w.as_slice());
        out.push(&self.head_b);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(l.w_input.as_mut_slice());
            out.push(l.w_recurrent.as_mut_slice());
            out.push(&mut l.bias);
        }
        out.push(self.head_w.as_mut_slice());
        out.push(&mut self.head_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            axpy(1.0, b, a);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        let z = ModelParams::zeros(cfg);
        self.layers.len() == z.layers.len()
            && self
                .slices()
                .iter()
                .zip(z.slices())
                .all(|(a, b)| a.len() == b.len())
            && self
                .layers
                .iter()
                .zip(&z.layers)
                .all(|(a, b)| {
                    a.w_input.shape() == b.w_input.shape()
                        && a.w_recurrent.shape() == b.w_recurrent.shape()
                })
            && self.head_w.shape() == z.head_w.shape()
    }
}

/// Uniform(-1/sqrt(H), 1/sqrt(H)) everywhere, forget-gate biases set to 1.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let bound = 1.0 / (cfg.hidden_size as f64).sqrt();
    let mut r = rng::seeded(rng::derive(seed, rng::streams::INIT));
    let mut p = ModelParams::zeros(cfg);
    for s in p.slices_mut() {
        for v in s.iter_mut() {
            *v = r.random_range(-bound..=bound);
        }
    }
    let h = cfg.hidden_size;
    for l in &mut p.layers {
        l.bias[h..2 * h].fill(1.0);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Layer inputs after dropout, `l x in`.
    inputs: Vec<f64>,
    /// Activated gates, `l x 4H`.
    gates: Vec<f64>,
    cells: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden: Vec<f64>,
    /// Inverted-dropout multipliers applied to `inputs`, if any.
    mask: Option<Vec<f64>>,
}

/// Everything the backward pass needs, recorded by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    steps: usize,
    input_dim: usize,
    prediction: Vec<f64>,
}

impl ForwardCache {
    pub fn prediction(&self) -> &[f64] {
        &self.prediction
    }

    /// Hidden state of layer `layer` at window step `t`.
    pub fn hidden(&self, layer: usize, t: usize) -> &[f64] {
        let h = self.layers[layer].hidden.len() / self.steps;
        &self.layers[layer].hidden[t * h..(t + 1) * h]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_window(cfg: &ModelConfig, window: &Matrix) -> Result<()> {
    if window.cols() != cfg.input_dim || window.rows() != cfg.history_length {
        return Err(Error::Shape(format!(
            "window is {}x{}, model expects {}x{}",
            window.rows(),
            window.cols(),
            cfg.history_length,
            cfg.input_dim
        )));
    }
    if !window.is_finite() {
        return Err(Error::NonFinite("model input window".into()));
    }
    Ok(())
}

/// Runs the window through the stack and returns the next-state prediction.
/// `seed` only matters in train mode with dropout.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    window: &Matrix,
    mode: Mode,
    seed: u64,
) -> Result<(Vec<f64>, ForwardCache)> {
    check_window(cfg, window)?;
    if !params.matches(cfg) {
        return Err(Error::Shape("parameters do not match the model config".into()));
    }
    let steps = window.rows();
    let h = cfg.hidden_size;
    let drop = mode == Mode::Train && cfg.dropout > 0.0;
    let mut r = rng::seeded(rng::derive(seed, rng::streams::DROPOUT));
    let keep = 1.0 - cfg.dropout;

    let mut layers = Vec::with_capacity(cfg.num_layers);
    let mut z = vec![0.0; 4 * h];
    for (k, lp) in params.layers.iter().enumerate() {
        let in_dim = cfg.layer_input_dim(k);
        let (mut inputs, mask) = if k == 0 {
            (window.as_slice().to_vec(), None)
        } else {
            let below: &LayerCache = &layers[k - 1];
            let mut inputs = below.hidden.clone();
            if drop {
                let mask: Vec<f64> = (0..inputs.len())
                    .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                inputs.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                (inputs, Some(mask))
            } else {
                (inputs, None)
            }
        };
        inputs.shrink_to_fit();
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; steps * h];
        let mut cell_tanh = vec![0.0; steps * h];
        let mut hidden = vec![0.0; steps * h];
        for t in 0..steps {
            let x = &inputs[t * in_dim..(t + 1) * in_dim];
            lp.w_input.matvec_into(x, &mut z);
            if t > 0 {
                let h_prev = &hidden[(t - 1) * h..t * h];
                for (zi, row) in z.iter_mut().zip(lp.w_recurrent.row_iter()) {
                    *zi += crate::matrix::dot(row, h_prev);
                }
            }
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let i_g = sigmoid(z[j] + lp.bias[j]);
                let f_g = sigmoid(z[h + j] + lp.bias[h + j]);
                let c_g = (z[2 * h + j] + lp.bias[2 * h + j]).tanh();
                let o_g = sigmoid(z[3 * h + j] + lp.bias[3 * h + j]);
                g[j] = i_g;
                g[h + j] = f_g;
                g[2 * h + j] = c_g;
                g[3 * h + j] = o_g;
                let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { 0.0 };
                let c = f_g * c_prev + i_g * c_g;
                let tc = c.tanh();
                cells[t * h + j] = c;
                cell_tanh[t * h + j] = tc;
                hidden[t * h + j] = o_g * tc;
            }
        }
        layers.push(LayerCache {
            inputs,
            gates,
            cells,
            cell_tanh,
            hidden,
            mask,
        });
    }

    let top = layers.last().expect("at least one layer");
    let h_last = &top.hidden[(steps - 1) * h..steps * h];
    let mut prediction = vec![0.0; cfg.state_dim];
    params.head_w.matvec_into(h_last, &mut prediction);
    axpy(1.0, &params.head_b, &mut prediction);

    let cache = ForwardCache {
        layers,
        steps,
        input_dim: cfg.input_dim,
        prediction: prediction.clone(),
    };
    Ok((prediction, cache))
}

/// Eval-mode prediction without keeping the cache around.
pub fn predict(params: &ModelParams, cfg: &ModelConfig, window: &Matrix) -> Result<Vec<f64>> {
    forward(params, cfg, window, Mode::Eval, 0).map(|(p, _)| p)
}

/// Gradients of `<prediction, grad_prediction>` with respect to every
/// parameter and every window entry.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    grad_prediction: &[f64],
) -> Result<(ParamGrads, Matrix)> {
    let mut grads = ModelParams::zeros(cfg);
    let dx = backward_into(params, cfg, cache, grad_prediction, &mut grads)?;
    Ok((grads, dx))
}

/// Like [`backward`] but accumulates parameter gradients into `grads`.
pub fn backward_into(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    grad_prediction: &[f64],
    grads: &mut ParamGrads,
) -> Result<Matrix> {
    if grad_prediction.len() != cfg.state_dim {
        return Err(Error::Shape(format!(
            "prediction gradient has {} entries, expected {}",
            grad_prediction.len(),
            cfg.state_dim
        )));
    }
    if cache.layers.len() != cfg.num_layers
        || cache.input_dim != cfg.input_dim
        || cache.layers.iter().any(|c| c.hidden.len() != cache.steps * cfg.hidden_size)
        || !params.matches(cfg)
        || !grads.matches(cfg)
    {
        return Err(Error::Shape(
            "forward cache, parameters and config disagree".into(),
        ));
    }
    let h = cfg.hidden_size;
    let steps = cache.steps;
    let top = cache.layers.last().expect("at least one layer");
    let h_last = &top.hidden[(steps - 1) * h..steps * h];
    grads.head_w.add_outer(grad_prediction, h_last);
    axpy(1.0, grad_prediction, &mut grads.head_b);

    // External gradient on the hidden outputs of the current layer.
    let mut dh_ext = vec![0.0; steps * h];
    params
        .head_w
        .matvec_t_acc(grad_prediction, &mut dh_ext[(steps - 1) * h..]);

    let mut dz = vec![0.0; 4 * h];
    let mut dh_rec = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for k in (0..cfg.num_layers).rev() {
        let lc = &cache.layers[k];
        let lp = &params.layers[k];
        let lg = &mut grads.layers[k];
        let in_dim = cfg.layer_input_dim(k);
        let mut dx = vec![0.0; steps * in_dim];
        dh_rec.fill(0.0);
        dc_next.fill(0.0);
        for t in (0..steps).rev() {
            let g = &lc.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let dh = dh_ext[t * h + j] + dh_rec[j];
                let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = lc.cell_tanh[t * h + j];
                let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                let c_prev = if t > 0 { lc.cells[(t - 1) * h + j] } else { 0.0 };
                dz[j] = dc * c_g * i_g * (1.0 - i_g);
                dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                dz[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                dz[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            let x = &lc.inputs[t * in_dim..(t + 1) * in_dim];
            lg.w_input.add_outer(&dz, x);
            axpy(1.0, &dz, &mut lg.bias);
            lp.w_input
                .matvec_t_acc(&dz, &mut dx[t * in_dim..(t + 1) * in_dim]);
            dh_rec.fill(0.0);
            if t > 0 {
                let h_prev = &lc.hidden[(t - 1) * h..t * h];
                lg.w_recurrent.add_outer(&dz, h_prev);
                lp.w_recurrent.matvec_t_acc(&dz, &mut dh_rec);
            }
        }
        if let Some(mask) = &lc.mask {
            dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        if k == 0 {
            return Matrix::from_vec(steps, in_dim, dx);
        }
        dh_ext = dx;
    }
    unreachable!("num_layers >= 1")
}

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(cfg: &ModelConfig, lr: f64) -> Self {
        Self {
            m: ModelParams::zeros(cfg),
            v: ModelParams::zeros(cfg),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Pure: inputs are left untouched.
pub fn adam_step(
    params: &ModelParams,
    grads: &ParamGrads,
    opt: &OptimizerState,
) -> Result<(ModelParams, OptimizerState)> {
    let (ps, gs) = (params.slices(), grads.slices());
    if ps.len() != gs.len() || ps.iter().zip(&gs).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Shape("gradient layout differs from parameters".into()));
    }
    for (i, g) in gs.iter().enumerate() {
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient tensor {i}, entry {j} is {}",
                g[j]
            )));
        }
    }
    let mut next = params.clone();
    let mut o = opt.clone();
    o.step += 1;
    let t = o.step as i32;
    let bc1 = 1.0 - o.beta1.powi(t);
    let bc2 = 1.0 - o.beta2.powi(t);
    let (b1, b2, lr, eps) = (o.beta1, o.beta2, o.lr, o.eps);
    for (((p, g), m), v) in next
        .slices_mut()
        .into_iter()
        .zip(gs)
        .zip(o.m.slices_mut())
        .zip(o.v.slices_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok((next, o))
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Parameters bundled with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Predictor for LstmModel {
    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn predict(&self, window: &Matrix, _t: usize) -> Result<Vec<f64>> {
        predict(&self.params, &self.config, window)
    }
}
