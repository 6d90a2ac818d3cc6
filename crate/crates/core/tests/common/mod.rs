//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use dadsim::lstm::{ModelConfig, ModelParams};
use dadsim::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| r.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Every monotone path from `(0, 0)` to `(k-1, k-1)` with unit steps.
pub fn all_paths(k: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(
        k: usize,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        let (i, j) = *cur.last().unwrap();
        if (i, j) == (k - 1, k - 1) {
            out.push(cur.clone());
            return;
        }
        for (a, b) in [(i + 1, j + 1), (i + 1, j), (i, j + 1)] {
            if a < k && b < k {
                cur.push((a, b));
                walk(k, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(k, &mut vec![(0, 0)], &mut out);
    out
}

pub fn path_sum(path: &[(usize, usize)], m: &Matrix) -> f64 {
    path.iter().map(|&(h, j)| m.get(h, j)).sum()
}

/// Path costs and Gibbs probabilities `exp(-cost / γ) / Z`, computed in log space.
fn gibbs(delta: &Matrix, gamma: f64) -> (Vec<Vec<(usize, usize)>>, Vec<f64>, f64) {
    let paths = all_paths(delta.rows());
    let costs: Vec<f64> = paths.iter().map(|p| path_sum(p, delta)).collect();
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let z: f64 = costs.iter().map(|c| (-(c - min) / gamma).exp()).sum();
    let log_z = z.ln() - min / gamma;
    let probs = costs
        .iter()
        .map(|c| (-(c - min) / gamma).exp() / z)
        .collect();
    (paths, probs, log_z)
}

pub fn soft_dtw_enum(delta: &Matrix, gamma: f64) -> f64 {
    let (_, _, log_z) = gibbs(delta, gamma);
    -gamma * log_z
}

pub fn temporal_enum(delta: &Matrix, omega: &Matrix, gamma: f64) -> f64 {
    let (paths, probs, _) = gibbs(delta, gamma);
    paths
        .iter()
        .zip(&probs)
        .map(|(p, w)| w * path_sum(p, omega))
        .sum()
}

/// Minimum path cost and the `Ω` contraction of the minimizing path.
pub fn hard_enum(delta: &Matrix, omega: &Matrix) -> (f64, f64) {
    let paths = all_paths(delta.rows());
    let best = paths
        .iter()
        .min_by(|a, b| path_sum(a, delta).total_cmp(&path_sum(b, delta)))
        .unwrap();
    (path_sum(best, delta), path_sum(best, omega))
}

pub fn omega_ref(k: usize) -> Matrix {
    let mut m = Matrix::zeros(k, k);
    for h in 0..k {
        for j in 0..k {
            m.set(h, j, ((h as f64 - j as f64) / k as f64).powi(2));
        }
    }
    m
}

pub fn cost_ref(pred: &Matrix, target: &Matrix) -> Matrix {
    let k = pred.rows();
    let mut m = Matrix::zeros(k, k);
    for h in 0..k {
        for j in 0..k {
            let mut s = 0.0;
            for d in 0..pred.cols() {
                s += (pred.get(h, d) - target.get(j, d)).powi(2);
            }
            m.set(h, j, s);
        }
    }
    m
}

pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs.max(rel * a.abs().max(b.abs()))
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-loop LSTM stack without dropout: gates i, f, g, o in blocks of `H` rows.
pub fn lstm_reference(params: &ModelParams, cfg: &ModelConfig, window: &Matrix) -> Vec<f64> {
    let hs = cfg.hidden_size;
    let mut seq: Vec<Vec<f64>> = (0..window.rows()).map(|t| window.row(t).to_vec()).collect();
    for lp in &params.layers {
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        let mut out = Vec::with_capacity(seq.len());
        for x in &seq {
            let mut pre = vec![0.0; 4 * hs];
            for (r, p) in pre.iter_mut().enumerate() {
                let mut s = lp.bias[r];
                for (q, xv) in x.iter().enumerate() {
                    s += lp.w_input.get(r, q) * xv;
                }
                for (q, hv) in h.iter().enumerate() {
                    s += lp.w_recurrent.get(r, q) * hv;
                }
                *p = s;
            }
            let mut nh = vec![0.0; hs];
            for j in 0..hs {
                let i = sig(pre[j]);
                let f = sig(pre[hs + j]);
                let g = pre[2 * hs + j].tanh();
                let o = sig(pre[3 * hs + j]);
                c[j] = f * c[j] + i * g;
                nh[j] = o * c[j].tanh();
            }
            h = nh;
            out.push(h.clone());
        }
        seq = out;
    }
    let last = seq.last().unwrap();
    (0..cfg.state_dim)
        .map(|d| {
            params.head_b[d]
                + (0..hs)
                    .map(|j| params.head_w.get(d, j) * last[j])
                    .sum::<f64>()
        })
        .collect()
}
