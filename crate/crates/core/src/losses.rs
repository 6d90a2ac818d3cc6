//! Trajectory losses: single and multi-step MSE, classical DTW, soft-DTW,
//! the smoothed temporal-distortion loss, hard TDI and DILATE, with exact
//! gradients with respect to the predicted trajectory.
//!
//! Cost matrices are indexed `(h, j)` with `h` over predicted steps and `j`
//! over ground-truth steps. All dynamic programs are `O(k^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Smallest smoothing accepted when a gradient is requested.
pub const MIN_GRADIENT_GAMMA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Dilate,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "dilate" => Ok(LossKind::Dilate),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_gamma() -> f64 {
    1e-2
}

impl LossConfig {
    pub fn mse() -> Self {
        Self {
            kind: LossKind::Mse,
            alpha: default_alpha(),
            gamma: default_gamma(),
        }
    }

    pub fn dilate(alpha: f64, gamma: f64) -> Self {
        Self {
            kind: LossKind::Dilate,
            alpha,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        check_gamma(self.gamma)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be positive, got {gamma}")))
    }
}

fn same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "prediction is {:?}, target is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn square(m: &Matrix, what: &str) -> Result<usize> {
    if m.rows() != m.cols() {
        return Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(m.rows())
}

pub fn mse_single(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, target has {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Mean of squared differences over all `k * d_s` entries.
pub fn mse_multi(pred: &Matrix, target: &Matrix) -> Result<f64> {
    same_shape(pred, target)?;
    if pred.as_slice().is_empty() {
        return Err(Error::Shape("empty trajectory".into()));
    }
    mse_single(pred.as_slice(), target.as_slice())
}

/// `Δ(h, j) = ||pred_h - target_j||²`.
pub fn cost_matrix(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    same_shape(pred, target)?;
    let k = pred.rows();
    let mut delta = Matrix::zeros(k, k);
    for h in 0..k {
        let p = pred.row(h);
        for j in 0..k {
            let d = p
                .iter()
                .zip(target.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            delta.set(h, j, d);
        }
    }
    Ok(delta)
}

/// `Ω(h, j) = (h - j)² / k²`.
pub fn omega(k: usize) -> Matrix {
    let mut m = Matrix::zeros(k, k);
    let kk = (k * k) as f64;
    for h in 0..k {
        for j in 0..k {
            let d = h as f64 - j as f64;
            m.set(h, j, d * d / kk);
        }
    }
    m
}

/// Monotone, contiguous alignment from `(0, 0)` to `(k-1, k-1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpingPath {
    k: usize,
    cells: Vec<(usize, usize)>,
}

impl WarpingPath {
    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn to_matrix(&self) -> Matrix {
        let mut a = Matrix::zeros(self.k, self.k);
        for &(h, j) in &self.cells {
            a.set(h, j, 1.0);
        }
        a
    }

    /// `<A, M>` for a `k x k` matrix.
    pub fn contract(&self, m: &Matrix) -> f64 {
        self.cells.iter().map(|&(h, j)| m.get(h, j)).sum()
    }
}

/// Classical DTW by cumulative-cost DP.
///
/// Ties on the way back prefer the diagonal, then the step that advanced the
/// prediction index, then the step that advanced the target index.
pub fn dtw_classic(delta: &Matrix) -> Result<(f64, WarpingPath)> {
    let k = square(delta, "cost matrix")?;
    if k == 0 {
        return Err(Error::Shape("empty cost matrix".into()));
    }
    if !delta.is_finite() {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    let w = k + 1;
    let mut d = vec![f64::INFINITY; w * w];
    d[0] = 0.0;
    for i in 1..=k {
        for j in 1..=k {
            let best = d[(i - 1) * w + j - 1]
                .min(d[(i - 1) * w + j])
                .min(d[i * w + j - 1]);
            d[i * w + j] = delta.get(i - 1, j - 1) + best;
        }
    }
    let value = d[k * w + k];

    let mut cells = vec![(k - 1, k - 1)];
    let (mut i, mut j) = (k, k);
    while (i, j) != (1, 1) {
        let diag = d[(i - 1) * w + j - 1];
        let down = d[(i - 1) * w + j];
        let right = d[i * w + j - 1];
        if diag <= down && diag <= right {
            i -= 1;
            j -= 1;
        } else if down <= right {
            i -= 1;
        } else {
            j -= 1;
        }
        cells.push((i - 1, j - 1));
    }
    cells.reverse();
    Ok((value, WarpingPath { k, cells }))
}

/// Forward tables of the soft-DTW recursion, padded with an infinite border.
struct SoftDtwTables {
    k: usize,
    gamma: f64,
    /// `(k+1) x (k+1)`, `r[0][0] = 0`, other border cells `+inf`.
    r: Vec<f64>,
}

impl SoftDtwTables {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.k + 1) + j
    }

    fn value(&self) -> f64 {
        self.r[self.idx(self.k, self.k)]
    }

    /// Soft-min weight of predecessor cell `p` for successor `s` (1-based indices).
    fn weight(&self, delta: &Matrix, p: (usize, usize), s: (usize, usize)) -> f64 {
        let rp = self.r[self.idx(p.0, p.1)];
        if !rp.is_finite() {
            return 0.0;
        }
        let rs = self.r[self.idx(s.0, s.1)];
        ((rs - delta.get(s.0 - 1, s.1 - 1) - rp) / self.gamma).exp()
    }
}

fn soft_min3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if !m.is_finite() {
        return m;
    }
    let s = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * s.ln()
}

fn soft_dtw_tables(delta: &Matrix, gamma: f64) -> Result<SoftDtwTables> {
    check_gamma(gamma)?;
    let k = square(delta, "cost matrix")?;
    if k == 0 {
        return Err(Error::Shape("empty cost matrix".into()));
    }
    if !delta.is_finite() {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    let w = k + 1;
    let mut r = vec![f64::INFINITY; w * w];
    r[0] = 0.0;
    for i in 1..=k {
        for j in 1..=k {
            let sm = soft_min3(
                r[(i - 1) * w + j - 1],
                r[(i - 1) * w + j],
                r[i * w + j - 1],
                gamma,
            );
            r[i * w + j] = delta.get(i - 1, j - 1) + sm;
        }
    }
    let t = SoftDtwTables { k, gamma, r };
    if !t.value().is_finite() {
        return Err(Error::NonFinite(format!(
            "soft-DTW overflowed at gamma {gamma}"
        )));
    }
    Ok(t)
}

/// Predecessors of 1-based cell `(i, j)` inside the grid.
fn preds(i: usize, j: usize) -> [(usize, usize); 3] {
    [(i - 1, j - 1), (i - 1, j), (i, j - 1)]
}

/// Successors of 1-based cell `(i, j)` inside a `k x k` grid.
fn succs(i: usize, j: usize, k: usize) -> impl Iterator<Item = (usize, usize)> {
    [(i + 1, j + 1), (i + 1, j), (i, j + 1)]
        .into_iter()
        .filter(move |&(a, b)| a <= k && b <= k)
}

/// Expected alignment `E = ∂ soft_dtw / ∂Δ` (Gibbs path occupancy).
fn expected_alignment(t: &SoftDtwTables, delta: &Matrix) -> Matrix {
    let k = t.k;
    let mut e = Matrix::zeros(k, k);
    e.set(k - 1, k - 1, 1.0);
    for i in (1..=k).rev() {
        for j in (1..=k).rev() {
            if (i, j) == (k, k) {
                continue;
            }
            let mut acc = 0.0;
            for s in succs(i, j, k) {
                acc += e.get(s.0 - 1, s.1 - 1) * t.weight(delta, (i, j), s);
            }
            e.set(i - 1, j - 1, acc);
        }
    }
    e
}

/// `-γ log Σ_A exp(-<A, Δ>/γ)` via the stabilized soft-min recursion.
pub fn soft_dtw(delta: &Matrix, gamma: f64) -> Result<f64> {
    Ok(soft_dtw_tables(delta, gamma)?.value())
}

/// Gibbs expectation of `<A, Ω>` over all warping paths.
pub fn temporal_loss(delta: &Matrix, omega: &Matrix, gamma: f64) -> Result<f64> {
    same_shape(delta, omega)?;
    let t = soft_dtw_tables(delta, gamma)?;
    let e = expected_alignment(&t, delta);
    Ok(frobenius(&e, omega))
}

fn frobenius(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

/// `<A*, Ω>` for the classical DTW path.
pub fn tdi_hard(delta: &Matrix, omega: &Matrix) -> Result<f64> {
    same_shape(delta, omega)?;
    let (_, path) = dtw_classic(delta)?;
    Ok(path.contract(omega))
}

/// `α · soft_dtw + (1 − α) · temporal`.
pub fn dilate(pred: &Matrix, target: &Matrix, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let delta = cost_matrix(pred, target)?;
    let om = omega(pred.rows());
    let t = soft_dtw_tables(&delta, cfg.gamma)?;
    let shape = t.value();
    let temporal = frobenius(&expected_alignment(&t, &delta), &om);
    Ok(cfg.alpha * shape + (1.0 - cfg.alpha) * temporal)
}

/// Gradients with respect to the cost matrix of soft-DTW and of the temporal loss.
///
/// The temporal gradient is the Hessian of soft-DTW applied to `Ω`, obtained by
/// differentiating the value recursion along `Ω` and then the occupancy recursion.
pub fn cost_gradients(delta: &Matrix, omega: &Matrix, gamma: f64) -> Result<(Matrix, Matrix)> {
    same_shape(delta, omega)?;
    if gamma < MIN_GRADIENT_GAMMA {
        return Err(Error::Config(format!(
            "gamma {gamma} is too small for stable exponentials in the gradient; use at least {MIN_GRADIENT_GAMMA}"
        )));
    }
    let t = soft_dtw_tables(delta, gamma)?;
    let k = t.k;
    let e = expected_alignment(&t, delta);

    // Directional derivative of R along Ω.
    let w = k + 1;
    let mut r_dot = vec![0.0; w * w];
    // Σ_p w_p Ṙ(p), i.e. Ṙ minus Ω, kept for the occupancy step.
    let mut inner_dot = vec![0.0; w * w];
    for i in 1..=k {
        for j in 1..=k {
            let mut acc = 0.0;
            for p in preds(i, j) {
                if p.0 >= 1 && p.1 >= 1 {
                    acc += t.weight(delta, p, (i, j)) * r_dot[p.0 * w + p.1];
                }
            }
            inner_dot[i * w + j] = acc;
            r_dot[i * w + j] = omega.get(i - 1, j - 1) + acc;
        }
    }

    // Directional derivative of the occupancy recursion.
    let mut e_dot = Matrix::zeros(k, k);
    for i in (1..=k).rev() {
        for j in (1..=k).rev() {
            if (i, j) == (k, k) {
                continue;
            }
            let mut acc = 0.0;
            for s in succs(i, j, k) {
                let wt = t.weight(delta, (i, j), s);
                let w_dot = wt * (inner_dot[s.0 * w + s.1] - r_dot[i * w + j]) / gamma;
                acc += e_dot.get(s.0 - 1, s.1 - 1) * wt + e.get(s.0 - 1, s.1 - 1) * w_dot;
            }
            e_dot.set(i - 1, j - 1, acc);
        }
    }
    Ok((e, e_dot))
}

/// Pulls a cost-matrix gradient back to the prediction through `Δ(h, j) = ||ŷ_h − y_j||²`.
fn cost_to_pred(grad_delta: &Matrix, pred: &Matrix, target: &Matrix) -> Matrix {
    let (k, d) = pred.shape();
    let mut g = Matrix::zeros(k, d);
    for h in 0..k {
        let p = pred.row(h);
        let out = g.row_mut(h);
        for j in 0..k {
            let w = grad_delta.get(h, j);
            if w == 0.0 {
                continue;
            }
            for (o, (a, b)) in out.iter_mut().zip(p.iter().zip(target.row(j))) {
                *o += 2.0 * w * (a - b);
            }
        }
    }
    g
}

/// Value of the configured loss and its gradient with respect to the prediction.
pub fn loss_and_grad(pred: &Matrix, target: &Matrix, cfg: &LossConfig) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    same_shape(pred, target)?;
    match cfg.kind {
        LossKind::Mse => {
            let value = mse_multi(pred, target)?;
            let scale = 2.0 / pred.as_slice().len() as f64;
            let data = pred
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(p, t)| scale * (p - t))
                .collect();
            Ok((value, Matrix::from_vec(pred.rows(), pred.cols(), data)?))
        }
        LossKind::Dilate => {
            let delta = cost_matrix(pred, target)?;
            let om = omega(pred.rows());
            let (e, e_dot) = cost_gradients(&delta, &om, cfg.gamma)?;
            let shape = soft_dtw(&delta, cfg.gamma)?;
            let temporal = frobenius(&e, &om);
            let value = cfg.alpha * shape + (1.0 - cfg.alpha) * temporal;
            let mut gd = e;
            gd.as_mut_slice()
                .iter_mut()
                .zip(e_dot.as_slice())
                .for_each(|(a, b)| *a = cfg.alpha * *a + (1.0 - cfg.alpha) * b);
            Ok((value, cost_to_pred(&gd, pred, target)))
        }
    }
}

pub fn loss_grad(pred: &Matrix, target: &Matrix, cfg: &LossConfig) -> Result<Matrix> {
    loss_and_grad(pred, target, cfg).map(|(_, g)| g)
}

/// Gradient of soft-DTW alone.
pub fn soft_dtw_grad(pred: &Matrix, target: &Matrix, gamma: f64) -> Result<Matrix> {
    let delta = cost_matrix(pred, target)?;
    let (e, _) = cost_gradients(&delta, &omega(pred.rows()), gamma)?;
    Ok(cost_to_pred(&e, pred, target))
}

/// Gradient of the temporal loss alone.
pub fn temporal_grad(pred: &Matrix, target: &Matrix, gamma: f64) -> Result<Matrix> {
    let delta = cost_matrix(pred, target)?;
    let (_, e_dot) = cost_gradients(&delta, &omega(pred.rows()), gamma)?;
    Ok(cost_to_pred(&e_dot, pred, target))
}

/// Loss value for any configured kind.
pub fn trajectory_loss(pred: &Matrix, target: &Matrix, cfg: &LossConfig) -> Result<f64> {
    match cfg.kind {
        LossKind::Mse => mse_multi(pred, target),
        LossKind::Dilate => dilate(pred, target, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_single(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_single(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert_eq!(mse_single(&[3.0, 6.0], &[0.0, 0.0]).unwrap(), 9.0 * 2.5);
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(mse_multi(&p, &Matrix::zeros(2, 2)).unwrap(), 0.5);
        let one = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mse_multi(&one, &Matrix::zeros(1, 2)).unwrap(), 2.5);
        assert!(mse_single(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_multi(&p, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn mse_is_invariant_to_joint_time_permutation() {
        let p = Matrix::from_rows(&[vec![1.0, 0.5], vec![-2.0, 1.0], vec![0.25, 3.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![0.0, 0.1], vec![1.0, 1.5], vec![-1.0, 2.0]]).unwrap();
        let perm = [2, 0, 1];
        let pp = Matrix::from_rows(&perm.iter().map(|&i| p.row(i).to_vec()).collect::<Vec<_>>())
            .unwrap();
        let tp = Matrix::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>())
            .unwrap();
        let a = mse_multi(&p, &t).unwrap();
        let b = mse_multi(&pp, &tp).unwrap();
        assert!((a - b).abs() <= 1e-15 * a);
    }

    #[test]
    fn cost_matrix_example() {
        let d = cost_matrix(&col(&[0.0, 1.0, 2.0]), &col(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(
            d,
            Matrix::from_rows(&[
                vec![0.0, 1.0, 1.0],
                vec![1.0, 0.0, 0.0],
                vec![4.0, 1.0, 1.0]
            ])
            .unwrap()
        );
        let x = col(&[0.0, 3.0, -1.0]);
        let dd = cost_matrix(&x, &x).unwrap();
        assert!((0..3).all(|i| dd.get(i, i) == 0.0));
    }

    #[test]
    fn cost_matrix_is_rotation_invariant() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3], vec![2.0, -1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.5, 0.2], vec![0.7, 0.7]]).unwrap();
        let th = 0.83f64;
        let rot = |m: &Matrix| {
            let rows: Vec<Vec<f64>> = m
                .row_iter()
                .map(|r| {
                    vec![
                        th.cos() * r[0] - th.sin() * r[1],
                        th.sin() * r[0] + th.cos() * r[1],
                    ]
                })
                .collect();
            Matrix::from_rows(&rows).unwrap()
        };
        let d1 = cost_matrix(&a, &b).unwrap();
        let d2 = cost_matrix(&rot(&a), &rot(&b)).unwrap();
        for (x, y) in d1.as_slice().iter().zip(d2.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dtw_examples() {
        let x = col(&[0.0, 1.0, 2.0, 1.0]);
        let (v, path) = dtw_classic(&cost_matrix(&x, &x).unwrap()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(path.cells(), &[(0, 0), (1, 1), (2, 2), (3, 3)]);

        let d = cost_matrix(&col(&[0.0, 1.0, 2.0]), &col(&[0.0, 1.0, 1.0])).unwrap();
        let (v, path) = dtw_classic(&d).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(path.cells(), &[(0, 0), (1, 1), (2, 2)]);
        assert_eq!(tdi_hard(&d, &omega(3)).unwrap(), 0.0);
        assert!(dtw_classic(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn soft_dtw_small_cases() {
        assert_eq!(soft_dtw(&cost_matrix(&col(&[2.0]), &col(&[5.0])).unwrap(), 0.1).unwrap(), 9.0);
        let d = cost_matrix(&col(&[0.0, 1.0]), &col(&[0.0, 1.0])).unwrap();
        let v = soft_dtw(&d, 1.0).unwrap();
        let expected = -(1.0 + 2.0 * (-1.0f64).exp()).ln();
        assert!((v - expected).abs() < 1e-14);
        assert!((v + 0.5514).abs() < 1e-4);
        assert!(soft_dtw(&d, 0.0).is_err());
        assert!(soft_dtw(&d, -1.0).is_err());
    }

    #[test]
    fn temporal_small_cases() {
        let single = cost_matrix(&col(&[2.0]), &col(&[5.0])).unwrap();
        assert_eq!(temporal_loss(&single, &omega(1), 1.0).unwrap(), 0.0);

        let d = cost_matrix(&col(&[0.0, 1.0]), &col(&[0.0, 1.0])).unwrap();
        let om = omega(2);
        assert_eq!(om.get(0, 1), 0.25);
        let v = temporal_loss(&d, &om, 1.0).unwrap();
        let e1 = (-1.0f64).exp();
        let expected = 0.5 * e1 / (1.0 + 2.0 * e1);
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.1060).abs() < 1e-4);

        let mut big = Matrix::zeros(4, 4);
        for h in 0..4 {
            for j in 0..4 {
                if h != j {
                    big.set(h, j, 1e6);
                }
            }
        }
        assert!(temporal_loss(&big, &omega(4), 1.0).unwrap() < 1e-12);
        assert!(temporal_loss(&d, &om, 0.0).is_err());
    }

    #[test]
    fn dilate_reductions() {
        let p = col(&[0.0, 1.0]);
        let t = col(&[0.0, 1.0]);
        let d = cost_matrix(&p, &t).unwrap();
        let sd = soft_dtw(&d, 1.0).unwrap();
        let tl = temporal_loss(&d, &omega(2), 1.0).unwrap();
        assert_eq!(dilate(&p, &t, &LossConfig::dilate(1.0, 1.0)).unwrap(), sd);
        assert_eq!(dilate(&p, &t, &LossConfig::dilate(0.0, 1.0)).unwrap(), tl);
        let half = dilate(&p, &t, &LossConfig::dilate(0.5, 1.0)).unwrap();
        assert!((half - (0.5 * sd + 0.5 * tl)).abs() < 1e-15);
        assert!((half + 0.2227).abs() < 1e-4);
    }

    #[test]
    fn mse_gradient_formula() {
        let p = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![0.0, 2.5], vec![0.0, 0.0]]).unwrap();
        let g = loss_grad(&p, &t, &LossConfig::mse()).unwrap();
        for i in 0..4 {
            let expected = 2.0 * (p.as_slice()[i] - t.as_slice()[i]) / 4.0;
            assert_eq!(g.as_slice()[i], expected);
        }
    }

    #[test]
    fn dilate_gradient_is_the_convex_combination() {
        let p = Matrix::from_rows(&[vec![0.1, 0.4], vec![0.3, 0.9], vec![0.8, 0.2]]).unwrap();
        let t = Matrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let g = loss_grad(&p, &t, &LossConfig::dilate(0.6, 0.1)).unwrap();
        let gs = soft_dtw_grad(&p, &t, 0.1).unwrap();
        let gt = temporal_grad(&p, &t, 0.1).unwrap();
        for i in 0..6 {
            let expected = 0.6 * gs.as_slice()[i] + 0.4 * gt.as_slice()[i];
            assert!((g.as_slice()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_gamma_gradient_rejected() {
        let p = col(&[0.0, 1.0]);
        let err = loss_grad(&p, &p, &LossConfig::dilate(0.5, 1e-5)).unwrap_err();
        assert!(err.to_string().contains("gamma"));
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::dilate(1.5, 0.1).validate().is_err());
        assert!(LossConfig::dilate(0.5, 0.0).validate().is_err());
        assert!(LossConfig::dilate(0.5, 0.01).validate().is_ok());
    }
}
