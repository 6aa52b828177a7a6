//! RBF-kernel C-SVM trained by SMO with second-order working-set selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const TAU: f64 = 1e-12;

/// Per-feature z-scoring with population standard deviation; constant
/// columns keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let m = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
            let v = (0..n).map(|i| (x[(i, j)] - m).powi(2)).sum::<f64>() / n as f64;
            mean[j] = m;
            std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// `None` selects `1 / n_features`.
    pub gamma: Option<f64>,
    /// KKT violation tolerance of the stopping rule.
    pub tol: f64,
    pub max_iter: usize,
    pub standardize: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_iter: 1_000_000,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Standardized support vectors.
    pub support: Vec<Vec<f64>>,
    /// `αᵢ·yᵢ` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub scaler: Option<Standardizer>,
    /// Full dual vector over the training rows.
    pub alpha: Vec<f64>,
    pub iterations: usize,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Trains on rows of `x` with labels `y ∈ {−1, +1}`.
pub fn svm_train(x: &Matrix, y: &[f64], params: &SvmParams) -> Result<SvmModel> {
    let (n, d) = x.shape();
    if n != y.len() {
        return Err(Error::Shape(format!("{n} rows but {} labels", y.len())));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Training("labels must be +1 or -1".into()));
    }
    if n < 2 || !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::Training("SVM training needs both classes present".into()));
    }
    if !(params.c > 0.0) || !(params.tol > 0.0) {
        return Err(Error::Config("C and tolerance must be positive".into()));
    }
    let gamma = params.gamma.unwrap_or(1.0 / d as f64);
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let scaler = params.standardize.then(|| Standardizer::fit(x));
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| match &scaler {
            Some(s) => s.apply_row(x.row(i)),
            None => x.row(i).to_vec(),
        })
        .collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rbf(&rows[i], &rows[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let (alpha, grad, iterations) = smo(&k, y, params.c, params.tol, params.max_iter)?;
    let bias = -rho(&alpha, &grad, y, params.c);
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        if alpha[i] > 0.0 {
            support.push(rows[i].clone());
            coef.push(alpha[i] * y[i]);
        }
    }
    Ok(SvmModel {
        support,
        coef,
        bias,
        gamma,
        c: params.c,
        scaler,
        alpha,
        iterations,
    })
}

/// Returns `(α, ∇f(α), iterations)` for the dual
/// `min ½αᵀQα − eᵀα, 0 ≤ α ≤ C, yᵀα = 0`, `Q_ij = yᵢyⱼK_ij`.
fn smo(k: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    for iter in 0..max_iter {
        // i: maximal violating index over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax_idx = None;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -g[t] >= gmax {
                    gmax = -g[t];
                    gmax_idx = Some(t);
                }
            } else if !lower(alpha[t]) && g[t] >= gmax {
                gmax = g[t];
                gmax_idx = Some(t);
            }
        }
        let Some(i) = gmax_idx else {
            return Ok((alpha, g, iter));
        };
        // j: second-order choice over I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = None;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let (grad_diff, quad) = if y[t] > 0.0 {
                if lower(alpha[t]) {
                    continue;
                }
                gmax2 = gmax2.max(g[t]);
                (gmax + g[t], k[i * n + i] + k[t * n + t] - 2.0 * y[i] * q(i, t))
            } else {
                if upper(alpha[t]) {
                    continue;
                }
                gmax2 = gmax2.max(-g[t]);
                (gmax - g[t], k[i * n + i] + k[t * n + t] + 2.0 * y[i] * q(i, t))
            };
            if grad_diff > 0.0 {
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    obj_min = obj;
                    best = Some(t);
                }
            }
        }
        let Some(j) = best else {
            return Ok((alpha, g, iter));
        };
        if gmax + gmax2 < tol {
            return Ok((alpha, g, iter));
        }
        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = k[i * n + i] + k[j * n + j] + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            g[t] += q(i, t) * di + q(j, t) * dj;
        }
    }
    Err(Error::Training(format!("SMO did not reach tolerance {tol} in {max_iter} iterations")))
}

/// Offset `ρ` of the decision function `Σ αᵢyᵢK − ρ`.
fn rho(alpha: &[f64], g: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum) = (0usize, 0.0);
    for i in 0..y.len() {
        let yg = y[i] * g[i];
        if alpha[i] >= c {
            if y[i] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[i] <= 0.0 {
            if y[i] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

impl SvmModel {
    /// Signed distance proxy; positive predicts the positive class.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let z = match &self.scaler {
            Some(s) => s.apply_row(x),
            None => x.to_vec(),
        };
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf(sv, &z, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.decision(x) > 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Decision value for `x`; see [`SvmModel::decision`].
pub fn svm_decision(model: &SvmModel, x: &[f64]) -> f64 {
    model.decision(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn blobs(n: usize, sep: f64, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = Rng::new(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            data.push(s * sep + 0.3 * rng.normal());
            data.push(s * sep + 0.3 * rng.normal());
            y.push(s);
        }
        (Matrix::new(n, 2, data).unwrap(), y)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (x, y) = blobs(20, 2.0, 1);
        let m = svm_train(&x, &y, &SvmParams::default()).unwrap();
        for i in 0..20 {
            assert_eq!(m.predict(x.row(i)), y[i]);
        }
        assert!(m.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
        let s: f64 = m.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(s.abs() < 1e-8);
        assert_eq!(m.gamma, 0.5);
    }

    #[test]
    fn xor_is_fit_by_rbf() {
        let x = Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let y = [1.0, 1.0, -1.0, -1.0];
        let p = SvmParams {
            standardize: false,
            gamma: Some(2.0),
            ..SvmParams::default()
        };
        let m = svm_train(&x, &y, &p).unwrap();
        for i in 0..4 {
            assert_eq!(m.predict(x.row(i)), y[i]);
        }
    }

    #[test]
    fn free_support_vectors_sit_on_the_margin() {
        let (x, y) = blobs(30, 0.8, 2);
        let m = svm_train(&x, &y, &SvmParams::default()).unwrap();
        let mut free = 0;
        for i in 0..30 {
            if m.alpha[i] > 1e-9 && m.alpha[i] < m.c - 1e-9 {
                free += 1;
                assert!((y[i] * m.decision(x.row(i)) - 1.0).abs() <= 1e-3 * 2.0);
            }
        }
        assert!(free > 0);
    }

    #[test]
    fn single_class_is_a_training_error() {
        let x = Matrix::from_rows(&[&[0.0], &[1.0]]);
        assert!(matches!(svm_train(&x, &[1.0, 1.0], &SvmParams::default()), Err(Error::Training(_))));
    }
}
