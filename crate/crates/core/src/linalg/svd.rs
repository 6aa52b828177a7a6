//! One-sided (Hestenes) Jacobi SVD.
//!
//! Columns of a working copy of `W` are orthogonalized pairwise by plane
//! rotations; the rotations accumulate into `V`, the final column norms are
//! the singular values and the normalized columns form `U`.

use super::Matrix;
use crate::error::{Error, Result};

const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 80;

/// Thin SVD `W = U·diag(sigma)·Vᵀ` with `k = min(m, n)` columns.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank_cap(&self) -> usize {
        self.sigma.len()
    }

    /// `U·diag(sigma)·Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (c, s) in self.sigma.iter().enumerate() {
                us[(r, c)] *= s;
            }
        }
        us.matmul_t(&self.v).expect("svd factors are conformant")
    }
}

/// Singular value decomposition of a finite, non-empty matrix.
///
/// Singular values come out sorted descending; each column of `U` has its
/// largest-magnitude entry non-negative (the paired `V` column is flipped
/// with it).
pub fn svd(w: &Matrix) -> Result<SvdResult> {
    if w.is_empty() {
        return Err(Error::Shape("svd of an empty matrix".into()));
    }
    if !w.is_finite() {
        return Err(Error::Numeric("svd input has non-finite entries".into()));
    }
    if w.rows() < w.cols() {
        let t = svd_tall(&w.transpose())?;
        let mut out = SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
        fix_signs(&mut out);
        return Ok(out);
    }
    let mut out = svd_tall(w)?;
    fix_signs(&mut out);
    Ok(out)
}

/// Column-major working storage keeps the rotation inner loops contiguous.
struct Columns {
    len: usize,
    data: Vec<f64>,
}

impl Columns {
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    fn rotate(&mut self, p: usize, q: usize, c: f64, s: f64) {
        let len = self.len;
        let (lo, hi) = self.data.split_at_mut(q * len);
        let cp = &mut lo[p * len..(p + 1) * len];
        let cq = &mut hi[..len];
        for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
            let (x, y) = (*a, *b);
            *a = c * x - s * y;
            *b = s * x + c * y;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn svd_tall(w: &Matrix) -> Result<SvdResult> {
    let (m, n) = w.shape();
    let mut a = Columns {
        len: m,
        data: (0..n).flat_map(|c| (0..m).map(move |r| (r, c))).map(|(r, c)| w[(r, c)]).collect(),
    };
    let mut v = Columns {
        len: n,
        data: (0..n)
            .flat_map(|c| (0..n).map(move |r| if r == c { 1.0 } else { 0.0 }))
            .collect(),
    };

    let mut converged = n == 1;
    let mut off = 0.0f64;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        off = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(a.col(p), a.col(p));
                let beta = dot(a.col(q), a.col(q));
                let gamma = dot(a.col(p), a.col(q));
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                off = off.max(rel);
                if rel <= OFF_DIAGONAL_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                a.rotate(p, q, c, s);
                v.rotate(p, q, c, s);
            }
        }
        converged = off <= OFF_DIAGONAL_TOL;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge after {MAX_SWEEPS} sweeps; residual off-diagonal mass {off:e}"
        )));
    }

    let norms: Vec<f64> = (0..n).map(|j| dot(a.col(j), a.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma_max = norms[order[0]];
    let negligible = sigma_max * f64::EPSILON * (m.max(n) as f64);
    let mut u = Matrix::zeros(m, n);
    let mut vv = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        if s > negligible && s > 0.0 {
            for r in 0..m {
                u[(r, k)] = a.col(j)[r] / s;
            }
        } else {
            missing.push(k);
        }
        for r in 0..n {
            vv[(r, k)] = v.col(j)[r];
        }
    }
    complete_basis(&mut u, &missing);
    Ok(SvdResult { u, sigma, v: vv })
}

/// Fills the listed columns of `u` with unit vectors orthogonal to all
/// other columns (used for zero singular values).
fn complete_basis(u: &mut Matrix, missing: &[usize]) {
    let (m, k) = u.shape();
    let mut filled: Vec<bool> = (0..k).map(|c| !missing.contains(&c)).collect();
    for &col in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for (c, _) in filled.iter().enumerate().filter(|(_, f)| **f) {
                    let proj: f64 = (0..m).map(|r| u[(r, c)] * cand[r]).sum();
                    for r in 0..m {
                        cand[r] -= proj * u[(r, c)];
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("m >= 1");
        for r in 0..m {
            u[(r, col)] = cand[r] / norm;
        }
        filled[col] = true;
    }
}

fn fix_signs(s: &mut SvdResult) {
    let (m, k) = s.u.shape();
    for c in 0..k {
        let mut best = 0;
        for r in 1..m {
            if s.u[(r, c)].abs() > s.u[(best, c)].abs() {
                best = r;
            }
        }
        if s.u[(best, c)] < 0.0 {
            for r in 0..m {
                s.u[(r, c)] = -s.u[(r, c)];
            }
            for r in 0..s.v.rows() {
                s.v[(r, c)] = -s.v[(r, c)];
            }
        }
    }
}
