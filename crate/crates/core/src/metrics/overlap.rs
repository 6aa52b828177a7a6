use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

/// Dice (percent) and HD95 (mm) of one prediction against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScore {
    pub dice: f64,
    pub hd95: f64,
}

/// `2|A∩B| / (|A|+|B|) × 100`; two empty masks score 100.
pub fn dice_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_grid(b)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.voxels().iter().zip(b.voxels()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(100.0);
    }
    Ok(200.0 * inter as f64 / total as f64)
}

/// Foreground voxels with at least one 6-neighbour outside the mask; the
/// volume border counts as outside.
pub fn surface_voxels(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = mask.dims();
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !mask.get(x, y, z) {
                    continue;
                }
                let interior = x > 0
                    && y > 0
                    && z > 0
                    && x + 1 < nx
                    && y + 1 < ny
                    && z + 1 < nz
                    && mask.get(x - 1, y, z)
                    && mask.get(x + 1, y, z)
                    && mask.get(x, y - 1, z)
                    && mask.get(x, y + 1, z)
                    && mask.get(x, y, z - 1)
                    && mask.get(x, y, z + 1);
                if !interior {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Exact squared Euclidean distance (in mm²) from every voxel to the
/// nearest seed voxel, by separable lower-envelope transforms along x, y, z.
pub fn squared_distance_field(dims: [usize; 3], spacing: [f64; 3], seeds: &[[usize; 3]]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut field = vec![f64::INFINITY; nx * ny * nz];
    for &[x, y, z] in seeds {
        field[x + nx * (y + ny * z)] = 0.0;
    }
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut scratch = Envelope::default();
    // axis 0
    for z in 0..nz {
        for y in 0..ny {
            let base = nx * (y + ny * z);
            line.clear();
            line.extend_from_slice(&field[base..base + nx]);
            scratch.transform(&line, spacing[0], &mut out);
            field[base..base + nx].copy_from_slice(&out);
        }
    }
    // axis 1
    for z in 0..nz {
        for x in 0..nx {
            line.clear();
            line.extend((0..ny).map(|y| field[x + nx * (y + ny * z)]));
            scratch.transform(&line, spacing[1], &mut out);
            for (y, v) in out.iter().enumerate() {
                field[x + nx * (y + ny * z)] = *v;
            }
        }
    }
    // axis 2
    for y in 0..ny {
        for x in 0..nx {
            line.clear();
            line.extend((0..nz).map(|z| field[x + nx * (y + ny * z)]));
            scratch.transform(&line, spacing[2], &mut out);
            for (z, v) in out.iter().enumerate() {
                field[x + nx * (y + ny * z)] = *v;
            }
        }
    }
    field
}

#[derive(Default)]
struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// 1D transform `out[p] = min_q f[q] + ((p − q)·s)²`.
    fn transform(&mut self, f: &[f64], s: f64, out: &mut Vec<f64>) {
        let n = f.len();
        out.clear();
        self.vertices.clear();
        self.bounds.clear();
        let s2 = s * s;
        let meet = |q: usize, v: usize| -> f64 {
            let (qf, vf) = (q as f64, v as f64);
            ((f[q] + s2 * qf * qf) - (f[v] + s2 * vf * vf)) / (2.0 * s2 * (qf - vf))
        };
        for q in 0..n {
            if f[q].is_infinite() {
                continue;
            }
            while let Some(&v) = self.vertices.last() {
                let x = meet(q, v);
                if self.bounds.last().is_some_and(|&b| x <= b) {
                    self.vertices.pop();
                    self.bounds.pop();
                } else {
                    self.bounds.push(x);
                    break;
                }
            }
            if self.vertices.is_empty() {
                self.bounds.clear();
            }
            self.vertices.push(q);
        }
        if self.vertices.is_empty() {
            out.resize(n, f64::INFINITY);
            return;
        }
        // bounds[i] separates vertices[i] and vertices[i + 1]
        let mut k = 0;
        for p in 0..n {
            while k < self.bounds.len() && self.bounds[k] < p as f64 {
                k += 1;
            }
            // rounding in `meet` can misplace a boundary by an ulp; check the neighbour
            let mut best = f64::INFINITY;
            for j in k.saturating_sub(1)..(k + 2).min(self.vertices.len()) {
                let q = self.vertices[j];
                let d = (p as f64 - q as f64) * s;
                best = best.min(f[q] + d * d);
            }
            out.push(best);
        }
    }
}

fn nearest_rank_95(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = (95 * n).div_ceil(100).max(1);
    values[rank - 1]
}

/// Directed 95th-percentile surface distance from `a` to `b`.
fn directed_h95(a_surface: &[[usize; 3]], b_field: &[f64], dims: [usize; 3]) -> f64 {
    let minima: Vec<f64> = a_surface
        .iter()
        .map(|&[x, y, z]| b_field[x + dims[0] * (y + dims[1] * z)].sqrt())
        .collect();
    nearest_rank_95(minima)
}

/// Symmetric 95th-percentile Hausdorff distance between mask surfaces, in mm.
pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_grid(b)?;
    if a.count() == 0 || b.count() == 0 {
        return Err(Error::UndefinedMetric("HD95 needs two non-empty masks".into()));
    }
    let (sa, sb) = (surface_voxels(a), surface_voxels(b));
    let dims = a.dims();
    let spacing = a.spacing();
    let fa = squared_distance_field(dims, spacing, &sa);
    let fb = squared_distance_field(dims, spacing, &sb);
    Ok(directed_h95(&sa, &fb, dims).max(directed_h95(&sb, &fa, dims)))
}

/// Dice and HD95 together.
pub fn score(pred: &BinaryMask, truth: &BinaryMask) -> Result<SegScore> {
    Ok(SegScore {
        dice: dice_score(truth, pred)?,
        hd95: hd95(truth, pred)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(dims: [usize; 3], spacing: [f64; 3], on: &[[usize; 3]]) -> BinaryMask {
        let mut m = BinaryMask::empty(dims, spacing);
        for &[x, y, z] in on {
            m.set(x, y, z, true);
        }
        m
    }

    #[test]
    fn dice_cases() {
        let d = [4, 4, 4];
        let s = [1.0; 3];
        let a = mask_with(d, s, &[[0, 0, 0], [1, 0, 0]]);
        assert_eq!(dice_score(&a, &a).unwrap(), 100.0);
        let b = mask_with(d, s, &[[3, 3, 3]]);
        assert_eq!(dice_score(&a, &b).unwrap(), 0.0);
        let c = mask_with(d, s, &[[1, 0, 0], [2, 0, 0]]);
        assert_eq!(dice_score(&a, &c).unwrap(), 50.0);
        let e = BinaryMask::empty(d, s);
        assert_eq!(dice_score(&e, &e).unwrap(), 100.0);
        assert!(dice_score(&a, &BinaryMask::empty([4, 4, 5], s)).is_err());
    }

    #[test]
    fn hd95_two_points() {
        let d = [8, 8, 8];
        let a = mask_with(d, [1.0; 3], &[[1, 2, 2]]);
        let b = mask_with(d, [1.0; 3], &[[4, 2, 2]]);
        assert_eq!(hd95(&a, &a).unwrap(), 0.0);
        assert_eq!(hd95(&a, &b).unwrap(), 3.0);
        let a = mask_with(d, [0.5, 1.0, 2.0], &[[1, 2, 2]]);
        let b = mask_with(d, [0.5, 1.0, 2.0], &[[1, 2, 5]]);
        assert_eq!(hd95(&a, &b).unwrap(), 6.0);
    }

    #[test]
    fn hd95_empty_is_undefined() {
        let a = mask_with([4, 4, 4], [1.0; 3], &[[0, 0, 0]]);
        let e = BinaryMask::empty([4, 4, 4], [1.0; 3]);
        assert!(matches!(hd95(&a, &e), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn surface_of_solid_cube() {
        let mut m = BinaryMask::empty([5, 5, 5], [1.0; 3]);
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    m.set(x, y, z, true);
                }
            }
        }
        // 27 voxels, only the centre is interior
        assert_eq!(surface_voxels(&m).len(), 26);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank_95(v), 19.0);
        assert_eq!(nearest_rank_95(vec![4.0]), 4.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank_95(v), 95.0);
    }
}
