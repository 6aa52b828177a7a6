use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter name plus the step count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances the shared step counter; call once per optimizer step,
    /// before the per-parameter updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Adam update of one parameter with decoupled weight decay
    /// (`w ← w − lr·(m̂/(√v̂ + ε) + λ·w)`).
    pub fn update(&mut self, name: &str, param: &mut Matrix, grad: &Matrix, lr: f64, weight_decay: f64) {
        assert!(self.step > 0, "begin_step must precede update");
        assert_eq!(param.shape(), grad.shape(), "gradient shape for {name}");
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Matrix::zeros(param.rows(), param.cols()), Matrix::zeros(param.rows(), param.cols())));
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (((w, g), mm), vv) in param
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *mm = ADAM_BETA1 * *mm + (1.0 - ADAM_BETA1) * g;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *mm / c1;
            let v_hat = *vv / c2;
            *w -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *w);
        }
    }
}

/// One Adam step over `(name, param, grad)` triples.
pub fn adam_step(params: &mut [(&str, &mut Matrix, &Matrix)], state: &mut AdamState, lr: f64, weight_decay: f64) {
    state.begin_step();
    for (name, p, g) in params.iter_mut() {
        state.update(name, p, g, lr, weight_decay);
    }
}

/// Polynomial decay `lr0·(1 − iter/total)^0.9`.
pub fn poly_lr(iter: usize, total_iters: usize, lr0: f64) -> f64 {
    if total_iters == 0 {
        return lr0;
    }
    let frac = (iter.min(total_iters) as f64) / total_iters as f64;
    lr0 * (1.0 - frac).powf(0.9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut w = Matrix::from_rows(&[&[1.0, -2.0]]);
        let before = w.clone();
        let g = Matrix::zeros(1, 2);
        let mut st = AdamState::new();
        for _ in 0..3 {
            adam_step(&mut [("w", &mut w, &g)], &mut st, 0.1, 0.0);
        }
        assert_eq!(w, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Matrix::filled(1, 1, 0.5);
        let g = Matrix::filled(1, 1, 1.0);
        let mut st = AdamState::new();
        adam_step(&mut [("w", &mut w, &g)], &mut st, 1e-3, 0.0);
        assert!((w[(0, 0)] - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn descends_a_parabola() {
        let mut w = Matrix::filled(1, 1, 1.0);
        let mut st = AdamState::new();
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = w.scale(2.0);
            adam_step(&mut [("w", &mut w, &g)], &mut st, 0.1, 0.0);
            let now = w[(0, 0)].abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut w = Matrix::filled(1, 1, 2.0);
        let g = Matrix::zeros(1, 1);
        let mut st = AdamState::new();
        adam_step(&mut [("w", &mut w, &g)], &mut st, 0.1, 0.5);
        assert!((w[(0, 0)] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0, 100, 0.001), 0.001);
        assert_eq!(poly_lr(100, 100, 0.001), 0.0);
        assert!((poly_lr(50, 100, 0.001) - 0.001 * 0.5f64.powf(0.9)).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let lr = poly_lr(i, 100, 0.001);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
