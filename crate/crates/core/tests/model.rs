use hyps_core::adapters::{AdaptedLinear, LinearLayer};
use hyps_core::linalg::{normal_matrix, Matrix, Rng};
use hyps_core::metrics::Volume;
use hyps_core::model::{
    build_model, generate_dataset, sliding_window_infer, window_attention, SynthTask, ToyModelConfig, WindowLayout,
};
use hyps_core::{Error, Exec};

fn linear(w: Matrix, b: Matrix) -> AdaptedLinear {
    AdaptedLinear::plain(LinearLayer::new(w, b).unwrap())
}

fn random_linear(d: usize, rng: &mut Rng) -> AdaptedLinear {
    linear(normal_matrix(d, d, 0.4, rng), normal_matrix(d, 1, 0.1, rng))
}

/// Plain multi-head attention over all rows, written out directly.
fn global_attention(x: &Matrix, qkvo: [&AdaptedLinear; 4], heads: usize) -> Matrix {
    let q = qkvo[0].forward_rows(x).unwrap();
    let k = qkvo[1].forward_rows(x).unwrap();
    let v = qkvo[2].forward_rows(x).unwrap();
    let (t, d) = x.shape();
    let dh = d / heads;
    let mut out = Matrix::zeros(t, d);
    for h in 0..heads {
        for i in 0..t {
            let s: Vec<f64> = (0..t)
                .map(|j| (0..dh).map(|c| q[(i, h * dh + c)] * k[(j, h * dh + c)]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..dh {
                out[(i, h * dh + c)] = (0..t).map(|j| e[j] / z * v[(j, h * dh + c)]).sum();
            }
        }
    }
    qkvo[3].forward_rows(&out).unwrap()
}

#[test]
fn single_window_is_global_attention() {
    let mut rng = Rng::new(1);
    let d = 8;
    let l: Vec<AdaptedLinear> = (0..4).map(|_| random_linear(d, &mut rng)).collect();
    let qkvo = [&l[0], &l[1], &l[2], &l[3]];
    let x = normal_matrix(64, d, 1.0, &mut rng);
    let got = window_attention(&x, qkvo, [4, 4, 4], [4, 4, 4], 2, false).unwrap();
    assert!(got.max_abs_diff(&global_attention(&x, qkvo, 2)) < 1e-12);
}

#[test]
fn windows_are_independent() {
    // grid 8×4×4 in two windows: each half attends only to itself
    let mut rng = Rng::new(2);
    let d = 4;
    let l: Vec<AdaptedLinear> = (0..4).map(|_| random_linear(d, &mut rng)).collect();
    let qkvo = [&l[0], &l[1], &l[2], &l[3]];
    let x = normal_matrix(128, d, 1.0, &mut rng);
    let got = window_attention(&x, qkvo, [8, 4, 4], [4, 4, 4], 1, false).unwrap();
    // token index is x + 8(y + 4z); the low window holds x < 4
    let half = |lo: usize| -> Vec<usize> { (0..128).filter(|t| (t % 8 >= 4) == (lo == 1)).collect() };
    for w in 0..2 {
        let idx = half(w);
        let sub = Matrix::from_fn(idx.len(), d, |r, c| x[(idx[r], c)]);
        let want = global_attention(&sub, qkvo, 1);
        for (r, &t) in idx.iter().enumerate() {
            for c in 0..d {
                assert!((got[(t, c)] - want[(r, c)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_values_give_the_output_bias() {
    let mut rng = Rng::new(3);
    let d = 4;
    let q = random_linear(d, &mut rng);
    let k = random_linear(d, &mut rng);
    let v = linear(Matrix::zeros(d, d), Matrix::zeros(d, 1));
    let o = random_linear(d, &mut rng);
    let x = normal_matrix(64, d, 1.0, &mut rng);
    let got = window_attention(&x, [&q, &k, &v, &o], [4, 4, 4], [2, 2, 2], 2, true).unwrap();
    for r in 0..64 {
        for c in 0..d {
            assert_eq!(got[(r, c)], o.base.b[(c, 0)]);
        }
    }
}

#[test]
fn two_token_hand_evaluation() {
    let one = || linear(Matrix::from_rows(&[&[1.0]]), Matrix::zeros(1, 1));
    let (q, k, v, o) = (one(), one(), one(), one());
    let x = Matrix::column(&[1.0, 2.0]);
    let got = window_attention(&x, [&q, &k, &v, &o], [2, 1, 1], [2, 1, 1], 1, false).unwrap();
    let e = f64::exp;
    // scores x_i·x_j: row 0 [1, 2], row 1 [2, 4]
    let want0 = (e(1.0) + 2.0 * e(2.0)) / (e(1.0) + e(2.0));
    let want1 = (e(2.0) + 2.0 * e(4.0)) / (e(2.0) + e(4.0));
    assert!((got[(0, 0)] - want0).abs() < 1e-14);
    assert!((got[(1, 0)] - want1).abs() < 1e-14);
}

#[test]
fn shifted_attention_is_rolled_attention() {
    let mut rng = Rng::new(4);
    let d = 4;
    let l: Vec<AdaptedLinear> = (0..4).map(|_| random_linear(d, &mut rng)).collect();
    let qkvo = [&l[0], &l[1], &l[2], &l[3]];
    let grid = [8, 4, 4];
    let t = 128;
    let x = normal_matrix(t, d, 1.0, &mut rng);
    let shifted = window_attention(&x, qkvo, grid, [4, 4, 4], 2, true).unwrap();
    // roll tokens by -2 along every axis, attend unshifted, roll back
    let idx = |p: [usize; 3]| p[0] + grid[0] * (p[1] + grid[1] * p[2]);
    let src = |i: usize| {
        let p = [i % 8, (i / 8) % 4, i / 32];
        idx([(p[0] + 2) % 8, (p[1] + 2) % 4, (p[2] + 2) % 4])
    };
    let rolled = Matrix::from_fn(t, d, |r, c| x[(src(r), c)]);
    let plain = window_attention(&rolled, qkvo, grid, [4, 4, 4], 2, false).unwrap();
    for r in 0..t {
        for c in 0..d {
            assert!((shifted[(src(r), c)] - plain[(r, c)]).abs() < 1e-12);
        }
    }
}

#[test]
fn layouts_are_permutations() {
    for shifted in [false, true] {
        let l = WindowLayout::new([8, 4, 4], [4, 4, 4], shifted).unwrap();
        let mut seen = vec![false; 128];
        for (&f, i) in l.forward.iter().zip(0..) {
            assert!(!seen[f]);
            seen[f] = true;
            assert_eq!(l.inverse[f], i);
        }
    }
}

#[test]
fn sliding_window_matches_direct_forward_on_one_patch() {
    let model = build_model(&ToyModelConfig::default(), &mut Rng::new(5)).unwrap();
    let img = generate_dataset(&SynthTask::b(5), 1).unwrap().remove(0).image;
    let direct = model.forward(&img).unwrap();
    let tiled = sliding_window_infer(&model, &img, Exec::Sequential).unwrap();
    assert_eq!(direct.data(), tiled.data());
}

#[test]
fn sliding_window_covers_odd_sizes_identically_under_both_policies() {
    let model = build_model(&ToyModelConfig::default(), &mut Rng::new(6)).unwrap();
    let mut rng = Rng::new(7);
    let img = Volume::new([21, 16, 18], [1.0; 3], (0..21 * 16 * 18).map(|_| rng.normal()).collect()).unwrap();
    let a = sliding_window_infer(&model, &img, Exec::Sequential).unwrap();
    let b = sliding_window_infer(&model, &img, Exec::Parallel).unwrap();
    assert_eq!(a.dims(), [21, 16, 18]);
    assert_eq!(a.data(), b.data());
    assert!(a.data().iter().all(|&p| p > 0.0 && p < 1.0));
    let small = Volume::zeros([15, 16, 16], [1.0; 3]);
    assert!(matches!(sliding_window_infer(&model, &small, Exec::Sequential), Err(Error::Shape(_))));
}

/// Task A blobs are larger than task B's; over 100 samples the mean
/// foreground ratio should follow the configured sizes. Blob overlap and
/// the gap between E[r³] and E[r]³ keep it a few percent off.
#[test]
fn foreground_ratio_follows_the_configured_sizes() {
    let mean = |t: &SynthTask| generate_dataset(t, 100).unwrap().iter().map(|s| s.label.count() as f64).sum::<f64>() / 100.0;
    let (a, b) = (SynthTask::a(100), SynthTask::b(100));
    let observed = mean(&a) / mean(&b);
    let nominal = a.nominal_foreground() / b.nominal_foreground();
    assert!((observed / nominal - 1.0).abs() <= 0.15, "{observed} vs {nominal}");
}
