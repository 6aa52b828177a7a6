use hyps_core::adapters::{
    init_adapted, layer_trainable_params, pissa_split, read_adapter_checkpoint, trainable_params,
    write_adapter_checkpoint, AdaptedLinear, AdapterSpec, LinearLayer, Variant,
};
use hyps_core::linalg::{normal_matrix, svd, Matrix, Rng};
use hyps_core::model::{attach_adapters, build_model, ToyModelConfig};
use proptest::prelude::*;

fn random_layer(m: usize, n: usize, rng: &mut Rng) -> LinearLayer {
    LinearLayer::new(normal_matrix(m, n, 1.0, rng), normal_matrix(m, 1, 0.5, rng)).unwrap()
}

fn tolerance(v: Variant) -> f64 {
    if v.has_split() {
        1e-8
    } else {
        1e-12
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn adapted_layer_equals_base_at_init(
        m in 2usize..=32,
        n in 2usize..=32,
        r in 1usize..=8,
        seed in any::<u64>(),
    ) {
        let r = r.min(m).min(n);
        let mut rng = Rng::new(seed);
        let layer = random_layer(m, n, &mut rng);
        let x = normal_matrix(5, n, 1.0, &mut rng);
        for v in Variant::ALL {
            let a = init_adapted(layer.clone(), AdapterSpec::new(v, r), &mut rng).unwrap();
            let dev = a.forward_rows(&x).unwrap().max_abs_diff(&a.base_forward_rows(&x).unwrap());
            prop_assert!(dev <= tolerance(v), "{v} m={m} n={n} r={r}: {dev:e}");
        }
    }

    #[test]
    fn pissa_split_is_optimal_rank_r(
        m in 2usize..=24,
        n in 2usize..=24,
        r in 1usize..=8,
        seed in any::<u64>(),
    ) {
        let r = r.min(m).min(n);
        let w = normal_matrix(m, n, 1.0, &mut Rng::new(seed));
        let split = pissa_split(&w, r).unwrap();
        let rebuilt = split.w_res.add(&split.principal()).unwrap();
        prop_assert!(rebuilt.max_abs_diff(&w) <= 1e-9);
        // tail energy, Eckart–Young
        let s = svd(&w).unwrap();
        let tail: f64 = s.sigma[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let err = w.sub(&split.principal()).unwrap().frobenius();
        prop_assert!((err - tail).abs() <= 1e-8, "{err} vs {tail}");
    }
}

// The singular values checked against trace identities that never touch the
// SVD: Σσ² = ‖W‖²_F and Σσ⁴ = ‖WᵀW‖²_F.
#[test]
fn singular_values_match_trace_identities() {
    let mut rng = Rng::new(3);
    for _ in 0..50 {
        let (m, n) = (2 + rng.below(20), 2 + rng.below(20));
        let w = normal_matrix(m, n, 1.0, &mut rng);
        let s = svd(&w).unwrap();
        let s2: f64 = s.sigma.iter().map(|x| x * x).sum();
        let s4: f64 = s.sigma.iter().map(|x| x.powi(4)).sum();
        let gram = w.t_matmul(&w).unwrap();
        assert!((s2 - w.frobenius().powi(2)).abs() <= 1e-10 * s2);
        assert!((s4 - gram.frobenius().powi(2)).abs() <= 1e-10 * s4);
        assert!(s.sigma.windows(2).all(|p| p[0] >= p[1]));
    }
}

#[test]
fn rank_one_matrix_splits_exactly() {
    let u = [1.0, 2.0, -1.0];
    let v = [0.5, 0.0, 3.0, 1.0];
    let w = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
    let split = pissa_split(&w, 1).unwrap();
    assert!(split.w_res.max_abs() < 1e-12);
    assert!(split.principal().max_abs_diff(&w) < 1e-12);
}

/// Counts scalars by walking every parameter the layer exposes as trainable.
fn enumerate_trainable(l: &AdaptedLinear) -> usize {
    l.params().iter().filter(|(_, _, t)| *t).map(|(_, m, _)| m.len()).sum()
}

#[test]
fn closed_form_counts_match_enumeration() {
    let mut rng = Rng::new(11);
    for &(m, n) in &[(4, 6), (16, 16), (64, 16), (16, 64), (7, 3)] {
        for r in [1, 2, 3] {
            for v in Variant::ALL {
                let spec = AdapterSpec::new(v, r);
                let l = init_adapted(random_layer(m, n, &mut rng), spec, &mut rng).unwrap();
                assert_eq!(layer_trainable_params(m, n, &spec), enumerate_trainable(&l), "{v} {m}x{n} r={r}");
            }
        }
    }
}

#[test]
fn model_registry_counts_match_enumeration() {
    let config = ToyModelConfig::default().with_embed_dim(32);
    let base = build_model(&config, &mut Rng::new(0)).unwrap();
    let shapes = base.registry().shapes();
    for v in Variant::LOW_RANK {
        for r in [2, 4, 8, 16, 32] {
            let spec = AdapterSpec::new(v, r);
            let (model, _) = attach_adapters(&base, &spec, &mut Rng::new(1)).unwrap();
            let walked: usize = model.blocks.iter().flat_map(|b| [&b.q, &b.k, &b.v, &b.o, &b.mlp1, &b.mlp2]).map(enumerate_trainable).sum();
            assert_eq!(trainable_params(&shapes, &spec), walked, "{v} r={r}");
        }
    }
}

#[test]
fn adapter_checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(5);
    for v in Variant::ALL {
        let spec = AdapterSpec::new(v, 3).with_scales(0.5, 2.0);
        let layers: Vec<(String, AdaptedLinear)> = (0..3)
            .map(|i| {
                let mut l = init_adapted(random_layer(6 + i, 5, &mut rng), spec, &mut rng).unwrap();
                // non-zero up projections so every tensor carries information
                for (_, p) in l.params_mut() {
                    let noise = normal_matrix(p.rows(), p.cols(), 1e-3, &mut rng);
                    *p = p.add(&noise).unwrap();
                }
                (format!("layer{i}"), l)
            })
            .collect();
        let path = dir.path().join(format!("{v}.ckpt"));
        write_adapter_checkpoint(&layers, &spec, &path).unwrap();
        let (spec2, back) = read_adapter_checkpoint(&path).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(layers.len(), back.len());
        for ((n1, a), (n2, b)) in layers.iter().zip(&back) {
            assert_eq!(n1, n2);
            for ((_, x, _), (_, y, _)) in a.params().iter().zip(b.params()) {
                let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(x), bits(y));
            }
        }
    }
}
