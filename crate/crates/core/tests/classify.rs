use hyps_core::classify::{
    classification_report, cross_validate, read_subjects, roc_auc, stratified_folds, svm_train, synthetic_cohort,
    write_subjects, CohortSpec, DiagnosisTask, SvmParams,
};
use hyps_core::linalg::{Matrix, Rng};
use hyps_core::{Error, Exec};
use proptest::prelude::*;

fn mann_whitney(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &s) in scores.iter().enumerate() {
        for (j, &t) in scores.iter().enumerate() {
            if labels[i] > 0.0 && labels[j] < 0.0 {
                pairs += 1.0;
                if s > t {
                    wins += 1.0;
                } else if s == t {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_is_the_mann_whitney_statistic(
        raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..80),
    ) {
        // small integer scores force plenty of ties
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
        let mut labels: Vec<f64> = raw.iter().map(|(_, y)| if *y { 1.0 } else { -1.0 }).collect();
        labels[0] = 1.0;
        labels[1] = -1.0;
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), mann_whitney(&scores, &labels));
    }

    #[test]
    fn folds_are_stratified(n_pos in 5usize..40, n_neg in 5usize..40, k in 2usize..6, seed in any::<u64>()) {
        let labels: Vec<f64> = (0..n_pos).map(|_| 1.0).chain((0..n_neg).map(|_| -1.0)).collect();
        let folds = stratified_folds(&labels, k, seed).unwrap();
        for f in 0..k {
            for (class, n) in [(1.0, n_pos), (-1.0, n_neg)] {
                let c = (0..labels.len()).filter(|&i| folds[i] == f && labels[i] == class).count();
                prop_assert!(c == n / k || c == n.div_ceil(k));
            }
        }
    }
}

fn blobs(n: usize, sep: f64, rng: &mut Rng) -> (Matrix, Vec<f64>) {
    let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let x = Matrix::from_fn(n, 3, |i, _| y[i] * sep + rng.normal());
    (x, y)
}

fn decisions(x: &Matrix, y: &[f64], p: &SvmParams, probe: &Matrix) -> Vec<f64> {
    let m = svm_train(x, y, p).unwrap();
    (0..probe.rows()).map(|r| m.decision(probe.row(r))).collect()
}

#[test]
fn duplicating_the_data_with_half_c_keeps_the_decision() {
    let mut rng = Rng::new(1);
    let (x, y) = blobs(40, 0.6, &mut rng);
    let probe = Matrix::from_fn(25, 3, |_, _| 2.0 * rng.normal());
    let tight = SvmParams {
        tol: 1e-9,
        ..SvmParams::default()
    };
    let base = decisions(&x, &y, &tight, &probe);
    let x2 = Matrix::from_fn(80, 3, |i, j| x[(i % 40, j)]);
    let y2: Vec<f64> = (0..80).map(|i| y[i % 40]).collect();
    let half = SvmParams { c: 0.5, ..tight };
    let dup = decisions(&x2, &y2, &half, &probe);
    for (a, b) in base.iter().zip(&dup) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn standardized_svm_ignores_affine_rescaling() {
    let mut rng = Rng::new(2);
    let (x, y) = blobs(50, 0.7, &mut rng);
    let probe = Matrix::from_fn(20, 3, |_, _| rng.normal());
    let scale = [1000.0, 0.01, 3.0];
    let shift = [5.0, -2.0, 100.0];
    let affine = |m: &Matrix| Matrix::from_fn(m.rows(), 3, |i, j| m[(i, j)] * scale[j] + shift[j]);
    let tight = SvmParams {
        tol: 1e-9,
        ..SvmParams::default()
    };
    let a = decisions(&x, &y, &tight, &probe);
    let b = decisions(&affine(&x), &y, &tight, &affine(&probe));
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-6, "{p} vs {q}");
    }
}

#[test]
fn kkt_conditions_hold_at_the_solution() {
    let mut rng = Rng::new(3);
    let (x, y) = blobs(60, 0.5, &mut rng);
    let p = SvmParams {
        tol: 1e-6,
        standardize: false,
        gamma: Some(0.3),
        ..SvmParams::default()
    };
    let m = svm_train(&x, &y, &p).unwrap();
    let sum: f64 = m.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
    assert!(sum.abs() < 1e-9);
    for (i, &a) in m.alpha.iter().enumerate() {
        assert!((0.0..=p.c).contains(&a));
        let margin = y[i] * m.decision(x.row(i));
        if a > 1e-8 && a < p.c - 1e-8 {
            assert!((margin - 1.0).abs() < 1e-4, "free SV {i}: {margin}");
        } else if a <= 1e-8 {
            assert!(margin > 1.0 - 1e-4);
        } else {
            assert!(margin < 1.0 + 1e-4);
        }
    }
}

#[test]
fn separated_cohort_classifies_well() {
    let records = synthetic_cohort(&CohortSpec::ad_cn(100, 42));
    let pooled = cross_validate(&records, DiagnosisTask::AdVsCn, 5, 42, &SvmParams::default(), Exec::default()).unwrap();
    assert_eq!(pooled.len(), 200);
    assert!(pooled.iter().enumerate().all(|(i, p)| p.index == i));
    let scores: Vec<f64> = pooled.iter().map(|p| p.score).collect();
    let labels: Vec<f64> = pooled.iter().map(|p| p.label).collect();
    let r = classification_report(&scores, &labels).unwrap();
    assert!(r.accuracy >= 0.90 && r.auc >= 0.95, "{r:?}");
    assert_eq!(r.total(), 200);
}

#[test]
fn permuted_labels_sit_at_chance() {
    let mut spec = CohortSpec::ad_cn(100, 42);
    spec.permute_labels = true;
    let records = synthetic_cohort(&spec);
    let pooled = cross_validate(&records, DiagnosisTask::AdVsCn, 5, 42, &SvmParams::default(), Exec::default()).unwrap();
    let scores: Vec<f64> = pooled.iter().map(|p| p.score).collect();
    let labels: Vec<f64> = pooled.iter().map(|p| p.label).collect();
    let r = classification_report(&scores, &labels).unwrap();
    assert!((0.40..=0.60).contains(&r.accuracy), "{r:?}");
}

#[test]
fn cross_validation_agrees_across_policies() {
    let records = synthetic_cohort(&CohortSpec::ad_cn(30, 9));
    let p = SvmParams::default();
    let a = cross_validate(&records, DiagnosisTask::AdVsCn, 5, 9, &p, Exec::Sequential).unwrap();
    let b = cross_validate(&records, DiagnosisTask::AdVsCn, 5, 9, &p, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn too_few_subjects_per_class() {
    let records = synthetic_cohort(&CohortSpec::ad_cn(3, 1));
    let r = cross_validate(&records, DiagnosisTask::AdVsCn, 5, 1, &SvmParams::default(), Exec::default());
    assert!(matches!(r, Err(Error::Insufficient(_))));
}

#[test]
fn subject_table_round_trip() {
    let records = synthetic_cohort(&CohortSpec::ad_cn(10, 5));
    let text = write_subjects(&records);
    assert_eq!(read_subjects(text.as_bytes()).unwrap(), records);
}
