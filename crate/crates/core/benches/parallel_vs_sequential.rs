//! Sequential against rayon execution of the data-parallel loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hyps_core::adapters::{AdapterSpec, Variant};
use hyps_core::autodiff::{sample_gradients, Gradients};
use hyps_core::classify::{cross_validate, synthetic_cohort, CohortSpec, DiagnosisTask, SvmParams};
use hyps_core::linalg::Rng;
use hyps_core::metrics::{evaluate_batch, Volume};
use hyps_core::model::{attach_adapters, build_model, generate_dataset, sliding_window_infer, SynthTask, ToyModelConfig};
use hyps_core::Exec;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench(c: &mut Criterion) {
    let base = build_model(&ToyModelConfig::default(), &mut Rng::new(1)).unwrap();
    let (model, partition) = attach_adapters(&base, &AdapterSpec::new(Variant::HyPS, 4), &mut Rng::new(2)).unwrap();
    let samples = generate_dataset(&SynthTask::b(3), 4).unwrap();
    let mut rng = Rng::new(4);
    let big = Volume::new([32, 32, 32], [1.0; 3], (0..32 * 32 * 32).map(|_| rng.normal()).collect()).unwrap();
    let records = synthetic_cohort(&CohortSpec::ad_cn(100, 5));
    let subjects: Vec<(String, Volume, Volume)> = generate_dataset(&SynthTask::a(6), 16)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("s{i}"), s.label.to_volume(), s.image.threshold(0.5).to_volume()))
        .collect();

    let mut g = c.benchmark_group("exec");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_with_input(BenchmarkId::new("sliding_window_32", name), &exec, |b, &e| {
            b.iter(|| sliding_window_infer(&model, &big, e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("batch_gradients_4", name), &exec, |b, &e| {
            b.iter(|| {
                let parts = e.map(&samples, |s| sample_gradients(&model, &partition.trainable, s).unwrap().1);
                let mut total = Gradients::default();
                for p in &parts {
                    total.accumulate(p);
                }
                total
            })
        });
        g.bench_with_input(BenchmarkId::new("svm_cv_5fold", name), &exec, |b, &e| {
            b.iter(|| cross_validate(&records, DiagnosisTask::AdVsCn, 5, 7, &SvmParams::default(), e).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("evaluate_batch_16", name), &exec, |b, &e| {
            b.iter(|| evaluate_batch(&subjects, Some(10), e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
