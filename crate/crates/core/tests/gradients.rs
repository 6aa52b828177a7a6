//! Tape gradients against central finite differences on one windowed
//! attention block followed by a sigmoid head and the Dice loss.

use std::collections::BTreeSet;
use std::sync::Arc;

use hyps_core::adapters::{AdapterSpec, Variant};
use hyps_core::autodiff::{Tape, DICE_EPS};
use hyps_core::linalg::{normal_matrix, Matrix, Rng};
use hyps_core::model::{attach_adapters, build_model, ToyModel, ToyModelConfig};
use hyps_core::Exec;

const GRID: [usize; 3] = [8, 4, 4];
const BLOCK: usize = 1; // the shifted block
const H: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-4;

struct Fixture {
    model: ToyModel,
    tokens: Matrix,
    head: Matrix,
    target: Arc<Vec<f64>>,
    trainable: BTreeSet<String>,
}

fn fixture(variant: Variant) -> Fixture {
    let config = ToyModelConfig::default();
    let base = build_model(&config, &mut Rng::new(1)).unwrap();
    let (mut model, partition) = attach_adapters(&base, &AdapterSpec::new(variant, 4), &mut Rng::new(2)).unwrap();
    // move off the zero-initialized up projections so every path carries signal
    let mut rng = Rng::new(3);
    for (name, p) in model.params_mut() {
        if name.contains("up") || name.contains("norm") {
            let noise = normal_matrix(p.rows(), p.cols(), 0.2, &mut rng);
            *p = p.add(&noise).unwrap();
        }
    }
    let prefix = format!("enc.{BLOCK}.");
    let trainable = partition.trainable.into_iter().filter(|n| n.starts_with(&prefix)).collect();
    let t = GRID.iter().product();
    let d = config.embed_dim;
    let target = (0..t).map(|_| rng.bernoulli(0.4) as u8 as f64).collect();
    Fixture {
        model,
        tokens: normal_matrix(t, d, 1.0, &mut rng),
        head: normal_matrix(1, d, 0.5, &mut rng),
        target: Arc::new(target),
        trainable,
    }
}

/// Loss, ReLU pattern and (optionally) gradients at the model's current values.
fn evaluate(f: &Fixture, model: &ToyModel, grads: bool) -> (f64, Vec<bool>, Option<hyps_core::autodiff::Gradients>) {
    let mut tape = Tape::with_trainable(&f.trainable);
    let x = tape.input(f.tokens.clone());
    let c = &model.config;
    let y = model.blocks[BLOCK]
        .forward_tape(&mut tape, &format!("enc.{BLOCK}"), GRID, [c.window; 3], c.heads, x)
        .unwrap();
    let head = tape.input(f.head.clone());
    let logits = tape.matmul_t(y, head).unwrap();
    let p = tape.sigmoid(logits);
    let loss = tape.dice_loss(p, f.target.clone(), DICE_EPS).unwrap();
    let g = grads.then(|| tape.backward(loss).unwrap());
    (tape.value(loss)[(0, 0)], tape.relu_pattern(), g)
}

fn set(model: &mut ToyModel, name: &str, i: usize, v: f64) {
    for (n, p) in model.params_mut() {
        if n == name {
            p.as_mut_slice()[i] = v;
            return;
        }
    }
    panic!("no parameter {name}");
}

struct Outcome {
    checked: usize,
    skipped: usize,
    worst: f64,
    worst_at: String,
}

fn check(variant: Variant) -> Outcome {
    let f = fixture(variant);
    let (_, pattern, g) = evaluate(&f, &f.model, true);
    let g = g.unwrap();
    let names: Vec<&String> = f.trainable.iter().collect();
    // one task per parameter matrix: (checked, skipped, worst, where)
    let parts = Exec::default().map(&names, |name| {
        let mut model = f.model.clone();
        let value = f.model.param(name).unwrap().clone();
        let analytic = g.get(name).cloned().unwrap_or_else(|| Matrix::zeros(value.rows(), value.cols()));
        let mut o = Outcome {
            checked: 0,
            skipped: 0,
            worst: 0.0,
            worst_at: String::new(),
        };
        for i in 0..value.len() {
            let x0 = value.as_slice()[i];
            set(&mut model, name, i, x0 + H);
            let (lp, pp, _) = evaluate(&f, &model, false);
            set(&mut model, name, i, x0 - H);
            let (lm, pm, _) = evaluate(&f, &model, false);
            set(&mut model, name, i, x0);
            if pp != pattern || pm != pattern {
                o.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * H);
            let a = analytic.as_slice()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            o.checked += 1;
            if rel > o.worst {
                o.worst = rel;
                o.worst_at = format!("{name}[{i}] analytic {a:e} numeric {numeric:e}");
            }
        }
        o
    });
    parts.into_iter().fold(
        Outcome {
            checked: 0,
            skipped: 0,
            worst: 0.0,
            worst_at: String::new(),
        },
        |mut acc, o| {
            acc.checked += o.checked;
            acc.skipped += o.skipped;
            if o.worst > acc.worst {
                acc.worst = o.worst;
                acc.worst_at = o.worst_at;
            }
            acc
        },
    )
}

#[test]
fn every_variant_matches_finite_differences() {
    for v in Variant::ALL {
        let o = check(v);
        assert!(o.checked > 0, "{v}: nothing checked");
        assert!(o.skipped * 5 <= o.checked, "{v}: {} of {} points straddle a kink", o.skipped, o.checked);
        eprintln!("{v}: {} checked, {} skipped, worst {:e}", o.checked, o.skipped, o.worst);
        assert!(o.worst <= 1e-6, "{v}: relative error {:e} at {}", o.worst, o.worst_at);
    }
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let f = fixture(Variant::HyPS);
    let (_, _, g) = evaluate(&f, &f.model, true);
    let g = g.unwrap();
    assert!(g.by_name.keys().all(|k| f.trainable.contains(k)));
    assert!(g.get("enc.1.q.pissa.res").is_none());
    assert!(g.get("enc.1.q.pissa.up").is_some());
}
