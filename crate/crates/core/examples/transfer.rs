//! Transfer experiment: pretrain on task A, fine-tune every variant on 10
//! task-B volumes, report held-out Dice.
//!
//! `cargo run --release -p hyps-core --example transfer -- [seed] [pretrain-epochs] [lr] [rank]`
//!
//! The base model is cached in the system temp directory per seed and epoch count.

use std::time::Instant;

use hyps_core::adapters::{AdapterSpec, Variant};
use hyps_core::experiment::{evaluate, finetune, finetune_data, pretrain, FinetuneConfig, PretrainConfig, Seeds};
use hyps_core::Exec;

fn main() -> hyps_core::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let seeds = Seeds::from_run_seed(args.first().copied().unwrap_or(42.0) as u64);
    let mut pc = PretrainConfig::default();
    if let Some(&e) = args.get(1) {
        pc.train.epochs = e as usize;
    }
    let mut fc = FinetuneConfig::default();
    if let Some(&lr) = args.get(2) {
        fc.train.lr0 = lr;
    }
    let rank = args.get(3).copied().unwrap_or(8.0) as usize;
    let t = Instant::now();
    let cache = std::env::temp_dir().join(format!("hyps_base_{}_{}.ckpt", args.first().copied().unwrap_or(42.0), pc.train.epochs));
    let base = if cache.exists() {
        hyps_core::model::read_model(&cache)?
    } else {
        let (base, hist) = pretrain(&pc, seeds, Exec::default())?;
        println!("pretrain {:.1}s first {:.4} last {:.4}", t.elapsed().as_secs_f64(), hist[0].loss, hist.last().unwrap().loss);
        hyps_core::model::write_model(&base, &cache)?;
        base
    };
    let (train, held) = finetune_data(&fc, seeds)?;
    let r = evaluate(&[base.clone()], &held, Exec::default())?;
    println!("no-finetune dice {:.2} hd95 {:?}", r.mean_dice, r.mean_hd95);
    for v in Variant::ALL {
        let t = Instant::now();
        let run = finetune(&base, &AdapterSpec::new(v, rank), &train, &fc.train, seeds, Exec::default())?;
        let r = evaluate(&run.snapshots, &held, Exec::default())?;
        println!(
            "{v:>12} params {:>6} dice {:.2} hd95 {:?} loss {:.4}->{:.4} {:.1}s",
            run.trainable_scalars,
            r.mean_dice,
            r.mean_hd95,
            run.history[0].loss,
            run.history.last().unwrap().loss,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
