//! The scaled transfer protocol: pretrain on task A, fine-tune on a few
//! task-B volumes, score held-out task-B volumes.

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterSpec, Variant};
use crate::autodiff::{checkpoint_output_average, train, EpochRecord, TrainConfig};
use crate::error::Result;
use crate::exec::Exec;
use crate::linalg::Rng;
use crate::metrics::{dice_score, hd95, Volume};
use crate::model::{attach_adapters, build_model, generate_dataset, Sample, SynthTask, ToyModel, ToyModelConfig};
use crate::Error;

/// Dataset seeds derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub pretrain_data: u64,
    pub finetune_data: u64,
    pub heldout_data: u64,
    pub adapters: u64,
    pub train: u64,
}

impl Seeds {
    pub fn from_run_seed(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        Self {
            init: rng.next_u64(),
            pretrain_data: rng.next_u64(),
            finetune_data: rng.next_u64(),
            heldout_data: rng.next_u64(),
            adapters: rng.next_u64(),
            train: rng.next_u64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub model: ToyModelConfig,
    pub samples: usize,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            model: ToyModelConfig::default(),
            samples: 200,
            train: TrainConfig {
                epochs: 8,
                lr0: 3e-3,
                ..TrainConfig::default()
            },
        }
    }
}

/// Trains a fresh model on task A.
pub fn pretrain(config: &PretrainConfig, seeds: Seeds, exec: Exec) -> Result<(ToyModel, Vec<EpochRecord>)> {
    let mut model = build_model(&config.model, &mut Rng::new(seeds.init))?;
    let data = generate_dataset(&SynthTask::a(seeds.pretrain_data), config.samples)?;
    let partition = model.partition();
    let tc = TrainConfig {
        seed: seeds.train,
        ..config.train.clone()
    };
    let out = train(&mut model, &data, &partition, &tc, exec)?;
    Ok((model, out.history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub train_n: usize,
    pub heldout_n: usize,
    pub train: TrainConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            train_n: 10,
            heldout_n: 50,
            train: TrainConfig {
                epochs: 30,
                lr0: 3e-3,
                ..TrainConfig::default()
            },
        }
    }
}

pub struct FinetuneRun {
    pub model: ToyModel,
    pub history: Vec<EpochRecord>,
    pub snapshots: Vec<ToyModel>,
    pub trainable_scalars: usize,
}

pub fn finetune_data(config: &FinetuneConfig, seeds: Seeds) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let train = generate_dataset(&SynthTask::b(seeds.finetune_data), config.train_n)?;
    let heldout = generate_dataset(&SynthTask::b(seeds.heldout_data), config.heldout_n)?;
    Ok((train, heldout))
}

/// Wraps `base` per `spec` and fine-tunes it on `data`.
pub fn finetune(base: &ToyModel, spec: &AdapterSpec, data: &[Sample], config: &TrainConfig, seeds: Seeds, exec: Exec) -> Result<FinetuneRun> {
    let (mut model, partition) = if spec.variant == Variant::FullTuning {
        let mut m = base.clone();
        m.variant = Variant::FullTuning;
        let p = m.partition();
        (m, p)
    } else {
        attach_adapters(base, spec, &mut Rng::new(seeds.adapters))?
    };
    let trainable_scalars = partition.trainable_scalars(&model);
    let tc = TrainConfig {
        seed: seeds.train,
        ..config.clone()
    };
    let out = train(&mut model, data, &partition, &tc, exec)?;
    Ok(FinetuneRun {
        model,
        history: out.history,
        snapshots: out.snapshots,
        trainable_scalars,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub index: usize,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutReport {
    pub mean_dice: f64,
    /// Mean over subjects where HD95 is defined.
    pub mean_hd95: Option<f64>,
    pub hd95_undefined: usize,
    pub subjects: Vec<SubjectScore>,
}

/// Probability volumes for `images`: the mean of four snapshots when four
/// are given, else the single model.
pub fn predict(models: &[ToyModel], image: &Volume, exec: Exec) -> Result<Volume> {
    match models.len() {
        1 => crate::model::sliding_window_infer(&models[0], image, exec),
        4 => checkpoint_output_average(models, image, exec),
        n => Err(Error::Usage(format!("prediction needs 1 or 4 models, got {n}"))),
    }
}

/// Thresholds predictions at 0.5 and scores them against the labels.
pub fn evaluate(models: &[ToyModel], data: &[Sample], exec: Exec) -> Result<HeldoutReport> {
    let scores = exec.map_range(data.len(), |i| -> Result<SubjectScore> {
        let s = &data[i];
        let pred = predict(models, &s.image, Exec::Sequential)?.threshold(0.5);
        let dice = dice_score(&s.label, &pred)?;
        let hd = match hd95(&s.label, &pred) {
            Ok(h) => Some(h),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(SubjectScore { index: i, dice, hd95: hd })
    });
    let subjects = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let n = subjects.len().max(1) as f64;
    let mean_dice = subjects.iter().map(|s| s.dice).sum::<f64>() / n;
    let defined: Vec<f64> = subjects.iter().filter_map(|s| s.hd95).collect();
    let mean_hd95 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(HeldoutReport {
        mean_dice,
        mean_hd95,
        hd95_undefined: subjects.len() - defined.len(),
        subjects,
    })
}
