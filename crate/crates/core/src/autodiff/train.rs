use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::augment::AugmentParams;
use super::loss::DICE_EPS;
use super::optim::{poly_lr, AdamState};
use super::tape::{Gradients, Tape};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{Matrix, Rng};
use crate::metrics::Volume;
use crate::model::{sliding_window_infer, Sample, ToyModel};

/// Parameter names that receive updates and those that stay fixed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamPartition {
    pub trainable: BTreeSet<String>,
    pub frozen: BTreeSet<String>,
}

impl ParamPartition {
    /// Every parameter of `model` frozen.
    pub fn all_frozen(model: &ToyModel) -> Self {
        Self {
            trainable: BTreeSet::new(),
            frozen: model.params().into_iter().map(|(n, _)| n).collect(),
        }
    }

    /// Number of trainable scalars in `model`.
    pub fn trainable_scalars(&self, model: &ToyModel) -> usize {
        model
            .params()
            .iter()
            .filter(|(n, _)| self.trainable.contains(n))
            .map(|(_, m)| m.len())
            .sum()
    }

    fn check(&self, model: &ToyModel) -> Result<()> {
        if !self.trainable.is_disjoint(&self.frozen) {
            return Err(Error::Config("partition: trainable and frozen sets overlap".into()));
        }
        let names: BTreeSet<String> = model.params().into_iter().map(|(n, _)| n).collect();
        let covered: BTreeSet<String> = self.trainable.union(&self.frozen).cloned().collect();
        if covered != names {
            let missing = names.symmetric_difference(&covered).next().cloned().unwrap_or_default();
            return Err(Error::Config(format!("partition does not match the model at {missing:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Draw a fresh augmentation per sample and epoch.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            lr0: 1e-3,
            weight_decay: 1e-5,
            epochs: 30,
            seed: 42,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Optimizer steps over the whole run for `n` training samples.
    pub fn total_iters(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

/// One line of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Model states at the end of the last (up to) four epochs, oldest first.
    pub snapshots: Vec<ToyModel>,
}

/// History as comma-separated text with an `epoch,lr,loss` header.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,loss\n");
    for r in history {
        s.push_str(&format!("{},{:e},{:.17e}\n", r.epoch, r.lr, r.loss));
    }
    s
}

/// Loss and gradients of one sample.
pub fn sample_gradients(model: &ToyModel, trainable: &BTreeSet<String>, sample: &Sample) -> Result<(f64, Gradients)> {
    let mut tape = Tape::with_trainable(trainable);
    let p = model.forward_tape(&mut tape, &sample.image)?;
    let loss = tape.dice_loss(p, Arc::new(sample.label.as_f64()), DICE_EPS)?;
    let value = tape.value(loss)[(0, 0)];
    Ok((value, tape.backward(loss)?))
}

/// Trains `model` in place on `data` with Adam and the poly schedule.
///
/// Batches are drawn from a seeded shuffle each epoch; augmentations are
/// sampled sequentially from the same stream, then samples of a batch are
/// differentiated under `exec` and their gradients summed in batch order.
pub fn train(
    model: &mut ToyModel,
    data: &[Sample],
    partition: &ParamPartition,
    config: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    config.validate()?;
    partition.check(model)?;
    let mut outcome = TrainOutcome {
        history: Vec::with_capacity(config.epochs),
        snapshots: Vec::new(),
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }
    if data.is_empty() {
        return Err(Error::Insufficient("training needs at least one sample".into()));
    }
    let mut rng = Rng::new(config.seed);
    let mut adam = AdamState::new();
    let total = config.total_iters(data.len());
    let mut iter = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let epoch_lr = poly_lr(iter, total, config.lr0);
        let mut losses = vec![0.0; data.len()];
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<(usize, Sample)> = batch
                .iter()
                .map(|&i| {
                    let s = &data[i];
                    let params = if config.augment {
                        AugmentParams::sample(&mut rng)
                    } else {
                        AugmentParams::IDENTITY
                    };
                    let (image, label) = params.apply(&s.image, &s.label);
                    (i, Sample { image, label })
                })
                .collect();
            let results = exec.map(&inputs, |(_, s)| sample_gradients(model, &partition.trainable, s));
            let mut grads = Gradients::default();
            for ((i, _), r) in inputs.iter().zip(results) {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        message: format!("loss became {loss} on sample {i}"),
                    });
                }
                losses[*i] = loss;
                grads.accumulate(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            let lr = poly_lr(iter, total, config.lr0);
            adam.begin_step();
            for (name, param) in model.params_mut() {
                if !partition.trainable.contains(&name) {
                    continue;
                }
                let zero;
                let g = match grads.get(&name) {
                    Some(g) => g,
                    None => {
                        zero = Matrix::zeros(param.rows(), param.cols());
                        &zero
                    }
                };
                adam.update(&name, param, g, lr, config.weight_decay);
                if !param.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        message: format!("parameter {name} became non-finite"),
                    });
                }
            }
            iter += 1;
        }
        let loss = losses.iter().sum::<f64>() / data.len() as f64;
        log::info!("epoch {epoch} lr {epoch_lr:e} loss {loss:.6}");
        outcome.history.push(EpochRecord {
            epoch,
            lr: epoch_lr,
            loss,
        });
        if config.epochs - epoch <= 4 {
            outcome.snapshots.push(model.clone());
        }
    }
    Ok(outcome)
}

/// Voxelwise mean of the sliding-window predictions of exactly four
/// snapshots.
pub fn checkpoint_output_average(models: &[ToyModel], input: &Volume, exec: Exec) -> Result<Volume> {
    if models.len() != 4 {
        return Err(Error::Usage(format!(
            "output averaging needs exactly 4 snapshots, got {}",
            models.len()
        )));
    }
    if models.iter().any(|m| m.config != models[0].config) {
        return Err(Error::Usage("snapshots have different architectures".into()));
    }
    let preds = models
        .iter()
        .map(|m| sliding_window_infer(m, input, exec))
        .collect::<Result<Vec<_>>>()?;
    let mut out = preds[0].clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = preds.iter().map(|p| p.data()[i]).sum::<f64>() / 4.0;
    }
    Ok(out)
}
