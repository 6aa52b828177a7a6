//! Reverse-mode differentiation and the training engine.

mod augment;
mod loss;
mod optim;
mod tape;
mod train;

pub use augment::{augment, flip_mask, flip_volume, AugmentParams};
pub use loss::{dice_loss, DICE_EPS};
pub use optim::{adam_step, poly_lr, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{Gradients, Tape, Var};
pub use train::{
    checkpoint_output_average, history_csv, sample_gradients, train, EpochRecord, ParamPartition, TrainConfig,
    TrainOutcome,
};
