//! Parameter-efficient fine-tuning workbench.
//!
//! * [`linalg`]: dense matrices, Jacobi SVD, seeded initialization.
//! * [`adapters`]: LoRA, SeqLoRA, CPS, PiSSA and HyPS wrappers around a
//!   frozen linear layer, parameter accounting and checkpoints.
//! * [`autodiff`]: reverse-mode tape, Dice loss, Adam, poly schedule,
//!   augmentation and the training loop.
//! * [`model`]: a small windowed-attention encoder with a pointwise decoder,
//!   synthetic segmentation tasks and sliding-window inference.
//! * [`metrics`]: Dice, HD95, connected-component filtering, volume
//!   measurement and volume file IO.
//! * [`classify`]: RBF-kernel SVM (SMO), stratified cross-validation and
//!   classification reports.
//! * [`experiment`]: pretraining, fine-tuning and held-out evaluation runs
//!   shared by the command line and the acceptance suite.

pub mod adapters;
pub mod autodiff;
pub mod classify;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
pub use exec::Exec;
