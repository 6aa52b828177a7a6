use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hyps", version, about = "Parameter-efficient fine-tuning workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a base model on synthetic task A.
    Pretrain(PretrainArgs),
    /// Attach adapters to a base model and fine-tune on task B.
    Finetune(FinetuneArgs),
    /// Fine-tune every (variant, rank) pair and tabulate held-out scores.
    RankSweep(RankSweepArgs),
    /// Score prediction volumes against reference volumes.
    Eval(EvalArgs),
    /// Remove small connected components from a mask.
    Postprocess(PostprocessArgs),
    /// Cross-validated SVM diagnosis from a subject table.
    Classify(ClassifyArgs),
    /// Write synthetic inputs.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice of the run.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run data-parallel loops on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PretrainOpts {
    /// Task-A volumes used for pretraining.
    #[arg(long, default_value_t = 200)]
    pub pretrain_n: usize,
    #[arg(long, default_value_t = 8)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub pretrain_lr: f64,
    /// Token width of a freshly pretrained model.
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub opts: PretrainOpts,
}

#[derive(Debug, Clone, Args)]
pub struct FinetuneOpts {
    /// Existing base checkpoint.
    #[arg(long, conflicts_with = "pretrain")]
    pub base: Option<PathBuf>,
    /// Pretrain a base model on task A first.
    #[arg(long)]
    pub pretrain: bool,
    #[command(flatten)]
    pub pretrain_opts: PretrainOpts,
    /// Task-B training volumes.
    #[arg(long, default_value_t = 10)]
    pub train_n: usize,
    /// Held-out task-B volumes.
    #[arg(long, default_value_t = 50)]
    pub heldout_n: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub opts: FinetuneOpts,
    /// full, linear-probe, lora, seqlora, pissa, cps or hyps.
    #[arg(long)]
    pub variant: String,
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
}

#[derive(Debug, Args)]
pub struct RankSweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub opts: FinetuneOpts,
    #[arg(long, value_delimiter = ',', default_value = "lora,seqlora,pissa,cps,hyps")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    pub ranks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction volumes or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    pub pred: Vec<PathBuf>,
    /// Reference volumes or directories, paired with `--pred` in order.
    #[arg(long, num_args = 1.., required = true)]
    pub gt: Vec<PathBuf>,
    /// Drop prediction components smaller than this many voxels first.
    #[arg(long, num_args = 0..=1, default_missing_value = "1000")]
    pub filter_cc: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub min_voxels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated subject table.
    #[arg(long)]
    pub subjects: PathBuf,
    /// ad-cn or emci-lmci.
    #[arg(long, default_value = "ad-cn")]
    pub task: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Image/label volume pairs from task A or B.
    Volumes(SynthVolumesArgs),
    /// A subject table with separated class volume means.
    Cohort(SynthCohortArgs),
}

#[derive(Debug, Args)]
pub struct SynthVolumesArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "B")]
    pub task: String,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct SynthCohortArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "ad-cn")]
    pub task: String,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 2.28)]
    pub positive_mean: f64,
    #[arg(long, default_value_t = 2.70)]
    pub negative_mean: f64,
    #[arg(long, default_value_t = 0.15)]
    pub std: f64,
    /// Shuffle diagnoses to remove the signal.
    #[arg(long)]
    pub permute: bool,
}
