//! `--key value` overrides. Every config field that makes sense to tweak on
//! the command line has a flag; values given here win over the config file.

use std::path::PathBuf;

use distillery_core::distill::BetaMode;
use distillery_core::models::ModelKind;

use crate::config::{BlobForm, DataSource, RunConfig};

/// Explicit on/off values so a flag can force a boolean in either direction
/// (a bare `--flip` could only ever turn things on).
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn as_bool(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelArg {
    Mlp,
    Convnet,
}

impl From<ModelArg> for ModelKind {
    fn from(value: ModelArg) -> Self {
        match value {
            ModelArg::Mlp => ModelKind::Mlp,
            ModelArg::Convnet => ModelKind::Convnet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BetaArg {
    Equal,
    Scaled,
}

impl From<BetaArg> for BetaMode {
    fn from(value: BetaArg) -> Self {
        match value {
            BetaArg::Equal => BetaMode::Equal,
            BetaArg::Scaled => BetaMode::Scaled,
        }
    }
}

#[derive(Debug, Default, clap::Args)]
pub struct Overrides {
    /// Root seed for every derived random stream.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output root directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker cap for parallel sections (0 = all CPUs).
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,

    /// Where the dataset comes from.
    #[arg(long, value_name = "KIND")]
    pub data_source: Option<DataSource>,
    /// Dataset identity seed (independent of --seed).
    #[arg(long, value_name = "N")]
    pub data_seed: Option<u64>,
    /// Number of classes for generated blobs.
    #[arg(long, value_name = "N")]
    pub classes: Option<usize>,
    /// Samples per class for generated blobs.
    #[arg(long, value_name = "N")]
    pub per_class: Option<usize>,
    /// Blob rendering: flat vectors or 2-D intensity bumps.
    #[arg(long, value_name = "FORM")]
    pub form: Option<BlobForm>,
    /// Vector length for vector blobs.
    #[arg(long, value_name = "N")]
    pub dim: Option<usize>,
    /// Image side for image blobs.
    #[arg(long, value_name = "N")]
    pub size: Option<usize>,
    /// Within-class standard deviation of the blobs.
    #[arg(long, value_name = "X")]
    pub spread: Option<f64>,
    /// Fraction of each class held out for testing.
    #[arg(long, value_name = "X")]
    pub test_fraction: Option<f64>,
    /// IDX image file (training).
    #[arg(long, value_name = "PATH")]
    pub images: Option<PathBuf>,
    /// IDX label file (training).
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    /// IDX image file (test).
    #[arg(long, value_name = "PATH")]
    pub test_images: Option<PathBuf>,
    /// IDX label file (test).
    #[arg(long, value_name = "PATH")]
    pub test_labels: Option<PathBuf>,
    /// CSV dataset file (first column label, rest pixels).
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,

    /// Network family.
    #[arg(long, value_name = "KIND")]
    pub model: Option<ModelArg>,
    /// Hidden layers (MLP) or conv blocks (ConvNet).
    #[arg(long, value_name = "N")]
    pub depth: Option<usize>,
    /// Hidden width (MLP) or channel count (ConvNet).
    #[arg(long, value_name = "N")]
    pub width: Option<usize>,

    /// Number of expert trajectories to train.
    #[arg(long, value_name = "N")]
    pub experts: Option<usize>,
    /// Epochs per expert.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Expert learning rate.
    #[arg(long, value_name = "X")]
    pub eta: Option<f64>,
    /// Expert momentum factor.
    #[arg(long, value_name = "X")]
    pub momentum: Option<f64>,
    /// Expert minibatch size.
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Train experts with the smoothness objective.
    #[arg(long, value_name = "on|off")]
    pub smooth: Option<Toggle>,
    /// Gradient-penalty weight.
    #[arg(long, value_name = "X")]
    pub mu: Option<f64>,
    /// Gradient-norm target.
    #[arg(long, value_name = "X")]
    pub k_target: Option<f64>,
    /// Loss-clipping coefficient at epoch 0.
    #[arg(long, value_name = "X")]
    pub lambda_start: Option<f64>,
    /// Epochs over which the clipping coefficient ramps to 1.
    #[arg(long, value_name = "N")]
    pub ramp_epochs: Option<usize>,

    /// Trajectory directories to distill from.
    #[arg(long, value_name = "DIR", num_args = 1..)]
    pub trajectories: Option<Vec<PathBuf>>,
    /// Matching intervals per outer iteration.
    #[arg(long, value_name = "N")]
    pub intervals: Option<usize>,
    /// Inner student steps per outer iteration.
    #[arg(long, value_name = "N")]
    pub student_steps: Option<usize>,
    /// Highest expert epoch a student may start from.
    #[arg(long, value_name = "N")]
    pub max_start_epoch: Option<usize>,
    /// Synthetic images per class.
    #[arg(long, value_name = "N")]
    pub ipc: Option<usize>,
    /// Weighting of the intermediate matching losses.
    #[arg(long, value_name = "MODE")]
    pub beta: Option<BetaArg>,
    /// Relative radius of the start-weight perturbation.
    #[arg(long, value_name = "X")]
    pub rho: Option<f64>,
    /// Strength of the balanced-loss coefficient.
    #[arg(long, value_name = "X")]
    pub vartheta: Option<f64>,
    /// Initial value of the learnable student learning rate.
    #[arg(long, value_name = "X")]
    pub alpha0: Option<f64>,
    /// Outer distillation iterations.
    #[arg(long, value_name = "N")]
    pub outer_iters: Option<usize>,
    /// Learning rate on the synthetic pixels.
    #[arg(long, value_name = "X")]
    pub image_lr: Option<f64>,
    /// Learning rate on the student learning rate.
    #[arg(long, value_name = "X")]
    pub alpha_lr: Option<f64>,
    /// Scale the inner loss by the balanced coefficient.
    #[arg(long, value_name = "on|off")]
    pub balance: Option<Toggle>,
    /// Match only the final checkpoint of each interval.
    #[arg(long, value_name = "on|off")]
    pub terminal_only: Option<Toggle>,
    /// Distillation seed (derived from --seed when omitted).
    #[arg(long, value_name = "N")]
    pub distill_seed: Option<u64>,
    /// Named ablation preset (available: vanilla-mtt).
    #[arg(long, value_name = "NAME")]
    pub ablate: Option<String>,
    /// Evaluate a snapshot every N outer iterations (0 = never).
    #[arg(long, value_name = "N")]
    pub eval_every: Option<usize>,

    /// Mirror batches horizontally during training.
    #[arg(long, value_name = "on|off")]
    pub flip: Option<Toggle>,
    /// Maximum augmentation shift in pixels.
    #[arg(long, value_name = "N")]
    pub max_shift: Option<usize>,
    /// Augmentation zoom jitter (fraction).
    #[arg(long, value_name = "X")]
    pub scale_jitter: Option<f64>,

    /// Fresh-network seeds for evaluation.
    #[arg(long, value_name = "N", num_args = 1..)]
    pub eval_seeds: Option<Vec<u64>>,
    /// Training iterations per evaluation run.
    #[arg(long, value_name = "N")]
    pub eval_iters: Option<usize>,
    /// Independent draws for the random-subset baseline.
    #[arg(long, value_name = "N")]
    pub subset_draws: Option<usize>,
    /// Learning rate for baseline evaluations.
    #[arg(long, value_name = "X")]
    pub baseline_lr: Option<f64>,
}

macro_rules! set {
    ($cfg:expr, $flag:expr) => {
        if let Some(v) = $flag {
            $cfg = v;
        }
    };
    ($cfg:expr, $flag:expr, $map:expr) => {
        if let Some(v) = $flag {
            $cfg = $map(v);
        }
    };
}

impl Overrides {
    /// Lays the flags over a parsed config file; flag values win.
    pub fn apply(self, cfg: &mut RunConfig) {
        set!(cfg.run.seed, self.seed);
        set!(cfg.run.out, self.out);
        set!(cfg.run.threads, self.threads);

        set!(cfg.data.source, self.data_source);
        set!(cfg.data.seed, self.data_seed);
        set!(cfg.data.classes, self.classes);
        set!(cfg.data.per_class, self.per_class);
        set!(cfg.data.form, self.form);
        set!(cfg.data.dim, self.dim);
        set!(cfg.data.size, self.size);
        set!(cfg.data.spread, self.spread);
        set!(cfg.data.test_fraction, self.test_fraction);
        set!(cfg.data.images, self.images, Some);
        set!(cfg.data.labels, self.labels, Some);
        set!(cfg.data.test_images, self.test_images, Some);
        set!(cfg.data.test_labels, self.test_labels, Some);
        set!(cfg.data.csv, self.csv, Some);

        set!(cfg.model.kind, self.model, ModelKind::from);
        set!(cfg.model.depth, self.depth);
        set!(cfg.model.width, self.width);

        if let Some(n) = self.experts {
            cfg.buffer.experts = n;
            // An explicit count overrides a seed list from the file; the
            // seeds get re-derived during resolution.
            cfg.buffer.expert_seeds.clear();
        }
        set!(cfg.buffer.epochs, self.epochs);
        set!(cfg.buffer.eta, self.eta);
        set!(cfg.buffer.momentum, self.momentum);
        set!(cfg.buffer.batch_size, self.batch_size);
        set!(cfg.buffer.smooth, self.smooth, Toggle::as_bool);
        set!(cfg.buffer.mu, self.mu);
        set!(cfg.buffer.k_target, self.k_target);
        set!(cfg.buffer.lambda_start, self.lambda_start);
        set!(cfg.buffer.ramp_epochs, self.ramp_epochs);

        set!(cfg.distill.trajectories, self.trajectories);
        set!(cfg.distill.intervals, self.intervals);
        set!(cfg.distill.student_steps, self.student_steps);
        set!(cfg.distill.max_start_epoch, self.max_start_epoch);
        set!(cfg.distill.ipc, self.ipc);
        set!(cfg.distill.beta, self.beta, BetaMode::from);
        set!(cfg.distill.rho, self.rho);
        set!(cfg.distill.vartheta, self.vartheta);
        set!(cfg.distill.alpha0, self.alpha0);
        set!(cfg.distill.outer_iters, self.outer_iters);
        set!(cfg.distill.image_lr, self.image_lr);
        set!(cfg.distill.alpha_lr, self.alpha_lr);
        set!(cfg.distill.balance, self.balance, Toggle::as_bool);
        set!(cfg.distill.terminal_only, self.terminal_only, Toggle::as_bool);
        set!(cfg.distill.seed, self.distill_seed, Some);
        set!(cfg.distill.ablate, self.ablate, Some);
        set!(cfg.distill.eval_every, self.eval_every);

        set!(cfg.augment.flip, self.flip, Toggle::as_bool);
        set!(cfg.augment.max_shift, self.max_shift);
        set!(cfg.augment.scale_jitter, self.scale_jitter);

        set!(cfg.eval.seeds, self.eval_seeds);
        set!(cfg.eval.iters, self.eval_iters);
        if let Some(n) = self.subset_draws {
            cfg.eval.subset_draws = n;
            cfg.eval.subset_seeds.clear();
        }
        set!(cfg.eval.baseline_lr, self.baseline_lr, Some);
    }
}
