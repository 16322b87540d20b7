//! Run configuration: a TOML file with one section per pipeline stage,
//! overridable by command-line flags, resolved into a self-contained record
//! that is echoed next to every command's outputs.

use std::path::{Path, PathBuf};

use distillery_core::augment::AugmentationPolicy;
use distillery_core::buffer::{OptimizerSettings, SmoothnessConfig};
use distillery_core::data::{gen_blobs, load_csv, load_idx, split, BlobShape, LabeledDataset};
use distillery_core::distill::{BetaMode, DistillConfig};
use distillery_core::models::{ModelKind, ModelSpec};
use distillery_core::rng::substream;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub buffer: BufferSection,
    pub distill: DistillSection,
    pub augment: AugmentSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            run: RunSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            buffer: BufferSection::default(),
            distill: DistillSection::default(),
            augment: AugmentSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Root seed; every random stream is a named substream of it.
    pub seed: u64,
    /// Output root; each command writes under its own subdirectory.
    pub out: PathBuf,
    /// Worker cap for per-seed parallelism (0 = number of CPUs).
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, out: PathBuf::from("out"), threads: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    Idx,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BlobForm {
    /// Flat feature vectors of length `dim`.
    Vector,
    /// Smooth single-channel `size × size` intensity bumps.
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Dataset identity seed (independent of run.seed so reruns with a new
    /// root seed still see the same data).
    pub seed: u64,
    pub classes: usize,
    pub per_class: usize,
    pub form: BlobForm,
    /// Vector length when `form = "vector"`.
    pub dim: usize,
    /// Image side when `form = "image"`.
    pub size: usize,
    pub spread: f64,
    pub test_fraction: f64,
    /// IDX training pair.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Optional IDX test pair; without it the training set is split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// CSV file: first column label, remaining columns pixels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// `[c, h, w]` per CSV row; defaults to one flat channel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_shape: Option<Vec<usize>>,
    /// Filled during resolution when the CSV loader rescaled 0–255 input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_autoscaled: Option<bool>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Blobs,
            seed: 11,
            classes: 3,
            per_class: 100,
            form: BlobForm::Vector,
            dim: 6,
            size: 8,
            spread: 0.15,
            test_fraction: 0.25,
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            csv: None,
            csv_shape: None,
            csv_autoscaled: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub depth: usize,
    pub width: usize,
    /// Derived from the dataset when omitted; echoed resolved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: ModelKind::Mlp, depth: 1, width: 12, input_shape: None, classes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferSection {
    /// Number of expert trajectories to train.
    pub experts: usize,
    /// Explicit expert seeds; derived from run.seed when empty.
    pub expert_seeds: Vec<u64>,
    pub epochs: usize,
    pub eta: f64,
    /// Momentum factor γ.
    pub momentum: f64,
    pub batch_size: usize,
    /// Train with the smoothness objective (clipped loss + gradient penalty).
    pub smooth: bool,
    pub mu: f64,
    pub k_target: f64,
    pub lambda_start: f64,
    pub ramp_epochs: usize,
}

impl Default for BufferSection {
    fn default() -> Self {
        Self {
            experts: 2,
            expert_seeds: Vec::new(),
            epochs: 20,
            eta: 0.3,
            momentum: 0.9,
            batch_size: 32,
            smooth: true,
            mu: 1.0,
            k_target: 1.0,
            lambda_start: 0.5,
            ramp_epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    /// Trajectory directories; `{run.out}/buffer/expert_*` when empty.
    pub trajectories: Vec<PathBuf>,
    pub intervals: usize,
    pub student_steps: usize,
    pub max_start_epoch: usize,
    pub ipc: usize,
    pub beta: BetaMode,
    pub rho: f64,
    pub vartheta: f64,
    pub alpha0: f64,
    pub outer_iters: usize,
    pub image_lr: f64,
    pub alpha_lr: f64,
    pub balance: bool,
    pub terminal_only: bool,
    /// Derived from run.seed when omitted; echoed resolved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Named ablation preset; `"vanilla-mtt"` forces ρ=0, ν≡1, terminal-only
    /// matching, and equal β.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablate: Option<String>,
    /// Evaluate a snapshot every this many outer iterations (0 = never).
    pub eval_every: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            trajectories: Vec::new(),
            intervals: d.intervals,
            student_steps: d.student_steps,
            max_start_epoch: d.max_start_epoch,
            ipc: d.ipc,
            beta: d.beta_mode,
            rho: d.rho,
            vartheta: d.vartheta,
            alpha0: d.alpha0,
            outer_iters: d.outer_iters,
            image_lr: d.image_lr,
            alpha_lr: d.alpha_lr,
            balance: d.balance,
            terminal_only: d.terminal_only,
            seed: None,
            ablate: None,
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub flip: bool,
    pub max_shift: usize,
    pub scale_jitter: f64,
    /// Derived from run.seed when omitted; echoed resolved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self { flip: false, max_shift: 0, scale_jitter: 0.0, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Fresh-network seeds; three derived from run.seed when empty.
    pub seeds: Vec<u64>,
    pub iters: usize,
    /// Independent draws for the random-subset baseline.
    pub subset_draws: usize,
    /// Explicit subset seeds; derived from run.seed when empty.
    pub subset_seeds: Vec<u64>,
    /// Learning rate for baselines; distill.alpha0 when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_lr: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            iters: 300,
            subset_draws: 3,
            subset_seeds: Vec::new(),
            baseline_lr: None,
        }
    }
}

fn bad(field: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {detail}"))
}

impl RunConfig {
    /// Parses the file when given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Fills every derived field from the root seed, applies ablation
    /// presets, and validates; the result is what gets echoed.
    pub fn resolve(mut self) -> Result<Self> {
        if self.format_version != FORMAT_VERSION {
            return Err(bad(
                "format_version",
                format!("unsupported version {} (supported: {FORMAT_VERSION})", self.format_version),
            ));
        }

        if let Some(name) = &self.distill.ablate {
            match name.as_str() {
                "vanilla-mtt" => {
                    self.distill.rho = 0.0;
                    self.distill.balance = false;
                    self.distill.terminal_only = true;
                    self.distill.beta = BetaMode::Equal;
                }
                other => {
                    return Err(bad(
                        "distill.ablate",
                        format!("unknown ablation {other:?} (available: \"vanilla-mtt\")"),
                    ))
                }
            }
        }

        let root = self.run.seed;
        if self.buffer.expert_seeds.is_empty() {
            let mut rng = substream(root, "buffer");
            self.buffer.expert_seeds =
                (0..self.buffer.experts).map(|_| u64::from(rng.gen::<u32>())).collect();
        }
        self.buffer.experts = self.buffer.expert_seeds.len();
        if self.distill.seed.is_none() {
            self.distill.seed = Some(u64::from(substream(root, "distill").gen::<u32>()));
        }
        if self.augment.seed.is_none() {
            self.augment.seed = Some(u64::from(substream(root, "augment").gen::<u32>()));
        }
        if self.eval.seeds.is_empty() {
            let mut rng = substream(root, "eval");
            self.eval.seeds = (0..3).map(|_| u64::from(rng.gen::<u32>())).collect();
        }
        if self.eval.subset_seeds.is_empty() {
            let mut rng = substream(root, "eval-subsets");
            self.eval.subset_seeds =
                (0..self.eval.subset_draws).map(|_| u64::from(rng.gen::<u32>())).collect();
        }
        self.eval.subset_draws = self.eval.subset_seeds.len();

        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes < 2 {
            return Err(bad("data.classes", "need at least 2 classes"));
        }
        if d.per_class == 0 {
            return Err(bad("data.per_class", "need at least 1 sample per class"));
        }
        if !d.spread.is_finite() || d.spread < 0.0 {
            return Err(bad("data.spread", format!("must be finite and >= 0, got {}", d.spread)));
        }
        if !d.test_fraction.is_finite() || d.test_fraction <= 0.0 || d.test_fraction >= 1.0 {
            return Err(bad(
                "data.test_fraction",
                format!("must lie in (0, 1), got {}", d.test_fraction),
            ));
        }
        match d.source {
            DataSource::Blobs => {
                if d.form == BlobForm::Vector && d.dim == 0 {
                    return Err(bad("data.dim", "vector blobs need dim >= 1"));
                }
                if d.form == BlobForm::Image && d.size == 0 {
                    return Err(bad("data.size", "image blobs need size >= 1"));
                }
            }
            DataSource::Idx => {
                if d.images.is_none() || d.labels.is_none() {
                    return Err(bad(
                        "data.images/data.labels",
                        "idx source needs both file paths",
                    ));
                }
                if d.test_images.is_some() != d.test_labels.is_some() {
                    return Err(bad(
                        "data.test_images/data.test_labels",
                        "give both test files or neither",
                    ));
                }
            }
            DataSource::Csv => {
                if d.csv.is_none() {
                    return Err(bad("data.csv", "csv source needs a file path"));
                }
                if let Some(shape) = &d.csv_shape {
                    if shape.len() != 3 {
                        return Err(bad(
                            "data.csv_shape",
                            format!("expected [c, h, w], got {shape:?}"),
                        ));
                    }
                }
            }
        }

        let b = &self.buffer;
        if b.expert_seeds.is_empty() {
            return Err(bad("buffer.experts", "need at least 1 expert"));
        }
        if b.epochs == 0 {
            return Err(bad("buffer.epochs", "need at least 1 epoch"));
        }
        if !b.eta.is_finite() || b.eta <= 0.0 {
            return Err(bad("buffer.eta", format!("must be positive, got {}", b.eta)));
        }
        if !(0.0..1.0).contains(&b.momentum) {
            return Err(bad("buffer.momentum", format!("must lie in [0, 1), got {}", b.momentum)));
        }
        if b.batch_size == 0 {
            return Err(bad("buffer.batch_size", "must be >= 1"));
        }
        if !b.mu.is_finite() || b.mu < 0.0 {
            return Err(bad("buffer.mu", format!("must be finite and >= 0, got {}", b.mu)));
        }
        if b.smooth && (!b.k_target.is_finite() || b.k_target <= 0.0) {
            return Err(bad("buffer.k_target", format!("must be positive, got {}", b.k_target)));
        }
        if !(0.5..=1.0).contains(&b.lambda_start) {
            return Err(bad(
                "buffer.lambda_start",
                format!("must lie in [0.5, 1], got {}", b.lambda_start),
            ));
        }

        let s = &self.distill;
        if s.intervals == 0 || s.intervals > s.student_steps {
            return Err(bad(
                "distill.intervals",
                format!("need 1 <= intervals <= student_steps, got {} and {}", s.intervals, s.student_steps),
            ));
        }
        // max_start_epoch + intervals must fit the expert length, but that is
        // checked against the actual loaded trajectories, not buffer.epochs:
        // distillation may consume trajectories from any earlier run.
        if s.ipc == 0 {
            return Err(bad("distill.ipc", "must be >= 1"));
        }
        if !s.rho.is_finite() || s.rho < 0.0 {
            return Err(bad("distill.rho", format!("must be finite and >= 0, got {}", s.rho)));
        }
        if !s.vartheta.is_finite() || s.vartheta <= 1.0 {
            return Err(bad("distill.vartheta", format!("must exceed 1, got {}", s.vartheta)));
        }
        if !s.alpha0.is_finite() || s.alpha0 <= 0.0 {
            return Err(bad("distill.alpha0", format!("must be positive, got {}", s.alpha0)));
        }

        let a = &self.augment;
        if !(0.0..1.0).contains(&a.scale_jitter) {
            return Err(bad(
                "augment.scale_jitter",
                format!("must lie in [0, 1), got {}", a.scale_jitter),
            ));
        }

        let e = &self.eval;
        if e.seeds.len() < 3 {
            return Err(bad("eval.seeds", format!("need at least 3 seeds, got {}", e.seeds.len())));
        }
        if e.iters == 0 {
            return Err(bad("eval.iters", "must be >= 1"));
        }
        if e.subset_seeds.is_empty() {
            return Err(bad("eval.subset_draws", "need at least 1 subset draw"));
        }
        if let Some(lr) = e.baseline_lr {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(bad("eval.baseline_lr", format!("must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn echo_to(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("could not serialize config: {e}")))?;
        let path = dir.join(ECHO_FILE);
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    /// Loads (or generates) the dataset and returns the train/test pair.
    pub fn load_dataset(&self) -> Result<(LabeledDataset, LabeledDataset, Option<String>)> {
        let d = &self.data;
        match d.source {
            DataSource::Blobs => {
                let shape = match d.form {
                    BlobForm::Vector => BlobShape::Vector(d.dim),
                    BlobForm::Image => BlobShape::Image(d.size),
                };
                let all = gen_blobs(d.classes, d.per_class, shape, d.spread, d.seed)?;
                let (train, test) = split(&all, d.test_fraction, d.seed)?;
                Ok((train, test, None))
            }
            DataSource::Idx => {
                let images = d.images.as_ref().expect("validated");
                let labels = d.labels.as_ref().expect("validated");
                let train_all = load_idx(images, labels)?;
                match (&d.test_images, &d.test_labels) {
                    (Some(ti), Some(tl)) => {
                        let test = load_idx(ti, tl)?;
                        Ok((train_all, test, None))
                    }
                    _ => {
                        let (train, test) = split(&train_all, d.test_fraction, d.seed)?;
                        Ok((train, test, None))
                    }
                }
            }
            DataSource::Csv => {
                let path = d.csv.as_ref().expect("validated");
                let shape = d.csv_shape.as_ref().map(|s| [s[0], s[1], s[2]]);
                let (all, autoscaled) = load_csv(path, shape)?;
                let (train, test) = split(&all, d.test_fraction, d.seed)?;
                let note = autoscaled
                    .then(|| format!("{}: pixel values rescaled from 0-255", path.display()));
                Ok((train, test, note))
            }
        }
    }

    /// The model specification, with input shape and class count taken from
    /// the dataset unless the config pins them (in which case they must
    /// agree with the data).
    pub fn spec_for(&self, train: &LabeledDataset) -> Result<ModelSpec> {
        let dims = train.images.shape();
        let (c, h, w) = (dims[1], dims[2], dims[3]);
        let derived: Vec<usize> = if self.model.kind == ModelKind::Mlp && c == 1 && h == 1 {
            vec![w]
        } else {
            vec![c, h, w]
        };
        let input_shape = match &self.model.input_shape {
            None => derived,
            Some(given) => {
                let given_numel: usize = given.iter().product();
                if given_numel != c * h * w {
                    return Err(bad(
                        "model.input_shape",
                        format!(
                            "{given:?} has {given_numel} values but each sample has {}",
                            c * h * w
                        ),
                    ));
                }
                given.clone()
            }
        };
        let classes = match self.model.classes {
            None => train.class_count,
            Some(given) => {
                if given != train.class_count {
                    return Err(bad(
                        "model.classes",
                        format!("config says {given} but the dataset has {}", train.class_count),
                    ));
                }
                given
            }
        };
        let spec = ModelSpec {
            kind: self.model.kind,
            depth: self.model.depth,
            width: self.model.width,
            input_shape,
            num_classes: classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_optimizer(&self) -> OptimizerSettings {
        OptimizerSettings {
            eta: self.buffer.eta,
            gamma: self.buffer.momentum,
            batch_size: self.buffer.batch_size,
        }
    }

    pub fn to_smoothness(&self) -> SmoothnessConfig {
        if self.buffer.smooth {
            SmoothnessConfig {
                mu: self.buffer.mu,
                k_target: self.buffer.k_target,
                lambda_start: self.buffer.lambda_start,
                ramp_epochs: self.buffer.ramp_epochs,
            }
        } else {
            SmoothnessConfig::disabled()
        }
    }

    pub fn to_policy(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            flip: self.augment.flip,
            max_shift: self.augment.max_shift,
            scale_jitter: self.augment.scale_jitter,
            seed: self.augment.seed.expect("config resolved"),
        }
    }

    pub fn to_distill_config(&self) -> DistillConfig {
        let s = &self.distill;
        DistillConfig {
            intervals: s.intervals,
            student_steps: s.student_steps,
            max_start_epoch: s.max_start_epoch,
            ipc: s.ipc,
            beta_mode: s.beta,
            rho: s.rho,
            vartheta: s.vartheta,
            alpha0: s.alpha0,
            outer_iters: s.outer_iters,
            image_lr: s.image_lr,
            alpha_lr: s.alpha_lr,
            balance: s.balance,
            terminal_only: s.terminal_only,
            policy: self.to_policy(),
            seed: s.seed.expect("config resolved"),
        }
    }

    /// Worker count for `jobs` independent tasks: the smallest of the job
    /// count, run.threads (when set), the TOOL_THREADS environment cap, and
    /// the machine's CPU count.
    pub fn effective_threads(&self, jobs: usize) -> Result<usize> {
        let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut cap = if self.run.threads > 0 { self.run.threads.min(cpus) } else { cpus };
        if let Ok(raw) = std::env::var("TOOL_THREADS") {
            let env_cap: usize = raw.parse().map_err(|_| {
                CliError::Config(format!("TOOL_THREADS must be a positive integer, got {raw:?}"))
            })?;
            if env_cap == 0 {
                return Err(CliError::Config("TOOL_THREADS must be >= 1".into()));
            }
            cap = cap.min(env_cap);
        }
        Ok(cap.min(jobs).max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn resolved_config_round_trips_and_is_stable() {
        let resolved = RunConfig::default().resolve().unwrap();
        assert_eq!(resolved.buffer.expert_seeds.len(), resolved.buffer.experts);
        assert!(resolved.distill.seed.is_some());
        assert_eq!(resolved.eval.seeds.len(), 3);

        let text = toml::to_string_pretty(&resolved).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(resolved, back);

        // Resolving an already-resolved config changes nothing.
        let again = back.resolve().unwrap();
        assert_eq!(resolved, again);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = toml::from_str::<RunConfig>("[buffer]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn vanilla_ablation_forces_the_baseline_switches() {
        let mut cfg = RunConfig::default();
        cfg.distill.ablate = Some("vanilla-mtt".into());
        cfg.distill.rho = 0.3;
        cfg.distill.balance = true;
        cfg.distill.terminal_only = false;
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.distill.rho, 0.0);
        assert!(!resolved.distill.balance);
        assert!(resolved.distill.terminal_only);
        assert_eq!(resolved.distill.ablate.as_deref(), Some("vanilla-mtt"));
    }

    #[test]
    fn unknown_ablation_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.distill.ablate = Some("nope".into());
        let err = cfg.resolve().unwrap_err();
        assert_eq!(err.code(), 2);
        assert!(err.to_string().contains("distill.ablate"));
    }

    #[test]
    fn validation_errors_carry_field_paths() {
        let mut cfg = RunConfig::default();
        cfg.buffer.eta = -1.0;
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().starts_with("buffer.eta"), "{err}");

        let mut cfg = RunConfig::default();
        cfg.distill.vartheta = 1.0;
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().starts_with("distill.vartheta"), "{err}");
    }
}
