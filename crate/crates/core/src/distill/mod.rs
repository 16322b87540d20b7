//! Student parameter alignment: learning the synthetic dataset.
//!
//! Each outer iteration samples an expert trajectory and a start epoch,
//! perturbs the expert weights per filter, trains a student on the synthetic
//! set for `N` plain-SGD steps with a learnable rate α, measures
//! distance-normalized matching losses against later expert checkpoints at
//! scheduled intermediate steps, and meta-differentiates the weighted sum of
//! those losses back to the synthetic pixels and α.

pub mod kmeans;

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentationPolicy};
use crate::container::{self, Record, RAW_KIND};
use crate::data::{LabeledDataset, SyntheticDataset};
use crate::error::{Error, Result};
use crate::graph::{ops, Graph, Var};
use crate::models::{param_distance_sq, ModelSpec, ParamVector};
use crate::rng::{standard_normal, substream, substream_indexed};
use crate::tensor::Tensor;

/// Lower projection bound for the learnable inner-loop rate α.
pub const ALPHA_FLOOR: f64 = 1e-8;

/// Weighting of the scheduled matching losses in the final outer loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// Every matching point weighs 1.
    Equal,
    /// The i-th of M points weighs i/M (later points count more).
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// M: expert epochs spanned between start and final target.
    pub intervals: usize,
    /// N: inner SGD steps the student takes per outer iteration.
    pub student_steps: usize,
    /// T₊: largest expert epoch a student may start from.
    pub max_start_epoch: usize,
    /// Synthetic images per class.
    pub ipc: usize,
    pub beta_mode: BetaMode,
    /// Weight-perturbation scale ρ (0 disables perturbation).
    pub rho: f64,
    /// ϑ inside the balance coefficient's logarithm.
    pub vartheta: f64,
    /// Initial value of the learnable inner-loop rate α.
    pub alpha0: f64,
    pub outer_iters: usize,
    /// Outer gradient-descent rate for the synthetic pixels.
    pub image_lr: f64,
    /// Outer gradient-descent rate for α.
    pub alpha_lr: f64,
    /// Scale the inner loss by the start-epoch balance coefficient ν.
    pub balance: bool,
    /// Keep only the terminal matching point (ablation switch).
    pub terminal_only: bool,
    pub policy: AugmentationPolicy,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            intervals: 2,
            student_steps: 20,
            max_start_epoch: 4,
            ipc: 1,
            beta_mode: BetaMode::Equal,
            rho: 0.1,
            vartheta: 8.0,
            alpha0: 0.05,
            outer_iters: 200,
            image_lr: 0.5,
            alpha_lr: 0.01,
            balance: true,
            terminal_only: false,
            policy: AugmentationPolicy::default(),
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intervals == 0 {
            return Err(Error::InvalidConfig("intervals must be >= 1".into()));
        }
        if self.intervals > self.student_steps {
            return Err(Error::InvalidConfig(format!(
                "intervals ({}) must not exceed student steps ({})",
                self.intervals, self.student_steps
            )));
        }
        if self.ipc == 0 {
            return Err(Error::InvalidConfig("ipc must be >= 1".into()));
        }
        if self.ipc > 10 && !self.ipc.is_multiple_of(10) {
            return Err(Error::InvalidConfig(format!(
                "ipc above 10 must be a multiple of 10 (sub-cluster rule), got {}",
                self.ipc
            )));
        }
        if self.rho < 0.0 {
            return Err(Error::InvalidConfig(format!("rho must be >= 0, got {}", self.rho)));
        }
        if self.vartheta <= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "vartheta must be > 1 to keep its log positive, got {}",
                self.vartheta
            )));
        }
        if self.alpha0 <= 0.0 {
            return Err(Error::InvalidConfig(format!("alpha0 must be > 0, got {}", self.alpha0)));
        }
        if self.image_lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("image_lr must be > 0, got {}", self.image_lr)));
        }
        if self.alpha_lr < 0.0 {
            return Err(Error::InvalidConfig(format!("alpha_lr must be >= 0, got {}", self.alpha_lr)));
        }
        self.policy.validate()
    }

    /// Checks this config can be run against an expert with `epochs`
    /// recorded training epochs.
    pub fn check_expert_epochs(&self, epochs: usize) -> Result<()> {
        if self.max_start_epoch + self.intervals > epochs {
            return Err(Error::InvalidConfig(format!(
                "max start epoch {} + intervals {} exceeds expert epoch count {}",
                self.max_start_epoch, self.intervals, epochs
            )));
        }
        Ok(())
    }
}

/// One scheduled comparison: after `student_step` inner updates, match the
/// expert checkpoint `expert_offset` epochs past the start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchPoint {
    pub student_step: usize,
    pub expert_offset: usize,
}

/// Evenly spaced matching points: student steps ⌊i·N/M⌋ against expert
/// offsets i for i = 1..M, the terminal (N, M) included.
pub fn match_schedule(student_steps: usize, intervals: usize) -> Result<Vec<MatchPoint>> {
    if intervals == 0 || intervals > student_steps {
        return Err(Error::InvalidConfig(format!(
            "schedule needs 1 <= intervals <= student steps, got {intervals} and {student_steps}"
        )));
    }
    let mut points: Vec<MatchPoint> = (1..intervals)
        .map(|i| MatchPoint { student_step: i * student_steps / intervals, expert_offset: i })
        .collect();
    points.push(MatchPoint { student_step: student_steps, expert_offset: intervals });
    Ok(points)
}

fn active_schedule(cfg: &DistillConfig) -> Result<Vec<MatchPoint>> {
    if cfg.terminal_only {
        Ok(vec![MatchPoint { student_step: cfg.student_steps, expert_offset: cfg.intervals }])
    } else {
        match_schedule(cfg.student_steps, cfg.intervals)
    }
}

fn beta_weight(mode: BetaMode, expert_offset: usize, intervals: usize) -> f64 {
    match mode {
        BetaMode::Equal => 1.0,
        BetaMode::Scaled => expert_offset as f64 / intervals as f64,
    }
}

/// Start-epoch balance coefficient ν: grows logarithmically above the
/// midpoint T₊/2 and shrinks reciprocally below it.
pub fn balance_coefficient(start: usize, max_start: usize, vartheta: f64) -> f64 {
    let mid = max_start as f64 / 2.0;
    let s = start as f64;
    if s >= mid {
        (s - mid + vartheta).ln()
    } else {
        1.0 / (mid - s + vartheta).ln()
    }
}

/// ν·CE(student(augment(images)), labels) — the per-step inner objective.
pub fn inner_loss(
    spec: &ModelSpec,
    student: &[Var],
    images: &Var,
    labels: &[usize],
    policy: &AugmentationPolicy,
    step_index: u64,
    nu: f64,
) -> Result<Var> {
    let x = augment(images, policy, step_index)?;
    let out = crate::models::forward(spec, student, &x)?;
    let (mean_ce, _) = ops::cross_entropy(&out.logits, labels)?;
    mean_ce.mul_scalar(nu)
}

/// ‖θ̂ − θ*_target‖² / ‖θ*_start − θ*_target‖², with the student tracked
/// in-graph and both expert checkpoints constant.
pub fn matching_loss(
    graph: &Graph,
    student: &[Var],
    start: &ParamVector,
    target: &ParamVector,
) -> Result<Var> {
    if student.len() != target.layout().records.len() {
        return Err(Error::LayoutMismatch(format!(
            "student has {} parameter groups, target layout has {}",
            student.len(),
            target.layout().records.len()
        )));
    }
    let denominator = param_distance_sq(start, target)?;
    if denominator == 0.0 {
        return Err(Error::NumericalAbort {
            phase: "matching_loss".into(),
            detail: "degenerate expert segment: start and target checkpoints coincide".into(),
        });
    }
    let mut numerator: Option<Var> = None;
    for (i, var) in student.iter().enumerate() {
        let diff = var.sub(&graph.var(target.record_tensor(i))?)?;
        let term = diff.mul(&diff)?.sum()?;
        numerator = Some(match numerator {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    numerator
        .ok_or_else(|| Error::LayoutMismatch("empty parameter layout".into()))?
        .mul_scalar(1.0 / denominator)
}

/// Adds per-filter Gaussian noise rescaled to each filter's Frobenius norm:
/// θ* = θ + ρ·d with ‖d_filter‖_F = ‖θ_filter‖_F. Zero-norm filters stay
/// untouched; ρ = 0 returns the input unchanged.
pub fn perturb_weights(
    params: &ParamVector,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ParamVector> {
    if rho < 0.0 {
        return Err(Error::InvalidConfig(format!("rho must be >= 0, got {rho}")));
    }
    if rho == 0.0 {
        return Ok(params.clone());
    }
    let layout = params.layout().clone();
    let mut flat = params.flat().data().to_vec();
    for record in &layout.records {
        let span = &mut flat[record.offset..record.offset + record.numel()];
        for filter in span.chunks_mut(record.filter_len()) {
            let target_norm = filter.iter().map(|x| x * x).sum::<f64>().sqrt();
            let noise: Vec<f64> = filter.iter().map(|_| standard_normal(rng)).collect();
            if target_norm == 0.0 {
                continue;
            }
            let noise_norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
            if noise_norm == 0.0 {
                continue;
            }
            let scale = rho * target_norm / noise_norm;
            for (dst, d) in filter.iter_mut().zip(&noise) {
                *dst += scale * d;
            }
        }
    }
    ParamVector::from_flat(layout, Tensor::new(vec![flat.len()], flat)?)
}

/// Everything one outer iteration produces before the synthetic update.
#[derive(Debug, Clone)]
pub struct OuterStepOutput {
    /// d L̂ / d pixels, same shape as the synthetic image tensor.
    pub image_grad: Tensor,
    /// d L̂ / d α.
    pub alpha_grad: f64,
    /// L̂ = Σ β_i · L_i.
    pub total_loss: f64,
    /// The scheduled matching losses L_i, in schedule order.
    pub point_losses: Vec<f64>,
    /// Balance coefficient applied to every inner step this iteration.
    pub nu: f64,
    /// Inner-loop loss value at each of the N steps.
    pub inner_losses: Vec<f64>,
}

/// Unrolls the student and meta-differentiates the matching objective with
/// respect to the synthetic pixels and α.
pub fn outer_step(
    traj: &crate::buffer::Trajectory,
    start_epoch: usize,
    perturbed_start: &ParamVector,
    syn: &SyntheticDataset,
    cfg: &DistillConfig,
    outer_iter: u64,
) -> Result<OuterStepOutput> {
    if start_epoch + cfg.intervals > traj.epochs() {
        return Err(Error::InvalidConfig(format!(
            "start epoch {} + intervals {} exceeds trajectory with {} epochs",
            start_epoch,
            cfg.intervals,
            traj.epochs()
        )));
    }
    let schedule = active_schedule(cfg)?;
    let nu = if cfg.balance {
        balance_coefficient(start_epoch, cfg.max_start_epoch, cfg.vartheta)
    } else {
        1.0
    };

    let graph = Graph::higher_order();
    let images_var = graph.var(syn.images.clone())?;
    let alpha_var = graph.var(Tensor::scalar(syn.alpha))?;
    let mut student = perturbed_start.to_graph_vars(&graph)?;

    let mut total: Option<Var> = None;
    let mut point_losses = Vec::with_capacity(schedule.len());
    let mut inner_losses = Vec::with_capacity(cfg.student_steps);
    for n in 1..=cfg.student_steps {
        let step_index = outer_iter * cfg.student_steps as u64 + (n as u64 - 1);
        let loss = inner_loss(
            &traj.spec,
            &student,
            &images_var,
            &syn.labels,
            &cfg.policy,
            step_index,
            nu,
        )?;
        inner_losses.push(loss.scalar_value()?);
        let grads = graph.grad(&loss, &student)?;
        student = student
            .iter()
            .zip(&grads)
            .map(|(theta, g)| theta.sub(&ops::scale_by(&alpha_var, g)?))
            .collect::<Result<Vec<_>>>()?;

        for point in schedule.iter().filter(|p| p.student_step == n) {
            let target = &traj.checkpoints[start_epoch + point.expert_offset];
            let term = matching_loss(&graph, &student, perturbed_start, target)?;
            point_losses.push(term.scalar_value()?);
            let weighted =
                term.mul_scalar(beta_weight(cfg.beta_mode, point.expert_offset, cfg.intervals))?;
            total = Some(match total {
                Some(acc) => acc.add(&weighted)?,
                None => weighted,
            });
        }
    }
    let total = total.expect("schedule always contains the terminal point");
    let total_loss = total.scalar_value()?;
    let meta = graph.grad(&total, &[images_var, alpha_var.clone()])?;
    Ok(OuterStepOutput {
        image_grad: meta[0].value().clone(),
        alpha_grad: meta[1].scalar_value()?,
        total_loss,
        point_losses,
        nu,
        inner_losses,
    })
}

/// One row of the distillation run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub iteration: usize,
    pub trajectory: usize,
    pub start_epoch: usize,
    pub nu: f64,
    /// Scheduled matching losses, schedule order; empty on skipped rows.
    pub point_losses: Vec<f64>,
    pub total_loss: f64,
    pub alpha: f64,
    pub image_grad_norm: f64,
    pub alpha_grad: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
}

impl RunLog {
    pub const CSV_HEADER: &'static str =
        "iteration,trajectory,start_epoch,nu,point_losses,total_loss,alpha,image_grad_norm,alpha_grad,skipped";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let points = row
                .point_losses
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                row.iteration,
                row.trajectory,
                row.start_epoch,
                row.nu,
                points,
                row.total_loss,
                row.alpha,
                row.image_grad_norm,
                row.alpha_grad,
                row.skipped
            ));
        }
        out
    }
}

/// Picks the real samples nearest (in the expert's feature space) to
/// per-class k-means centroids, and pairs them with the initial α.
pub fn representative_init(
    data: &LabeledDataset,
    traj: &crate::buffer::Trajectory,
    ipc: usize,
    alpha0: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    data.validate()?;
    if ipc == 0 {
        return Err(Error::InvalidConfig("ipc must be >= 1".into()));
    }
    if ipc > 10 && !ipc.is_multiple_of(10) {
        return Err(Error::InvalidConfig(format!(
            "ipc above 10 must be a multiple of 10 (sub-cluster rule), got {ipc}"
        )));
    }
    if alpha0 <= 0.0 {
        return Err(Error::InvalidConfig(format!("alpha0 must be > 0, got {alpha0}")));
    }
    let extractor = traj.checkpoints.last().ok_or_else(|| {
        Error::InvalidConfig("trajectory has no checkpoints".into())
    })?;
    let features = feature_matrix(&traj.spec, extractor, &data.images)?;
    let feat_dim = traj.spec.feature_dim();

    let (clusters, per_cluster) = if ipc <= 10 { (ipc, 1) } else { (10, ipc / 10) };
    let mut seed_rng = substream(seed, "repr-init");
    let mut picked_rows: Vec<usize> = Vec::with_capacity(ipc * data.class_count);
    let mut labels = Vec::with_capacity(ipc * data.class_count);

    for class in 0..data.class_count {
        let members = data.class_indices(class);
        if members.len() < ipc {
            return Err(Error::Dataset(format!(
                "class {class} has {} samples, fewer than ipc = {ipc}",
                members.len()
            )));
        }
        let class_features: Vec<f64> = members
            .iter()
            .flat_map(|&i| features[i * feat_dim..(i + 1) * feat_dim].iter().copied())
            .collect();
        let points = Tensor::new(vec![members.len(), feat_dim], class_features)?;
        let class_seed: u64 = seed_rng.gen();
        let result = kmeans::kmeans(&points, clusters, class_seed, 100)?;

        let mut used: HashSet<usize> = HashSet::new();
        for c in 0..clusters {
            let centroid = &result.centroids.data()[c * feat_dim..(c + 1) * feat_dim];
            let mut ranked: Vec<(f64, usize)> = (0..members.len())
                .map(|m| {
                    let row = &points.data()[m * feat_dim..(m + 1) * feat_dim];
                    let d: f64 = row.iter().zip(centroid).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, m)
                })
                .collect();
            ranked.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
            let mut taken = 0;
            for (_, m) in ranked {
                if taken == per_cluster {
                    break;
                }
                if used.insert(m) {
                    picked_rows.push(members[m]);
                    labels.push(class);
                    taken += 1;
                }
            }
            if taken < per_cluster {
                return Err(Error::Dataset(format!(
                    "class {class} ran out of distinct samples for cluster {c}"
                )));
            }
        }
    }

    let gathered = data.gather(&picked_rows)?;
    Ok(SyntheticDataset { images: gathered.images, labels, alpha: alpha0 })
}

/// Feature-tap activations (pre-classifier) for every sample, row-major.
fn feature_matrix(spec: &ModelSpec, params: &ParamVector, images: &Tensor) -> Result<Vec<f64>> {
    let n = images.shape()[0];
    let sample = images.numel() / n;
    let feat_dim = spec.feature_dim();
    let mut out = Vec::with_capacity(n * feat_dim);
    for chunk_start in (0..n).step_by(256) {
        let count = (n - chunk_start).min(256);
        let mut shape = images.shape().to_vec();
        shape[0] = count;
        let slice =
            images.data()[chunk_start * sample..(chunk_start + count) * sample].to_vec();
        let graph = Graph::first_order();
        let batch = graph.var(Tensor::new(shape, slice)?)?;
        let vars = params.to_graph_vars(&graph)?;
        let fwd = crate::models::forward(spec, &vars, &batch)?;
        out.extend_from_slice(fwd.features.value().data());
    }
    Ok(out)
}

/// Runs the outer loop, mutating a copy of `syn`. Iterations whose
/// meta-gradients come out non-finite are skipped and logged; more than 10%
/// skipped aborts the run.
pub fn run_distillation(
    trajectories: &[crate::buffer::Trajectory],
    syn: SyntheticDataset,
    cfg: &DistillConfig,
) -> Result<(SyntheticDataset, RunLog)> {
    run_distillation_with(trajectories, syn, cfg, |_, _, _| {})
}

/// [`run_distillation`] with an observer called after every outer iteration
/// (skipped ones included). The observer sees the current synthetic state and
/// the row just logged; it cannot influence the run, so snapshot consumers
/// (periodic evaluation, progress output) never perturb the result.
pub fn run_distillation_with(
    trajectories: &[crate::buffer::Trajectory],
    syn: SyntheticDataset,
    cfg: &DistillConfig,
    mut observe: impl FnMut(usize, &SyntheticDataset, &RunRow),
) -> Result<(SyntheticDataset, RunLog)> {
    cfg.validate()?;
    syn.validate()?;
    if trajectories.is_empty() {
        return Err(Error::InvalidConfig("need at least one expert trajectory".into()));
    }
    let spec = &trajectories[0].spec;
    for traj in trajectories {
        if traj.spec != *spec {
            return Err(Error::InvalidConfig(
                "expert trajectories disagree on the model architecture".into(),
            ));
        }
        cfg.check_expert_epochs(traj.epochs())?;
    }
    let sample_numel: usize = syn.images.numel() / syn.images.shape()[0];
    if sample_numel != spec.input_numel() {
        return Err(Error::InvalidConfig(format!(
            "synthetic sample has {sample_numel} values but the model expects {}",
            spec.input_numel()
        )));
    }

    let mut syn = syn;
    let mut log = RunLog::default();
    let mut skipped = 0usize;
    for iter in 0..cfg.outer_iters {
        let mut pick_rng = substream_indexed(cfg.seed, "distill-start", iter as u64);
        let traj_idx = pick_rng.gen_range(0..trajectories.len());
        let start_epoch = pick_rng.gen_range(0..=cfg.max_start_epoch);
        let traj = &trajectories[traj_idx];

        let mut perturb_rng = substream_indexed(cfg.seed, "perturb", iter as u64);
        let perturbed = perturb_weights(&traj.checkpoints[start_epoch], cfg.rho, &mut perturb_rng)?;

        let outcome = outer_step(traj, start_epoch, &perturbed, &syn, cfg, iter as u64);
        let output = match outcome {
            Ok(out)
                if out.image_grad.all_finite()
                    && out.alpha_grad.is_finite()
                    && out.total_loss.is_finite() =>
            {
                out
            }
            Ok(_) | Err(Error::NonFinite(_)) => {
                skipped += 1;
                log.rows.push(RunRow {
                    iteration: iter,
                    trajectory: traj_idx,
                    start_epoch,
                    nu: f64::NAN,
                    point_losses: Vec::new(),
                    total_loss: f64::NAN,
                    alpha: syn.alpha,
                    image_grad_norm: f64::NAN,
                    alpha_grad: f64::NAN,
                    skipped: true,
                });
                observe(iter, &syn, log.rows.last().expect("row was just pushed"));
                if skipped * 10 > cfg.outer_iters {
                    return Err(Error::NumericalAbort {
                        phase: "distillation".into(),
                        detail: format!(
                            "{skipped} of {} outer iterations produced non-finite meta-gradients",
                            cfg.outer_iters
                        ),
                    });
                }
                continue;
            }
            Err(other) => return Err(other),
        };

        let grad_norm = output.image_grad.data().iter().map(|g| g * g).sum::<f64>().sqrt();
        syn.images = syn
            .images
            .zip(&output.image_grad, |x, g| (x - cfg.image_lr * g).clamp(0.0, 1.0))?;
        syn.alpha = (syn.alpha - cfg.alpha_lr * output.alpha_grad).max(ALPHA_FLOOR);

        log.rows.push(RunRow {
            iteration: iter,
            trajectory: traj_idx,
            start_epoch,
            nu: output.nu,
            point_losses: output.point_losses,
            total_loss: output.total_loss,
            alpha: syn.alpha,
            image_grad_norm: grad_norm,
            alpha_grad: output.alpha_grad,
            skipped: false,
        });
        observe(iter, &syn, log.rows.last().expect("row was just pushed"));
    }
    Ok((syn, log))
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsFile {
    class_count: usize,
    sha256: String,
    labels: Vec<usize>,
}

pub const SYNTHETIC_FILE: &str = "synthetic.bin";
pub const LABELS_FILE: &str = "labels.json";
pub const RUN_LOG_FILE: &str = "run_log.csv";
pub const CONFIG_FILE: &str = "config.json";

/// Writes a synthetic dataset directory: binary tensors, labels (with the
/// tensor file's checksum), the resolved config, and the run log.
pub fn save_synthetic(
    dir: &Path,
    syn: &SyntheticDataset,
    cfg: &DistillConfig,
    log: &RunLog,
) -> Result<()> {
    syn.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let records = vec![
        Record {
            name: "images".into(),
            kind: RAW_KIND,
            shape: syn.images.shape().to_vec(),
            data: syn.images.data().to_vec(),
        },
        Record { name: "alpha".into(), kind: RAW_KIND, shape: vec![], data: vec![syn.alpha] },
    ];
    let sha = container::write(&dir.join(SYNTHETIC_FILE), &records)?;

    let class_count = syn.labels.iter().max().map_or(0, |m| m + 1);
    let labels = LabelsFile { class_count, sha256: sha, labels: syn.labels.clone() };
    write_json(&dir.join(LABELS_FILE), &labels)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let log_path = dir.join(RUN_LOG_FILE);
    std::fs::write(&log_path, log.to_csv()).map_err(|e| Error::io(log_path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Reads a synthetic dataset directory back, verifying the checksum.
pub fn load_synthetic(dir: &Path) -> Result<(SyntheticDataset, DistillConfig)> {
    let labels: LabelsFile = read_json(&dir.join(LABELS_FILE))?;
    let cfg: DistillConfig = read_json(&dir.join(CONFIG_FILE))?;
    let bin_path = dir.join(SYNTHETIC_FILE);
    let records = container::read_verified(&bin_path, &labels.sha256)?;

    let find = |name: &str| -> Result<&Record> {
        records.iter().find(|r| r.name == name).ok_or_else(|| Error::Malformed {
            path: bin_path.display().to_string(),
            detail: format!("missing record {name:?}"),
        })
    };
    let images_rec = find("images")?;
    let alpha_rec = find("alpha")?;
    if alpha_rec.data.len() != 1 {
        return Err(Error::Malformed {
            path: bin_path.display().to_string(),
            detail: format!("alpha record holds {} values, expected 1", alpha_rec.data.len()),
        });
    }
    if let Some(&bad) = labels.labels.iter().find(|&&l| l >= labels.class_count) {
        return Err(Error::Malformed {
            path: dir.join(LABELS_FILE).display().to_string(),
            detail: format!("label {bad} exceeds declared class count {}", labels.class_count),
        });
    }
    let syn = SyntheticDataset {
        images: Tensor::new(images_rec.shape.clone(), images_rec.data.clone())?,
        labels: labels.labels,
        alpha: alpha_rec.data[0],
    };
    syn.validate()?;
    Ok((syn, cfg))
}
