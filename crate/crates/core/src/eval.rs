//! Train-from-scratch evaluation of a synthetic dataset.
//!
//! For each evaluation seed a fresh network is initialized and trained on
//! the synthetic set with plain SGD (initial rate α taken from the
//! synthetic artifact, halved once at the midpoint iteration), then scored
//! by top-1 accuracy on held-out real data. Baselines (random per-class
//! subset, full real data) go through the same loop so comparisons are
//! apples to apples.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentationPolicy};
use crate::data::{LabeledDataset, SyntheticDataset};
use crate::error::{Error, Result};
use crate::graph::{ops, Graph};
use crate::models::{self, init_params, ModelSpec, ParamVector};
use crate::rng::substream;

/// Largest minibatch drawn from the synthetic set per training step.
pub const EVAL_BATCH_CAP: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// What was evaluated (e.g. "distilled", "random-subset", "full-data").
    pub tag: String,
    pub seeds: Vec<u64>,
    /// Top-1 test accuracy per seed; NaN where training diverged.
    pub per_seed_accuracy: Vec<f64>,
    /// Mean over the seeds that finished.
    pub mean: f64,
    /// Population standard deviation over the seeds that finished.
    pub std: f64,
    /// Number of diverged (excluded) seeds.
    pub diverged: usize,
    pub iters: usize,
    pub spec: ModelSpec,
}

impl EvalReport {
    /// One CSV row per seed: `tag,seed,iters,accuracy` (header included).
    pub fn csv_rows(&self) -> String {
        let mut out = String::from("tag,seed,iters,accuracy\n");
        for (seed, acc) in self.seeds.iter().zip(&self.per_seed_accuracy) {
            out.push_str(&format!("{},{},{},{}\n", self.tag, seed, self.iters, acc));
        }
        out
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Trains one fresh network on the synthetic set and returns its test
/// accuracy, or `None` if training produced non-finite values.
fn train_and_score(
    syn: &SyntheticDataset,
    spec: &ModelSpec,
    test: &LabeledDataset,
    seed: u64,
    iters: usize,
    policy: &AugmentationPolicy,
) -> Result<Option<f64>> {
    let mut params = init_params(spec, seed)?;
    let n = syn.len();
    let batch = n.min(EVAL_BATCH_CAP);
    let chunks: Vec<Vec<usize>> =
        (0..n).collect::<Vec<_>>().chunks(batch).map(<[usize]>::to_vec).collect();

    for i in 0..iters {
        let lr = if i >= iters / 2 { syn.alpha / 2.0 } else { syn.alpha };
        let idx = &chunks[i % chunks.len()];
        let step = sgd_step(syn, spec, &params, idx, lr, policy, i as u64);
        params = match step {
            Ok(p) => p,
            Err(Error::NonFinite(_)) => return Ok(None),
            Err(other) => return Err(other),
        };
        if !params.flat().all_finite() {
            return Ok(None);
        }
    }
    let acc = models::top1_accuracy(spec, &params, &test.images, &test.labels)?;
    Ok(if acc.is_finite() { Some(acc) } else { None })
}

fn sgd_step(
    syn: &SyntheticDataset,
    spec: &ModelSpec,
    params: &ParamVector,
    indices: &[usize],
    lr: f64,
    policy: &AugmentationPolicy,
    step_index: u64,
) -> Result<ParamVector> {
    let sample = syn.images.numel() / syn.len();
    let mut shape = syn.images.shape().to_vec();
    shape[0] = indices.len();
    let mut data = Vec::with_capacity(indices.len() * sample);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(&syn.images.data()[i * sample..(i + 1) * sample]);
        labels.push(syn.labels[i]);
    }

    let graph = Graph::first_order();
    let batch = graph.var(crate::tensor::Tensor::new(shape, data)?)?;
    let x = augment(&batch, policy, step_index)?;
    let vars = params.to_graph_vars(&graph)?;
    let out = models::forward(spec, &vars, &x)?;
    let (loss, _) = ops::cross_entropy(&out.logits, &labels)?;
    let grads = graph.grad(&loss, &vars)?;

    let mut flat = params.flat().data().to_vec();
    let mut cursor = 0;
    for g in &grads {
        for v in g.value().data() {
            flat[cursor] -= lr * v;
            cursor += 1;
        }
    }
    ParamVector::from_flat(params.layout().clone(), crate::tensor::Tensor::new(vec![flat.len()], flat)?)
}

/// Evaluates a synthetic dataset over several fresh-network seeds.
pub fn evaluate(
    syn: &SyntheticDataset,
    spec: &ModelSpec,
    test: &LabeledDataset,
    seeds: &[u64],
    iters: usize,
    policy: &AugmentationPolicy,
    tag: &str,
) -> Result<EvalReport> {
    spec.validate()?;
    syn.validate()?;
    test.validate()?;
    policy.validate()?;
    if iters == 0 {
        return Err(Error::InvalidConfig("evaluation needs >= 1 iteration".into()));
    }
    if seeds.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "evaluation needs >= 3 seeds, got {}",
            seeds.len()
        )));
    }
    let sample = syn.images.numel() / syn.len();
    if sample != spec.input_numel() {
        return Err(Error::InvalidConfig(format!(
            "synthetic sample has {sample} values but the model expects {}",
            spec.input_numel()
        )));
    }

    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let score = train_and_score(syn, spec, test, seed, iters, policy)?;
        per_seed.push(score.unwrap_or(f64::NAN));
    }
    let finished: Vec<f64> = per_seed.iter().copied().filter(|a| a.is_finite()).collect();
    let (mean, std) = mean_std(&finished);
    Ok(EvalReport {
        tag: tag.into(),
        seeds: seeds.to_vec(),
        per_seed_accuracy: per_seed.clone(),
        mean,
        std,
        diverged: per_seed.len() - finished.len(),
        iters,
        spec: spec.clone(),
    })
}

/// Uniform per-class sample without replacement — the non-learning
/// comparator for distilled sets.
pub fn baseline_random_subset(
    data: &LabeledDataset,
    ipc: usize,
    seed: u64,
    alpha: f64,
) -> Result<SyntheticDataset> {
    data.validate()?;
    if ipc == 0 {
        return Err(Error::InvalidConfig("ipc must be >= 1".into()));
    }
    let mut rng = substream(seed, "random-subset");
    let mut picks = Vec::with_capacity(ipc * data.class_count);
    let mut labels = Vec::with_capacity(ipc * data.class_count);
    for class in 0..data.class_count {
        let mut members = data.class_indices(class);
        if members.len() < ipc {
            return Err(Error::Dataset(format!(
                "class {class} has {} samples, fewer than ipc = {ipc}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        members.truncate(ipc);
        members.sort_unstable();
        for m in members {
            picks.push(m);
            labels.push(class);
        }
    }
    let gathered = data.gather(&picks)?;
    Ok(SyntheticDataset { images: gathered.images, labels, alpha })
}

/// The entire real training set packaged as a synthetic dataset — the
/// upper-bound comparator.
pub fn baseline_full(data: &LabeledDataset, alpha: f64) -> Result<SyntheticDataset> {
    data.validate()?;
    Ok(SyntheticDataset {
        images: data.images.clone(),
        labels: data.labels.clone(),
        alpha,
    })
}
