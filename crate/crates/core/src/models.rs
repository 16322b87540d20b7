//! Network definitions, parameter flattening, and parameter-space distances.
//!
//! Both architectures expose a "feature tap": the activations right before
//! the final classifier layer. Representative initialization clusters real
//! samples in that space.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ops, Graph, Var};
use crate::rng::substream;
use crate::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Conv 3×3 (pad 1) → instance norm → ReLU → 2×2 average pool, repeated
    /// `depth` times, then a dense classifier.
    Convnet,
    /// `depth` hidden dense+ReLU layers then a dense classifier; depth 0 is a
    /// plain linear model.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub depth: usize,
    pub width: usize,
    /// `[c, h, w]` for images, `[d]` for flat vectors (MLP only).
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("model needs at least 2 classes".into()));
        }
        match self.kind {
            ModelKind::Convnet => {
                let [_, h, w] = *self.input_shape.as_slice() else {
                    return Err(Error::InvalidConfig(format!(
                        "convnet input must be [c, h, w], got {:?}",
                        self.input_shape
                    )));
                };
                if self.depth == 0 {
                    return Err(Error::InvalidConfig("convnet depth must be >= 1".into()));
                }
                let div = 1usize << self.depth;
                if h % div != 0 || w % div != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "input {h}x{w} not divisible by 2^depth = {div}"
                    )));
                }
                if self.width == 0 {
                    return Err(Error::InvalidConfig("convnet width must be >= 1".into()));
                }
            }
            ModelKind::Mlp => {
                if self.depth > 0 && self.width == 0 {
                    return Err(Error::InvalidConfig("mlp width must be >= 1".into()));
                }
                if self.input_shape.is_empty() {
                    return Err(Error::InvalidConfig("mlp input shape must be non-empty".into()));
                }
            }
        }
        Ok(())
    }

    pub fn input_numel(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Dimension of the feature-tap activations.
    pub fn feature_dim(&self) -> usize {
        match self.kind {
            ModelKind::Convnet => {
                let [_, h, w] = [self.input_shape[0], self.input_shape[1], self.input_shape[2]];
                let div = 1usize << self.depth;
                self.width * (h / div) * (w / div)
            }
            ModelKind::Mlp => {
                if self.depth == 0 {
                    self.input_numel()
                } else {
                    self.width
                }
            }
        }
    }

    pub fn layout(&self) -> Arc<Layout> {
        let mut records = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, kind: ParamKind, shape: Vec<usize>| {
            let numel: usize = shape.iter().product();
            records.push(LayoutRecord { name, kind, shape, offset });
            offset += numel;
        };
        match self.kind {
            ModelKind::Convnet => {
                let mut cin = self.input_shape[0];
                for i in 0..self.depth {
                    push(format!("conv{i}.weight"), ParamKind::ConvWeight, vec![self.width, cin, 3, 3]);
                    push(format!("conv{i}.bias"), ParamKind::Bias, vec![self.width]);
                    push(format!("norm{i}.scale"), ParamKind::NormScale, vec![self.width]);
                    push(format!("norm{i}.shift"), ParamKind::NormShift, vec![self.width]);
                    cin = self.width;
                }
            }
            ModelKind::Mlp => {
                let mut din = self.input_numel();
                for i in 0..self.depth {
                    push(format!("fc{i}.weight"), ParamKind::DenseWeight, vec![self.width, din]);
                    push(format!("fc{i}.bias"), ParamKind::Bias, vec![self.width]);
                    din = self.width;
                }
            }
        }
        push("head.weight".into(), ParamKind::DenseWeight, vec![self.num_classes, self.feature_dim()]);
        push("head.bias".into(), ParamKind::Bias, vec![self.num_classes]);
        Arc::new(Layout { records, total: offset })
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    DenseWeight,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutRecord {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutRecord {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// How many elements form one "filter" for perturbation purposes: a row
    /// of a conv/dense weight matrix; the whole vector for 1-D parameters.
    pub fn filter_len(&self) -> usize {
        match self.kind {
            ParamKind::ConvWeight | ParamKind::DenseWeight => {
                self.shape[1..].iter().product()
            }
            ParamKind::Bias | ParamKind::NormScale | ParamKind::NormShift => self.numel(),
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct Layout {
    pub records: Vec<LayoutRecord>,
    pub total: usize,
}

/// All parameters of one network as a flat vector plus its layout.
#[derive(Debug, Clone)]
pub struct ParamVector {
    data: Tensor,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn from_flat(layout: Arc<Layout>, data: Tensor) -> Result<Self> {
        if data.shape() != [layout.total] {
            return Err(Error::LayoutMismatch(format!(
                "flat data {:?} vs layout total {}",
                data.shape(),
                layout.total
            )));
        }
        Ok(Self { data, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let total = layout.total;
        Self { data: Tensor::zeros(&[total]), layout }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn flat(&self) -> &Tensor {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut Tensor {
        &mut self.data
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    /// The shaped tensor of one layout record.
    pub fn record_tensor(&self, index: usize) -> Tensor {
        let rec = &self.layout.records[index];
        let slice = &self.data.data()[rec.offset..rec.offset + rec.numel()];
        Tensor::new(rec.shape.clone(), slice.to_vec()).expect("layout record shape is consistent")
    }

    /// Puts every record on a graph as a shaped variable.
    pub fn to_graph_vars(&self, graph: &Graph) -> Result<Vec<Var>> {
        (0..self.layout.records.len())
            .map(|i| graph.var(self.record_tensor(i)))
            .collect()
    }

    /// Collects shaped variables' current values back into a flat vector.
    pub fn from_graph_values(layout: Arc<Layout>, vars: &[Var]) -> Result<Self> {
        if vars.len() != layout.records.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} vars vs {} layout records",
                vars.len(),
                layout.records.len()
            )));
        }
        let mut flat = vec![0.0; layout.total];
        for (rec, var) in layout.records.iter().zip(vars) {
            let value = var.value();
            if value.shape() != rec.shape.as_slice() {
                return Err(Error::LayoutMismatch(format!(
                    "var shape {:?} vs record {} shape {:?}",
                    value.shape(),
                    rec.name,
                    rec.shape
                )));
            }
            flat[rec.offset..rec.offset + rec.numel()].copy_from_slice(value.data());
        }
        Self::from_flat(layout, Tensor::new(vec![flat.len()], flat)?)
    }
}

/// Σ (aᵢ − bᵢ)² over the flat parameter vectors.
pub fn param_distance_sq(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    if !a.same_layout(b) {
        return Err(Error::LayoutMismatch("parameter vectors from different layouts".into()));
    }
    Ok(a.flat()
        .data()
        .iter()
        .zip(b.flat().data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Deterministic fan-in-scaled uniform initialization; biases and norm
/// shifts start at zero, norm scales at one.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = substream(seed, "param-init");
    let mut flat = vec![0.0; layout.total];
    for rec in &layout.records {
        let out = &mut flat[rec.offset..rec.offset + rec.numel()];
        match rec.kind {
            ParamKind::ConvWeight | ParamKind::DenseWeight => {
                let fan_in: usize = rec.shape[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in out.iter_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            ParamKind::Bias | ParamKind::NormShift => {}
            ParamKind::NormScale => out.fill(1.0),
        }
    }
    ParamVector::from_flat(layout, Tensor::new(vec![flat.len()], flat)?)
}

pub struct ForwardOutput {
    pub logits: Var,
    /// Activations at the feature tap (input of the classifier layer).
    pub features: Var,
}

/// Runs the network. `params` are shaped graph variables in layout order;
/// gradients flow to both parameters and the input batch.
pub fn forward(spec: &ModelSpec, params: &[Var], batch: &Var) -> Result<ForwardOutput> {
    let layout = spec.layout();
    if params.len() != layout.records.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} params vs {} layout records",
            params.len(),
            layout.records.len()
        )));
    }
    let batch_shape = batch.shape();
    let n = *batch_shape.first().ok_or_else(|| Error::shape("forward", "empty batch shape"))?;
    if batch_shape[1..].iter().product::<usize>() != spec.input_numel() {
        return Err(Error::shape(
            "forward",
            format!("batch {:?} vs input shape {:?}", batch_shape, spec.input_shape),
        ));
    }

    let features = match spec.kind {
        ModelKind::Convnet => {
            let [c, h, w] = [spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]];
            let mut x = batch.reshape(&[n, c, h, w])?;
            for i in 0..spec.depth {
                let wrec = &layout.records[4 * i];
                let cin = wrec.shape[1];
                let weight = params[4 * i].reshape(&[spec.width, cin * 9])?;
                let conv = ops::conv2d(&x, &weight, &params[4 * i + 1], 3, 3, 1)?;
                let normed = ops::instance_norm(
                    &conv,
                    &params[4 * i + 2],
                    &params[4 * i + 3],
                    INSTANCE_NORM_EPS,
                )?;
                x = ops::avg_pool(&normed.relu()?, 2)?;
            }
            x.reshape(&[n, spec.feature_dim()])?
        }
        ModelKind::Mlp => {
            let mut x = batch.reshape(&[n, spec.input_numel()])?;
            for i in 0..spec.depth {
                x = ops::dense(&x, &params[2 * i], &params[2 * i + 1])?.relu()?;
            }
            x
        }
    };
    let head = layout.records.len() - 2;
    let logits = ops::dense(&features, &params[head], &params[head + 1])?;
    Ok(ForwardOutput { logits, features })
}

/// Top-1 accuracy of a parameter vector over a labeled set (chunked forward).
pub fn top1_accuracy(
    spec: &ModelSpec,
    params: &ParamVector,
    images: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    let n = images.shape()[0];
    if n == 0 {
        return Err(Error::Dataset("accuracy over an empty set".into()));
    }
    let row = images.numel() / n;
    let classes = spec.num_classes;
    let mut correct = 0usize;
    for start in (0..n).step_by(256) {
        let end = (start + 256).min(n);
        let m = end - start;
        let mut shape = images.shape().to_vec();
        shape[0] = m;
        let chunk = Tensor::new(shape, images.data()[start * row..end * row].to_vec())?;
        let graph = Graph::first_order();
        let vars = params.to_graph_vars(&graph)?;
        let out = forward(spec, &vars, &graph.var(chunk)?)?;
        let logits = out.logits.value();
        for i in 0..m {
            let scores = &logits.data()[i * classes..(i + 1) * classes];
            let argmax = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(j, _)| j)
                .expect("non-empty logit row");
            if argmax == labels[start + i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}
