//! Network-level operations composed from graph primitives.
//!
//! Everything here reduces to the primitive op set, so every derivative —
//! including derivatives of derivatives — is exact by construction. The only
//! values detached from the tape are the per-row maxima subtracted before
//! softmax (a constant shift, which leaves all derivatives unchanged) and the
//! ReLU mask.

use crate::error::{Error, Result};
use crate::graph::{plan, Var};
use crate::tensor::Tensor;

/// Multiplies a tensor-shaped variable by a scalar variable (e.g. a learned
/// learning rate), keeping the scalar on the differentiation path.
pub fn scale_by(scalar: &Var, tensor: &Var) -> Result<Var> {
    let shape = tensor.shape();
    scalar.apply_plan(plan::fill_from_scalar(&shape))?.mul(tensor)
}

/// Row-wise softmax of a `[rows, cols]` logit matrix.
pub fn softmax_rows(logits: &Var) -> Result<Var> {
    let (rows, cols) = two_dims(logits, "softmax")?;
    let shifted = sub_row_max(logits, rows, cols)?;
    let e = shifted.exp()?;
    let denom = e.apply_plan(plan::sum_cols(rows, cols))?;
    e.div(&denom.apply_plan(plan::bcast_cols(rows, cols))?)
}

/// Cross-entropy of logits against integer labels.
///
/// Returns `(mean, per_sample)`: the scalar batch mean and the `[rows]`
/// vector of per-sample losses (the latter feeds the gradient penalty).
pub fn cross_entropy(logits: &Var, labels: &[usize]) -> Result<(Var, Var)> {
    let (rows, cols) = two_dims(logits, "cross_entropy")?;
    if labels.len() != rows {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} logit rows vs {} labels", rows, labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(Error::Dataset(format!("label {bad} out of range for {cols} classes")));
    }
    let shifted = sub_row_max(logits, rows, cols)?;
    // With the max subtracted, exp stays in (0, 1] and the row sum in [1, cols].
    let log_norm = shifted
        .exp()?
        .apply_plan(plan::sum_cols(rows, cols))?
        .log()?;
    let picked = shifted.apply_plan(plan::pick_per_row(rows, cols, labels))?;
    let per_sample = log_norm.sub(&picked)?;
    let mean = per_sample.mean()?;
    Ok((mean, per_sample))
}

fn sub_row_max(logits: &Var, rows: usize, cols: usize) -> Result<Var> {
    let value = logits.value();
    let mut maxima = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &value.data()[r * cols..(r + 1) * cols];
        maxima.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let max_var = logits.graph().var(Tensor::new(vec![rows], maxima)?)?;
    logits.sub(&max_var.apply_plan(plan::bcast_cols(rows, cols))?)
}

fn two_dims(v: &Var, op: &'static str) -> Result<(usize, usize)> {
    let shape = v.shape();
    if shape.len() != 2 {
        return Err(Error::shape(op, format!("expected 2-D, got {:?}", shape)));
    }
    Ok((shape[0], shape[1]))
}

/// Per-sample, per-channel normalization with learned scale and shift.
///
/// `x` is `[n, c, h, w]`; `gamma`/`beta` are `[c]`. Each (sample, channel)
/// plane is standardized by its own mean and variance.
pub fn instance_norm(x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
    let shape = x.shape();
    let [n, c, h, w] = four_dims(&shape, "instance_norm")?;
    let hw = h * w;
    let rows = n * c;
    let flat = x.reshape(&[rows, hw])?;
    let inv_hw = 1.0 / hw as f64;
    let mean = flat.apply_plan(plan::sum_cols(rows, hw))?.mul_scalar(inv_hw)?;
    let centered = flat.sub(&mean.apply_plan(plan::bcast_cols(rows, hw))?)?;
    let variance = centered
        .mul(&centered)?
        .apply_plan(plan::sum_cols(rows, hw))?
        .mul_scalar(inv_hw)?;
    let inv_std = variance.add_scalar(eps)?.sqrt()?;
    let normed = centered.div(&inv_std.apply_plan(plan::bcast_cols(rows, hw))?)?;
    let scaled = normed.mul(&gamma.apply_plan(plan::bcast_channel(n, c, hw))?)?;
    scaled
        .add(&beta.apply_plan(plan::bcast_channel(n, c, hw))?)?
        .reshape(&shape)
}

/// 2-D convolution, stride 1: patches are gathered with an im2col plan and
/// contracted with the `[cout, cin·kh·kw]` weight matrix.
pub fn conv2d(x: &Var, weight: &Var, bias: &Var, kh: usize, kw: usize, pad: usize) -> Result<Var> {
    let shape = x.shape();
    let [n, c, h, w] = four_dims(&shape, "conv2d")?;
    let wshape = weight.shape();
    if wshape.len() != 2 || wshape[1] != c * kh * kw {
        return Err(Error::shape(
            "conv2d",
            format!("weight {:?} does not match {}x{}x{} patches", wshape, c, kh, kw),
        ));
    }
    let cout = wshape[0];
    let oh = h + 2 * pad - kh + 1;
    let ow = w + 2 * pad - kw + 1;
    let cols = x.apply_plan(plan::im2col(n, c, h, w, kh, kw, 1, pad))?;
    let out = weight.matmul(&cols)?;
    let biased = out.add(&bias.apply_plan(plan::bcast_cols(cout, n * oh * ow))?)?;
    biased.apply_plan(plan::channels_to_images(cout, n, oh, ow))
}

/// Fully connected layer: `x [n, din] × weightᵀ [din, dout] + bias`.
///
/// The weight is stored output-major (`[dout, din]`) so each output unit's
/// weights are one contiguous row.
pub fn dense(x: &Var, weight: &Var, bias: &Var) -> Result<Var> {
    let (n, _) = two_dims(x, "dense")?;
    let dout = weight.shape()[0];
    x.matmul(&weight.t()?)?.add(&bias.apply_plan(plan::bcast_rows(n, dout))?)
}

/// k×k average pooling, stride k.
pub fn avg_pool(x: &Var, k: usize) -> Result<Var> {
    let shape = x.shape();
    let [n, c, h, w] = four_dims(&shape, "avg_pool")?;
    if h % k != 0 || w % k != 0 {
        return Err(Error::shape("avg_pool", format!("{h}x{w} not divisible by {k}")));
    }
    x.apply_plan(plan::avg_pool(n, c, h, w, k))
}

fn four_dims(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match shape {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        other => Err(Error::shape(op, format!("expected 4-D, got {:?}", other))),
    }
}
