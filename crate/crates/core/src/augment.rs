//! Differentiable batch augmentation.
//!
//! One transform with one set of sampled parameters is applied to the whole
//! batch per call (the "siamese" property), and every transform is a sparse
//! linear map from [`crate::graph::plan`], so the output is exactly
//! differentiable with respect to the input pixels. Flat vector data
//! (spatial size 1×1) passes through untouched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{plan, Var};
use crate::rng::substream_indexed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    /// Mirror the batch horizontally (a coin flip per call).
    pub flip: bool,
    /// Translate by dy, dx drawn uniformly from `-max_shift..=max_shift`.
    pub max_shift: usize,
    /// Zoom by a factor drawn uniformly from `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// Root of the per-step parameter stream.
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self { flip: false, max_shift: 0, scale_jitter: 0.0, seed: 0 }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.flip || self.max_shift > 0 || self.scale_jitter > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(Error::InvalidConfig(format!(
                "scale jitter must be in [0, 1), got {}",
                self.scale_jitter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    Flip,
    Shift,
    Scale,
}

/// Applies one sampled transform to the whole batch. Deterministic given
/// `(policy.seed, step_index)`; identity when no transform is enabled or the
/// data has no spatial extent.
pub fn augment(images: &Var, policy: &AugmentationPolicy, step_index: u64) -> Result<Var> {
    let shape = images.shape();
    let [n, c, h, w] = match *shape.as_slice() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::shape("augment", format!("expected [n,c,h,w], got {shape:?}"))),
    };
    if !policy.is_enabled() || h * w == 1 {
        return Ok(images.clone());
    }

    let mut menu = Vec::new();
    if policy.flip {
        menu.push(Transform::Flip);
    }
    if policy.max_shift > 0 {
        menu.push(Transform::Shift);
    }
    if policy.scale_jitter > 0.0 {
        menu.push(Transform::Scale);
    }

    let mut rng = substream_indexed(policy.seed, "augment", step_index);
    let chosen = menu[rng.gen_range(0..menu.len())];
    match chosen {
        Transform::Flip => {
            if rng.gen_bool(0.5) {
                images.apply_plan(plan::flip_h(n, c, h, w))
            } else {
                Ok(images.clone())
            }
        }
        Transform::Shift => {
            let k = policy.max_shift as i64;
            let dy = rng.gen_range(-k..=k);
            let dx = rng.gen_range(-k..=k);
            images.apply_plan(plan::shift2d(n, c, h, w, dy, dx))
        }
        Transform::Scale => {
            let factor = 1.0 + rng.gen_range(-policy.scale_jitter..=policy.scale_jitter);
            images.apply_plan(plan::scale_bilinear(n, c, h, w, factor))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{finite_diff, max_rel_error, Graph};
    use crate::tensor::Tensor;

    fn batch() -> Tensor {
        Tensor::new(vec![2, 1, 4, 4], (0..32).map(|i| (i as f64 * 7.0 % 13.0) / 13.0).collect())
            .unwrap()
    }

    #[test]
    fn disabled_policy_is_identity() {
        let g = Graph::first_order();
        let x = g.var(batch()).unwrap();
        let y = augment(&x, &AugmentationPolicy::disabled(), 0).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn augmentation_is_deterministic_per_step() {
        let policy = AugmentationPolicy { flip: true, max_shift: 1, scale_jitter: 0.2, seed: 3 };
        let run = |step: u64| {
            let g = Graph::first_order();
            let x = g.var(batch()).unwrap();
            augment(&x, &policy, step).unwrap().value()
        };
        assert_eq!(run(5).data(), run(5).data());
        // Across many steps at least one draw must differ from step 5's.
        assert!((0..20).any(|s| run(s).data() != run(5).data()));
    }

    #[test]
    fn vector_data_passes_through() {
        let g = Graph::first_order();
        let x = g.var(Tensor::new(vec![3, 4, 1, 1], vec![0.5; 12]).unwrap()).unwrap();
        let policy = AugmentationPolicy { flip: true, max_shift: 2, scale_jitter: 0.3, seed: 0 };
        let y = augment(&x, &policy, 7).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Sweep steps so every transform kind gets exercised.
        let policy = AugmentationPolicy { flip: true, max_shift: 1, scale_jitter: 0.25, seed: 11 };
        let x0 = batch();
        for step in 0..6 {
            let loss_at = |x: &Tensor| -> Result<f64> {
                let g = Graph::first_order();
                let v = g.var(x.clone())?;
                augment(&v, &policy, step)?.sq_norm()?.scalar_value()
            };
            let fd = finite_diff(loss_at, &x0, 1e-6).unwrap();

            let g = Graph::first_order();
            let v = g.var(x0.clone()).unwrap();
            let loss = augment(&v, &policy, step).unwrap().sq_norm().unwrap();
            let ad = g.grad(&loss, &[v]).unwrap()[0].value();
            assert!(max_rel_error(&ad, &fd) < 1e-6, "step {step}");
        }
    }

    #[test]
    fn siamese_all_samples_get_the_same_map() {
        // Duplicate a sample across the batch; outputs must stay identical.
        let mut data = Vec::new();
        let one: Vec<f64> = (0..16).map(|i| (i as f64) / 16.0).collect();
        for _ in 0..3 {
            data.extend_from_slice(&one);
        }
        let policy = AugmentationPolicy { flip: true, max_shift: 1, scale_jitter: 0.2, seed: 21 };
        for step in 0..8 {
            let g = Graph::first_order();
            let x = g.var(Tensor::new(vec![3, 1, 4, 4], data.clone()).unwrap()).unwrap();
            let y = augment(&x, &policy, step).unwrap().value();
            let first = &y.data()[..16];
            assert_eq!(first, &y.data()[16..32]);
            assert_eq!(first, &y.data()[32..]);
        }
    }
}
