//! Finite-difference verification suites for every derivative path.
//!
//! Three suites: `first_order_suite` covers each tensor op and composite
//! forward block; `second_order_suite` covers the gradient-penalty path
//! (a derivative of a derivative); `meta_suite` covers the full unrolled
//! meta-gradient with respect to synthetic pixels and the learnable α.
//! All checks compare reverse-mode gradients against central differences
//! and report a maximum relative error next to the tolerance that judges
//! it.

use rand::Rng;
use serde::Serialize;

use crate::augment::AugmentationPolicy;
use crate::buffer::{self, SmoothnessConfig, Trajectory, TrajectoryMeta};
use crate::data::SyntheticDataset;
use crate::distill::{outer_step, BetaMode, DistillConfig};
use crate::error::Result;
use crate::graph::{finite_diff, max_rel_error, ops, plan, Graph, Var};
use crate::models::{forward, init_params, ModelKind, ModelSpec, ParamVector};
use crate::rng::substream;
use crate::tensor::Tensor;

/// Relative-error budget for plain first-order paths.
pub const FIRST_ORDER_TOL: f64 = 1e-6;
/// Relative-error budget for second-order and meta-gradient paths.
pub const SECOND_ORDER_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tol
    }
}

/// Runs one check: reverse-mode gradient of `f`'s scalar output w.r.t. the
/// probe tensor, against central finite differences.
fn check<F>(name: &str, at: &Tensor, eps: f64, tol: f64, f: F) -> Result<CheckResult>
where
    F: Fn(&Graph, &Var) -> Result<Var>,
{
    let graph = Graph::higher_order();
    let x = graph.var(at.clone())?;
    let loss = f(&graph, &x)?;
    let grad = graph.grad(&loss, std::slice::from_ref(&x))?.remove(0);

    let fd = finite_diff(
        |t| {
            let g = Graph::higher_order();
            let v = g.var(t.clone())?;
            f(&g, &v)?.scalar_value()
        },
        at,
        eps,
    )?;
    Ok(CheckResult {
        name: name.into(),
        max_rel_err: max_rel_error(&grad.value(), &fd),
        tol,
    })
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, stream: &str) -> Tensor {
    let mut rng = substream(0xC0FFEE, stream);
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// One finite-difference check per registered op and composite.
pub fn first_order_suite(eps: f64) -> Result<Vec<CheckResult>> {
    let tol = FIRST_ORDER_TOL;
    let mut out = Vec::new();

    let a = rand_tensor(&[3, 4], -1.0, 1.0, "fo-a");
    let b = rand_tensor(&[3, 4], 0.5, 1.5, "fo-b");
    let m = rand_tensor(&[4, 2], -1.0, 1.0, "fo-m");

    // Elementwise binaries, each probed from both sides.
    {
        let b = b.clone();
        out.push(check("add/lhs", &a, eps, tol, move |g, x| {
            let c = g.var(b.clone())?;
            x.add(&c)?.mul(x)?.sum()
        })?);
    }
    {
        let a2 = a.clone();
        out.push(check("add/rhs", &b, eps, tol, move |g, x| {
            let c = g.var(a2.clone())?;
            c.add(x)?.exp()?.sum()
        })?);
    }
    {
        let b = b.clone();
        out.push(check("sub/lhs", &a, eps, tol, move |g, x| {
            let c = g.var(b.clone())?;
            let d = x.sub(&c)?;
            d.mul(&d)?.sum()
        })?);
    }
    {
        let a2 = a.clone();
        out.push(check("sub/rhs", &b, eps, tol, move |g, x| {
            let c = g.var(a2.clone())?;
            let d = c.sub(x)?;
            d.mul(&d)?.sum()
        })?);
    }
    {
        let b = b.clone();
        out.push(check("mul/lhs", &a, eps, tol, move |g, x| {
            let c = g.var(b.clone())?;
            x.mul(&c)?.mul(x)?.sum()
        })?);
    }
    {
        let a2 = a.clone();
        out.push(check("mul/rhs", &b, eps, tol, move |g, x| {
            let c = g.var(a2.clone())?;
            c.mul(x)?.sum()
        })?);
    }
    {
        let b = b.clone();
        out.push(check("div/numerator", &a, eps, tol, move |g, x| {
            let c = g.var(b.clone())?;
            x.div(&c)?.mul(x)?.sum()
        })?);
    }
    {
        let a2 = a.clone();
        out.push(check("div/denominator", &b, eps, tol, move |g, x| {
            let c = g.var(a2.clone())?;
            c.div(x)?.sum()
        })?);
    }

    // Unaries.
    out.push(check("neg", &a, eps, tol, |_, x| x.neg()?.mul(x)?.sum())?);
    out.push(check("add_scalar", &a, eps, tol, |_, x| x.add_scalar(0.37)?.mul(x)?.sum())?);
    out.push(check("mul_scalar", &a, eps, tol, |_, x| x.mul_scalar(-1.7)?.exp()?.sum())?);
    out.push(check("exp", &a, eps, tol, |_, x| x.exp()?.sum())?);
    out.push(check("log", &b, eps, tol, |_, x| x.log()?.mul(x)?.sum())?);
    out.push(check("sqrt", &b, eps, tol, |_, x| x.sqrt()?.mul(x)?.sum())?);
    // Inputs are bounded away from the relu kink so differences are exact.
    out.push(check("relu", &a, eps, tol, |_, x| x.relu()?.mul(x)?.sum())?);

    // Shape and contraction ops.
    {
        let m2 = m.clone();
        out.push(check("matmul/lhs", &a, eps, tol, move |g, x| {
            let w = g.var(m2.clone())?;
            let y = x.matmul(&w)?;
            y.mul(&y)?.sum()
        })?);
    }
    {
        let a2 = a.clone();
        out.push(check("matmul/rhs", &m, eps, tol, move |g, x| {
            let c = g.var(a2.clone())?;
            let y = c.matmul(x)?;
            y.mul(&y)?.sum()
        })?);
    }
    out.push(check("transpose", &a, eps, tol, |_, x| {
        let t = x.t()?;
        t.mul(&t)?.exp()?.sum()
    })?);
    out.push(check("sum", &a, eps, tol, |_, x| {
        let s = x.mul(x)?.sum()?;
        s.mul(&s)
    })?);
    out.push(check("mean", &a, eps, tol, |_, x| x.exp()?.mean())?);
    out.push(check("reshape", &a, eps, tol, |_, x| {
        let r = x.reshape(&[4, 3])?;
        r.mul(&r)?.sum()
    })?);

    // Structured linear maps.
    let img = rand_tensor(&[2, 1, 4, 4], -1.0, 1.0, "fo-img");
    out.push(check("plan/flip", &img, eps, tol, |_, x| {
        let f = x.apply_plan(plan::flip_h(2, 1, 4, 4))?;
        f.mul(&f)?.mul(x)?.sum()
    })?);
    out.push(check("plan/shift", &img, eps, tol, |_, x| {
        let s = x.apply_plan(plan::shift2d(2, 1, 4, 4, 1, -1))?;
        s.mul(&s)?.sum()
    })?);
    out.push(check("plan/scale", &img, eps, tol, |_, x| {
        let s = x.apply_plan(plan::scale_bilinear(2, 1, 4, 4, 1.17))?;
        s.mul(&s)?.sum()
    })?);
    out.push(check("plan/pool", &img, eps, tol, |_, x| {
        let p = x.apply_plan(plan::avg_pool(2, 1, 4, 4, 2))?;
        p.mul(&p)?.sum()
    })?);
    out.push(check("plan/broadcast-rows", &rand_tensor(&[4], -1.0, 1.0, "fo-v"), eps, tol, |_, x| {
        let wide = x.apply_plan(plan::bcast_rows(3, 4))?;
        wide.exp()?.sum()
    })?);

    // Composite blocks.
    let logits = rand_tensor(&[4, 3], -2.0, 2.0, "fo-logits");
    out.push(check("softmax", &logits, eps, tol, |_, x| {
        let p = ops::softmax_rows(x)?;
        p.mul(&p)?.sum()
    })?);
    out.push(check("cross_entropy/logits", &logits, eps, tol, |_, x| {
        Ok(ops::cross_entropy(x, &[0, 2, 1, 0])?.0)
    })?);
    {
        let x0 = rand_tensor(&[2, 2, 3, 3], -1.0, 1.0, "fo-in");
        let gamma = rand_tensor(&[2], 0.5, 1.5, "fo-gamma");
        let beta = rand_tensor(&[2], -0.3, 0.3, "fo-beta");
        {
            let (gm, bt) = (gamma.clone(), beta.clone());
            // A squared-sum functional is nearly constant in the input here
            // (normalization fixes the per-instance second moment), leaving
            // only noise to differentiate. A fixed linear probe keeps the
            // Jacobian fully exercised and the difference well-conditioned.
            let probe = rand_tensor(&[2, 2, 3, 3], 0.5, 1.5, "fo-in-probe");
            out.push(check("instance_norm/input", &x0, eps, tol, move |g, x| {
                let y = ops::instance_norm(x, &g.var(gm.clone())?, &g.var(bt.clone())?, 1e-5)?;
                y.mul(&g.var(probe.clone())?)?.sum()
            })?);
        }
        {
            let (inp, bt) = (x0.clone(), beta.clone());
            out.push(check("instance_norm/scale", &gamma, eps, tol, move |g, x| {
                let y = ops::instance_norm(&g.var(inp.clone())?, x, &g.var(bt.clone())?, 1e-5)?;
                y.mul(&y)?.sum()
            })?);
        }
        {
            let (inp, gm) = (x0.clone(), gamma.clone());
            out.push(check("instance_norm/shift", &beta, eps, tol, move |g, x| {
                let y = ops::instance_norm(&g.var(inp.clone())?, &g.var(gm.clone())?, x, 1e-5)?;
                y.mul(&y)?.sum()
            })?);
        }
    }
    {
        let x0 = rand_tensor(&[3, 5], -1.0, 1.0, "fo-dx");
        let w = rand_tensor(&[2, 5], -0.8, 0.8, "fo-dw");
        let bias = rand_tensor(&[2], -0.2, 0.2, "fo-db");
        {
            let (w2, b2) = (w.clone(), bias.clone());
            out.push(check("dense/input", &x0, eps, tol, move |g, x| {
                let y = ops::dense(x, &g.var(w2.clone())?, &g.var(b2.clone())?)?;
                y.mul(&y)?.sum()
            })?);
        }
        {
            let (x2, b2) = (x0.clone(), bias.clone());
            out.push(check("dense/weight", &w, eps, tol, move |g, x| {
                let y = ops::dense(&g.var(x2.clone())?, x, &g.var(b2.clone())?)?;
                y.mul(&y)?.sum()
            })?);
        }
        {
            let (x2, w2) = (x0.clone(), w.clone());
            out.push(check("dense/bias", &bias, eps, tol, move |g, x| {
                let y = ops::dense(&g.var(x2.clone())?, &g.var(w2.clone())?, x)?;
                y.mul(&y)?.sum()
            })?);
        }
    }
    {
        let x0 = rand_tensor(&[2, 1, 4, 4], -1.0, 1.0, "fo-cx");
        let w = rand_tensor(&[2, 9], -0.5, 0.5, "fo-cw");
        let bias = rand_tensor(&[2], -0.2, 0.2, "fo-cb");
        {
            let (w2, b2) = (w.clone(), bias.clone());
            out.push(check("conv2d/input", &x0, eps, tol, move |g, x| {
                let y = ops::conv2d(x, &g.var(w2.clone())?, &g.var(b2.clone())?, 3, 3, 1)?;
                y.mul(&y)?.sum()
            })?);
        }
        {
            let (x2, b2) = (x0.clone(), bias.clone());
            out.push(check("conv2d/weight", &w, eps, tol, move |g, x| {
                let y = ops::conv2d(&g.var(x2.clone())?, x, &g.var(b2.clone())?, 3, 3, 1)?;
                y.mul(&y)?.sum()
            })?);
        }
        {
            let (x2, w2) = (x0.clone(), w.clone());
            out.push(check("conv2d/bias", &bias, eps, tol, move |g, x| {
                let y = ops::conv2d(&g.var(x2.clone())?, &g.var(w2.clone())?, x, 3, 3, 1)?;
                y.mul(&y)?.sum()
            })?);
        }
    }
    {
        let scalar = Tensor::scalar(0.8);
        let body = rand_tensor(&[2, 3], -1.0, 1.0, "fo-sb");
        let body2 = body.clone();
        out.push(check("scale_by/scalar", &scalar, eps, tol, move |g, x| {
            let t = g.var(body2.clone())?;
            let y = ops::scale_by(x, &t)?;
            y.mul(&y)?.sum()
        })?);
        out.push(check("scale_by/tensor", &body, eps, tol, |g, x| {
            let s = g.var(Tensor::scalar(0.8))?;
            let y = ops::scale_by(&s, x)?;
            y.mul(&y)?.sum()
        })?);
    }

    Ok(out)
}

/// Gradient-penalty path: the parameter gradient of a loss that itself
/// contains an input gradient.
pub fn second_order_suite(eps: f64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let cfg = SmoothnessConfig { mu: 0.8, k_target: 0.6, lambda_start: 0.5, ramp_epochs: 5 };

    // Dense relu network.
    out.push(check_penalty(
        "penalty/mlp-params",
        &ModelSpec { kind: ModelKind::Mlp, depth: 1, width: 5, input_shape: vec![3], num_classes: 2 },
        3,
        &rand_tensor(&[4, 3, 1, 1], 0.05, 0.95, "so-mx"),
        &[0, 1, 0, 1],
        &cfg,
        eps,
    )?);

    // Convolutional network with instance norm and pooling.
    out.push(check_penalty(
        "penalty/conv-params",
        &ModelSpec {
            kind: ModelKind::Convnet,
            depth: 1,
            width: 2,
            input_shape: vec![1, 4, 4],
            num_classes: 2,
        },
        5,
        &rand_tensor(&[2, 1, 4, 4], 0.05, 0.95, "so-cx"),
        &[0, 1],
        &cfg,
        eps,
    )?);

    Ok(out)
}

/// Checks the gradient of the smoothed loss with respect to every model
/// parameter at once, probing the flattened parameter vector.
fn check_penalty(
    name: &str,
    spec: &ModelSpec,
    param_seed: u64,
    images: &Tensor,
    labels: &[usize],
    cfg: &SmoothnessConfig,
    eps: f64,
) -> Result<CheckResult> {
    let params = init_params(spec, param_seed)?;

    let loss_at = |flat: &Tensor| -> Result<f64> {
        let probe = ParamVector::from_flat(params.layout().clone(), flat.clone())?;
        let graph = Graph::higher_order();
        let vars = probe.to_graph_vars(&graph)?;
        let x = graph.var(images.clone())?;
        let fwd = forward(spec, &vars, &x)?;
        buffer::smooth_loss(&graph, &fwd.logits, labels, &x, cfg, 1)?.scalar_value()
    };
    let fd = finite_diff(loss_at, params.flat(), eps)?;

    let graph = Graph::higher_order();
    let vars = params.to_graph_vars(&graph)?;
    let x = graph.var(images.clone())?;
    let fwd = forward(spec, &vars, &x)?;
    let loss = buffer::smooth_loss(&graph, &fwd.logits, labels, &x, cfg, 1)?;
    let grads = graph.grad(&loss, &vars)?;
    let analytic = ParamVector::from_graph_values(params.layout().clone(), &grads)?;

    Ok(CheckResult {
        name: name.into(),
        max_rel_err: max_rel_error(analytic.flat(), &fd),
        tol: SECOND_ORDER_TOL,
    })
}

/// Full unrolled meta-gradients w.r.t. synthetic pixels and α for
/// N ∈ {1, 2, 3} inner steps.
pub fn meta_suite(eps: f64) -> Result<Vec<CheckResult>> {
    let tol = SECOND_ORDER_TOL;
    let spec = ModelSpec {
        kind: ModelKind::Mlp,
        depth: 1,
        width: 6,
        input_shape: vec![4],
        num_classes: 3,
    };
    // 4·6+6 + 3·6+3 = 51 parameters.
    let epochs = 4usize;
    let checkpoints =
        (0..=epochs).map(|k| init_params(&spec, 100 + k as u64)).collect::<Result<Vec<_>>>()?;
    let traj = Trajectory {
        spec: spec.clone(),
        checkpoints,
        meta: TrajectoryMeta {
            seed: 0,
            epochs,
            optimizer: buffer::OptimizerSettings { eta: 0.1, gamma: 0.0, batch_size: 1 },
            smoothness: SmoothnessConfig::disabled(),
            dataset_fingerprint: "gradcheck-fixture".into(),
            train_accuracy: Vec::new(),
            test_accuracy: Vec::new(),
        },
        diagnostics: Default::default(),
    };
    let syn = SyntheticDataset {
        images: rand_tensor(&[3, 4, 1, 1], 0.1, 0.9, "meta-syn"),
        labels: vec![0, 1, 2],
        alpha: 0.07,
    };
    let start_epoch = 1;

    let mut out = Vec::new();
    for n in 1..=3usize {
        let cfg = DistillConfig {
            intervals: 1,
            student_steps: n,
            max_start_epoch: 2,
            ipc: 1,
            beta_mode: BetaMode::Equal,
            rho: 0.0,
            vartheta: 8.0,
            alpha0: syn.alpha,
            outer_iters: 1,
            image_lr: 0.1,
            alpha_lr: 0.01,
            balance: true,
            terminal_only: false,
            policy: AugmentationPolicy::disabled(),
            seed: 0,
        };
        let start = traj.checkpoints[start_epoch].clone();
        let reference = outer_step(&traj, start_epoch, &start, &syn, &cfg, 0)?;

        let (traj_ref, cfg_ref, syn_ref, start_ref) = (&traj, &cfg, &syn, &start);
        let fd_images = finite_diff(
            |images| {
                let probe = SyntheticDataset {
                    images: images.clone(),
                    labels: syn_ref.labels.clone(),
                    alpha: syn_ref.alpha,
                };
                Ok(outer_step(traj_ref, start_epoch, start_ref, &probe, cfg_ref, 0)?.total_loss)
            },
            &syn.images,
            eps,
        )?;
        out.push(CheckResult {
            name: format!("meta/images/steps={n}"),
            max_rel_err: max_rel_error(&reference.image_grad, &fd_images),
            tol,
        });

        let fd_alpha = finite_diff(
            |alpha| {
                let probe = SyntheticDataset {
                    images: syn_ref.images.clone(),
                    labels: syn_ref.labels.clone(),
                    alpha: alpha.scalar_value()?,
                };
                Ok(outer_step(traj_ref, start_epoch, start_ref, &probe, cfg_ref, 0)?.total_loss)
            },
            &Tensor::scalar(syn.alpha),
            eps,
        )?;
        let alpha_err = (reference.alpha_grad - fd_alpha.data()[0]).abs()
            / fd_alpha.data()[0].abs().max(1e-10);
        out.push(CheckResult {
            name: format!("meta/alpha/steps={n}"),
            max_rel_err: alpha_err,
            tol,
        });
    }
    Ok(out)
}

/// Every suite, concatenated.
pub fn full_suite(eps: f64) -> Result<Vec<CheckResult>> {
    let mut all = first_order_suite(eps)?;
    all.extend(second_order_suite(eps)?);
    all.extend(meta_suite(eps)?);
    Ok(all)
}
