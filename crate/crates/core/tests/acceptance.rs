//! Release gate: one test per shipping criterion, each printing a single
//! PASS/FAIL line with its measured numbers.
//!
//! Every check here recomputes its expectation independently of the library
//! (closed forms, hand-unrolled derivatives, exhaustive search) rather than
//! comparing the library to itself.

use std::io::Write as _;
use std::time::{Duration, Instant};

use distillery_core::augment::AugmentationPolicy;
use distillery_core::buffer::{
    self, momentum_step, save_trajectory, train_expert, velocity_history_term, MomentumState,
    OptimizerSettings, SmoothnessConfig, Trajectory, TrajectoryMeta,
};
use distillery_core::data::{gen_blobs, load_idx, split, BlobShape, LabeledDataset, SyntheticDataset};
use distillery_core::distill::{
    balance_coefficient, inner_loss, match_schedule, matching_loss, outer_step, perturb_weights,
    representative_init, run_distillation, save_synthetic, load_synthetic, BetaMode, DistillConfig,
    MatchPoint,
};
use distillery_core::distill::kmeans::kmeans;
use distillery_core::error::Error;
use distillery_core::eval::{baseline_full, baseline_random_subset, evaluate};
use distillery_core::gradcheck::{full_suite, FIRST_ORDER_TOL, SECOND_ORDER_TOL};
use distillery_core::graph::Graph;
use distillery_core::models::{init_params, ModelKind, ModelSpec, ParamVector};
use distillery_core::rng::substream;
use distillery_core::tensor::Tensor;
use rand::Rng;

/// Prints one report line per criterion, bypassing the test harness's
/// output capture so the verdicts stay visible in a plain `cargo test` run.
fn report(criterion: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "acceptance criterion {criterion} ({name}): {verdict} [{:.2}s] {detail}\n",
        elapsed.as_secs_f64()
    );
    std::io::stdout().lock().write_all(line.as_bytes()).expect("stdout is writable");
}

fn mlp(depth: usize, width: usize, input: Vec<usize>, classes: usize) -> ModelSpec {
    ModelSpec { kind: ModelKind::Mlp, depth, width, input_shape: input, num_classes: classes }
}

// ---------------------------------------------------------------------------
// Criterion 1: every derivative path agrees with central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_oracles() {
    let budget = Duration::from_secs(60);
    let started = Instant::now();

    let results = full_suite(1e-5).expect("oracle suite runs");
    let mut failures = Vec::new();
    let mut worst_first = 0.0f64;
    let mut worst_second = 0.0f64;
    for r in &results {
        if r.tol == FIRST_ORDER_TOL {
            worst_first = worst_first.max(r.max_rel_err);
        } else {
            worst_second = worst_second.max(r.max_rel_err);
        }
        if !r.pass() {
            failures.push(format!("{} rel err {:.3e} (tol {:.0e})", r.name, r.max_rel_err, r.tol));
        }
    }
    let elapsed = started.elapsed();
    let pass = failures.is_empty() && elapsed < budget && results.len() > 30;
    report(
        1,
        "gradient oracles",
        pass,
        elapsed,
        &format!(
            "{} checks; worst first-order {:.2e} (tol {:.0e}), worst higher-order {:.2e} (tol {:.0e}){}",
            results.len(),
            worst_first,
            FIRST_ORDER_TOL,
            worst_second,
            SECOND_ORDER_TOL,
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    );
    assert!(pass, "criterion 1 failed: {failures:?}, elapsed {elapsed:?}");
}

// ---------------------------------------------------------------------------
// Criterion 2: momentum recurrence equals its closed form; the history term
// vanishes identically without momentum.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_momentum_identities() {
    let budget = Duration::from_secs(1);
    let started = Instant::now();

    let spec = mlp(0, 0, vec![2], 3); // 9 parameters
    let layout = spec.layout().clone();
    let dim = layout.total;
    let mut rng = substream(42, "acceptance-momentum");
    let rand_pv = |rng: &mut rand_chacha::ChaCha8Rng| {
        let data: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ParamVector::from_flat(layout.clone(), Tensor::new(vec![dim], data).unwrap()).unwrap()
    };

    let theta0 = rand_pv(&mut rng);
    let grads: Vec<ParamVector> = (0..10).map(|_| rand_pv(&mut rng)).collect();
    let (gamma, eta) = (0.9, 0.3);

    // Closed form: v_t = η · Σ_{k≤t} γ^{t−k} g_k and θ_t = θ_0 − Σ_{j≤t} v_j,
    // accumulated directly from the definition.
    let mut params = theta0.clone();
    let mut state = MomentumState::new(dim, gamma, eta).unwrap();
    let mut max_v_err = 0.0f64;
    let mut max_p_err = 0.0f64;
    let mut closed_updates = vec![0.0f64; dim];
    for (t, grad) in grads.iter().enumerate() {
        let (next, next_state) = momentum_step(&params, grad, state).unwrap();
        params = next;
        state = next_state;

        let mut v_closed = vec![0.0f64; dim];
        for (k, g) in grads.iter().take(t + 1).enumerate() {
            let w = eta * gamma.powi((t - k) as i32);
            for (vc, gv) in v_closed.iter_mut().zip(g.flat().data()) {
                *vc += w * gv;
            }
        }
        for i in 0..dim {
            closed_updates[i] += v_closed[i];
            max_v_err = max_v_err.max((state.velocity().data()[i] - v_closed[i]).abs());
            let p_closed = theta0.flat().data()[i] - closed_updates[i];
            max_p_err = max_p_err.max((params.flat().data()[i] - p_closed).abs());
        }
    }

    // Without momentum the history part of the velocity is exactly zero.
    let mut plain = MomentumState::new(dim, 0.0, eta).unwrap();
    let mut max_history = 0.0f64;
    let mut theta = theta0;
    for grad in &grads {
        let (next, next_state) = momentum_step(&theta, grad, plain).unwrap();
        theta = next;
        plain = next_state;
        let history = velocity_history_term(&plain, grad).unwrap();
        max_history = max_history.max(history.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    let elapsed = started.elapsed();
    let pass = max_v_err < 1e-12 && max_p_err < 1e-12 && max_history == 0.0 && elapsed < budget;
    report(
        2,
        "momentum identities",
        pass,
        elapsed,
        &format!(
            "10-step closed form: velocity err {max_v_err:.2e}, parameter err {max_p_err:.2e}; history term at γ=0: {max_history:.1e}"
        ),
    );
    assert!(pass, "criterion 2 failed");
}

// ---------------------------------------------------------------------------
// Shared fixtures for the training-based criteria.
// ---------------------------------------------------------------------------

const EXPERT_ETA: f64 = 0.3;
const EXPERT_GAMMA: f64 = 0.8;
const EXPERT_EPOCHS: usize = 20;
const EXPERT_BATCH: usize = 32;

fn smoothness_on() -> SmoothnessConfig {
    SmoothnessConfig { mu: 0.5, k_target: 0.15, lambda_start: 0.5, ramp_epochs: 6 }
}

fn optimizer(gamma: f64) -> OptimizerSettings {
    OptimizerSettings { eta: EXPERT_ETA, gamma, batch_size: EXPERT_BATCH }
}

fn blobs_split(per_class: usize, spread: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let data = gen_blobs(3, per_class, BlobShape::Vector(6), spread, seed).unwrap();
    split(&data, 0.25, seed ^ 0xA5A5).unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 3: momentum roughens the trajectory; the smoothness loss tames it
// without costing accuracy.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_smoothness_direction() {
    let budget = Duration::from_secs(300);
    let started = Instant::now();

    let (train, test) = blobs_split(60, 0.12, 11);
    let spec = mlp(1, 12, vec![6], 3);

    let plain = train_expert(
        &train,
        Some(&test),
        &spec,
        &SmoothnessConfig::disabled(),
        &optimizer(0.0),
        EXPERT_EPOCHS,
        7,
    )
    .unwrap();
    let momentum = train_expert(
        &train,
        Some(&test),
        &spec,
        &SmoothnessConfig::disabled(),
        &optimizer(EXPERT_GAMMA),
        EXPERT_EPOCHS,
        7,
    )
    .unwrap();
    let smooth = train_expert(
        &train,
        Some(&test),
        &spec,
        &smoothness_on(),
        &optimizer(EXPERT_GAMMA),
        EXPERT_EPOCHS,
        7,
    )
    .unwrap();

    let (av_plain, av_mom, av_smooth) = (
        plain.diagnostics.avg_var,
        momentum.diagnostics.avg_var,
        smooth.diagnostics.avg_var,
    );
    let acc_plain = *plain.meta.test_accuracy.last().unwrap();
    let acc_smooth = *smooth.meta.test_accuracy.last().unwrap();

    let roughens = av_mom >= 5.0 * av_plain;
    let tames = av_smooth <= 0.5 * av_mom;
    let keeps_accuracy = acc_smooth >= acc_plain - 0.01;

    let elapsed = started.elapsed();
    let pass = roughens && tames && keeps_accuracy && elapsed < budget;
    report(
        3,
        "smoothness direction",
        pass,
        elapsed,
        &format!(
            "avg_var plain {av_plain:.3e}, momentum {av_mom:.3e} ({:.1}x), smoothed {av_smooth:.3e} ({:.2}x of momentum); accuracy plain {acc_plain:.3} vs smoothed {acc_smooth:.3}",
            av_mom / av_plain,
            av_smooth / av_mom
        ),
    );
    assert!(pass, "criterion 3 failed");
}

// ---------------------------------------------------------------------------
// Criterion 4: the distilled set beats a random subset of the same size and
// approaches full-data accuracy.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_end_to_end_distillation() {
    let budget = Duration::from_secs(600);
    let started = Instant::now();

    let (train, test) = blobs_split(100, 0.15, 29);
    // A linear softmax student: small enough that two hundred outer
    // iterations of unrolled meta-gradients stay well inside the time
    // budget, and convex enough that every evaluation seed converges.
    let spec = mlp(0, 0, vec![6], 3);

    // The gradient penalty acts directly on ||W^T (p - y)|| for a linear
    // model, so it needs a much lighter weight than the hidden-layer
    // network uses; 0.05 smooths the trajectory without capping accuracy.
    let smoothness = SmoothnessConfig {
        mu: 0.05,
        k_target: 0.15,
        lambda_start: 0.5,
        ramp_epochs: 6,
    };
    let experts: Vec<Trajectory> = [7u64, 8]
        .iter()
        .map(|&seed| {
            train_expert(
                &train,
                None,
                &spec,
                &smoothness,
                &optimizer(EXPERT_GAMMA),
                EXPERT_EPOCHS,
                seed,
            )
            .unwrap()
        })
        .collect();

    let cfg = DistillConfig {
        intervals: 2,
        student_steps: 15,
        max_start_epoch: 4,
        ipc: 1,
        beta_mode: BetaMode::Equal,
        rho: 0.05,
        vartheta: 8.0,
        alpha0: 0.1,
        outer_iters: 200,
        image_lr: 0.3,
        alpha_lr: 0.005,
        balance: true,
        terminal_only: false,
        policy: AugmentationPolicy::disabled(),
        seed: 77,
    };
    let syn0 = representative_init(&train, &experts[0], cfg.ipc, cfg.alpha0, cfg.seed).unwrap();
    let (syn, log) = run_distillation(&experts, syn0, &cfg).unwrap();
    assert_eq!(log.rows.len(), cfg.outer_iters);

    let eval_seeds = [101u64, 102, 103];
    let eval_iters = 300;
    let policy = AugmentationPolicy::disabled();

    let distilled = evaluate(&syn, &spec, &test, &eval_seeds, eval_iters, &policy, "distilled").unwrap();

    // Random-subset baseline: three independent draws, each scored the same
    // way as the distilled set, then averaged.  The baselines get a fixed
    // learning rate chosen for them (0.2 scores higher than the distilled
    // set's starting rate on both baselines), so the comparison does not
    // lean on a handicapped opponent.
    let baseline_lr = 0.2;
    let mut subset_means = Vec::new();
    for subset_seed in [201u64, 202, 203] {
        let subset = baseline_random_subset(&train, cfg.ipc, subset_seed, baseline_lr).unwrap();
        let rep = evaluate(&subset, &spec, &test, &eval_seeds, eval_iters, &policy, "subset").unwrap();
        subset_means.push(rep.mean);
    }
    let subset_mean = subset_means.iter().sum::<f64>() / subset_means.len() as f64;

    let full = baseline_full(&train, baseline_lr).unwrap();
    let full_report = evaluate(&full, &spec, &test, &eval_seeds, eval_iters, &policy, "full").unwrap();

    let beats_random = distilled.mean >= subset_mean + 0.05;
    let near_full = distilled.mean >= 0.9 * full_report.mean;

    let elapsed = started.elapsed();
    let pass = beats_random && near_full && distilled.diverged == 0 && elapsed < budget;
    report(
        4,
        "end-to-end distillation",
        pass,
        elapsed,
        &format!(
            "distilled {:.3} vs random subset {:.3} (gap {:+.3}) vs full data {:.3} (ratio {:.3}); learned alpha {:.4}",
            distilled.mean,
            subset_mean,
            distilled.mean - subset_mean,
            full_report.mean,
            distilled.mean / full_report.mean,
            syn.alpha
        ),
    );
    assert!(pass, "criterion 4 failed");
}

// ---------------------------------------------------------------------------
// Criterion 5: the balance coefficient compresses inner-loss variation across
// start epochs, and its exact values check out.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_balanced_loss() {
    let started = Instant::now();

    let (train, test) = blobs_split(60, 0.12, 11);
    let spec = mlp(1, 12, vec![6], 3);
    // A momentum expert: its checkpoints sweep from chance-level to
    // confident, which is the loss-decay regime the balance coefficient is
    // built to flatten.
    let expert = train_expert(
        &train,
        Some(&test),
        &spec,
        &SmoothnessConfig::disabled(),
        &optimizer(EXPERT_GAMMA),
        EXPERT_EPOCHS,
        7,
    )
    .unwrap();
    let max_start = 8usize;
    let syn = representative_init(&train, &expert, 1, 0.05, 5).unwrap();

    // A student pinned to each start checkpoint, scored on the same fixed
    // synthetic set: the raw inner loss decays with training, the balanced
    // one is flattened by ν.
    let policy = AugmentationPolicy::disabled();
    let mut plain_losses = Vec::new();
    let mut balanced_losses = Vec::new();
    for start in 0..=max_start {
        let graph = Graph::first_order();
        let student = expert.checkpoints[start].to_graph_vars(&graph).unwrap();
        let images = graph.var(syn.images.clone()).unwrap();
        let plain =
            inner_loss(&spec, &student, &images, &syn.labels, &policy, 0, 1.0).unwrap();
        let value = plain.scalar_value().unwrap();
        plain_losses.push(value);
        balanced_losses.push(value * balance_coefficient(start, max_start, 8.0));
    }
    let ratio = |vals: &[f64]| {
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    };
    let plain_ratio = ratio(&plain_losses);
    let balanced_ratio = ratio(&balanced_losses);
    let compresses = balanced_ratio < plain_ratio;

    // Exact values: at the midpoint ν = ln ϑ; the below-midpoint branch is
    // bit-for-bit the reciprocal of the mirrored above-midpoint branch,
    // because both evaluate the same logarithm.
    let mid_exact = (balance_coefficient(5, 10, 8.0) - 8.0f64.ln()).abs() < 1e-12
        && (balance_coefficient(2, 4, 8.0) - 8.0f64.ln()).abs() < 1e-12;
    let mut reciprocal = true;
    for x in 1..=5usize {
        let hi = balance_coefficient(5 + x, 10, 8.0);
        let lo = balance_coefficient(5 - x, 10, 8.0);
        reciprocal &= lo.to_bits() == (1.0 / hi).to_bits();
    }

    let elapsed = started.elapsed();
    let pass = compresses && mid_exact && reciprocal;
    report(
        5,
        "balanced inner loss",
        pass,
        elapsed,
        &format!(
            "max/min raw {plain_ratio:.2} vs balanced {balanced_ratio:.2}; midpoint = ln 8 {mid_exact}; branch reciprocity {reciprocal}"
        ),
    );
    assert!(pass, "criterion 5 failed: plain {plain_losses:?} balanced {balanced_losses:?}");
}

// ---------------------------------------------------------------------------
// Criterion 6: closed-form unit checks against independent oracles.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_formula_units() {
    let budget = Duration::from_secs(10);
    let started = Instant::now();
    let mut failures: Vec<String> = Vec::new();

    // Matching schedule 30 steps / 3 intervals → {10, 20, 30}.
    let schedule = match_schedule(30, 3).unwrap();
    let expected = vec![
        MatchPoint { student_step: 10, expert_offset: 1 },
        MatchPoint { student_step: 20, expert_offset: 2 },
        MatchPoint { student_step: 30, expert_offset: 3 },
    ];
    if schedule != expected {
        failures.push(format!("schedule {schedule:?}"));
    }

    // Matching loss is 0 when the student sits on the target and 1 when it
    // sits on the start.
    let spec = mlp(0, 0, vec![2], 2);
    let start = init_params(&spec, 1).unwrap();
    let target = init_params(&spec, 2).unwrap();
    let graph = Graph::first_order();
    let at_target = target.to_graph_vars(&graph).unwrap();
    let zero = matching_loss(&graph, &at_target, &start, &target).unwrap().scalar_value().unwrap();
    let at_start = start.to_graph_vars(&graph).unwrap();
    let one = matching_loss(&graph, &at_start, &start, &target).unwrap().scalar_value().unwrap();
    if zero.abs() > 1e-12 || (one - 1.0).abs() > 1e-12 {
        failures.push(format!("matching trivial values {zero} / {one}"));
    }

    // Per-filter Frobenius equality of the perturbation, and the ρ=0 identity.
    let conv_spec = ModelSpec {
        kind: ModelKind::Convnet,
        depth: 1,
        width: 3,
        input_shape: vec![1, 4, 4],
        num_classes: 2,
    };
    let params = init_params(&conv_spec, 9).unwrap();
    let rho = 0.17;
    let perturbed = perturb_weights(&params, rho, &mut substream(3, "acceptance-perturb")).unwrap();
    for (idx, rec) in params.layout().records.iter().enumerate() {
        let before = params.record_tensor(idx);
        let after = perturbed.record_tensor(idx);
        for (f, (b, a)) in before
            .data()
            .chunks(rec.filter_len())
            .zip(after.data().chunks(rec.filter_len()))
            .enumerate()
        {
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let delta: Vec<f64> = b.iter().zip(a).map(|(x, y)| y - x).collect();
            if (norm(&delta) - rho * norm(b)).abs() > 1e-10 {
                failures.push(format!("filter {f} of {} breaks Frobenius equality", rec.name));
            }
        }
    }
    let identity = perturb_weights(&params, 0.0, &mut substream(3, "acceptance-perturb")).unwrap();
    if identity.flat().data() != params.flat().data() {
        failures.push("rho = 0 is not the identity".into());
    }

    // K-means inertia equals the exhaustive-partition optimum for n=8, K=2.
    let pts: Vec<[f64; 2]> = vec![
        [0.1, 0.2],
        [0.15, 0.1],
        [0.05, 0.3],
        [0.2, 0.25],
        [0.9, 0.8],
        [0.85, 0.95],
        [0.8, 0.85],
        [0.95, 0.7],
    ];
    let flat: Vec<f64> = pts.iter().flatten().copied().collect();
    let tensor = Tensor::new(vec![8, 2], flat).unwrap();
    let result = kmeans(&tensor, 2, 4, 50).unwrap();
    let mut best = f64::MAX;
    for mask in 1..(1u32 << 8) - 1 {
        let (mut mean_a, mut mean_b) = ([0.0f64; 2], [0.0f64; 2]);
        let (mut na, mut nb) = (0usize, 0usize);
        for (i, p) in pts.iter().enumerate() {
            if mask & (1 << i) != 0 {
                mean_a[0] += p[0];
                mean_a[1] += p[1];
                na += 1;
            } else {
                mean_b[0] += p[0];
                mean_b[1] += p[1];
                nb += 1;
            }
        }
        for v in &mut mean_a {
            *v /= na as f64;
        }
        for v in &mut mean_b {
            *v /= nb as f64;
        }
        let mut inertia = 0.0;
        for (i, p) in pts.iter().enumerate() {
            let m = if mask & (1 << i) != 0 { &mean_a } else { &mean_b };
            inertia += (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
        }
        best = best.min(inertia);
    }
    if (result.inertia - best).abs() > 1e-9 {
        failures.push(format!("kmeans inertia {} vs exhaustive {}", result.inertia, best));
    }

    let elapsed = started.elapsed();
    let pass = failures.is_empty() && elapsed < budget;
    report(
        6,
        "formula units",
        pass,
        elapsed,
        &format!(
            "schedule, trivial matching, perturbation norms, identity, kmeans-vs-exhaustive ({})",
            if failures.is_empty() { "all agree".to_string() } else { failures.join("; ") }
        ),
    );
    assert!(pass, "criterion 6 failed: {failures:?}");
}

// ---------------------------------------------------------------------------
// Criterion 7: with every extension disabled, one outer step reproduces the
// vanilla trajectory-matching meta-gradient, hand-unrolled here from scratch.
// ---------------------------------------------------------------------------

/// Softmax probabilities for one logit row.
fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::MIN, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy gradients for a linear softmax classifier:
/// logits_i = W x_i + b with W of shape [classes × dim].
fn linear_grads(
    w: &[f64],
    b: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
    classes: usize,
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let m = xs.len() as f64;
    let mut gw = vec![0.0; classes * dim];
    let mut gb = vec![0.0; classes];
    for (x, &y) in xs.iter().zip(ys) {
        let z: Vec<f64> =
            (0..classes).map(|c| b[c] + (0..dim).map(|d| w[c * dim + d] * x[d]).sum::<f64>()).collect();
        let p = softmax(&z);
        for c in 0..classes {
            let diff = (p[c] - if c == y { 1.0 } else { 0.0 }) / m;
            gb[c] += diff;
            for d in 0..dim {
                gw[c * dim + d] += diff * x[d];
            }
        }
    }
    (gw, gb)
}

#[test]
fn criterion_7_vanilla_recovery() {
    let started = Instant::now();

    let (classes, dim, m, n_steps) = (3usize, 5usize, 3usize, 3usize);
    let spec = mlp(0, 0, vec![dim], classes); // 18 parameters
    let epochs = 3usize;
    let checkpoints: Vec<ParamVector> =
        (0..=epochs).map(|k| init_params(&spec, 300 + k as u64).unwrap()).collect();
    let traj = Trajectory {
        spec: spec.clone(),
        checkpoints,
        meta: TrajectoryMeta {
            seed: 0,
            epochs,
            optimizer: OptimizerSettings { eta: 0.1, gamma: 0.0, batch_size: 1 },
            smoothness: SmoothnessConfig::disabled(),
            dataset_fingerprint: "vanilla-fixture".into(),
            train_accuracy: Vec::new(),
            test_accuracy: Vec::new(),
        },
        diagnostics: Default::default(),
    };

    let mut rng = substream(55, "acceptance-vanilla");
    let image_data: Vec<f64> = (0..m * dim).map(|_| rng.gen_range(0.1..0.9)).collect();
    let syn = SyntheticDataset {
        images: Tensor::new(vec![m, dim, 1, 1], image_data.clone()).unwrap(),
        labels: vec![0, 1, 2],
        alpha: 0.07,
    };

    // Everything off: no perturbation, no balancing, terminal matching only,
    // equal interval weights.
    let cfg = DistillConfig {
        intervals: 1,
        student_steps: n_steps,
        max_start_epoch: 2,
        ipc: 1,
        beta_mode: BetaMode::Equal,
        rho: 0.0,
        vartheta: 8.0,
        alpha0: syn.alpha,
        outer_iters: 1,
        image_lr: 0.1,
        alpha_lr: 0.01,
        balance: false,
        terminal_only: true,
        policy: AugmentationPolicy::disabled(),
        seed: 0,
    };
    let start_epoch = 1usize;
    let start = traj.checkpoints[start_epoch].clone();
    let engine = outer_step(&traj, start_epoch, &start, &syn, &cfg, 0).unwrap();

    // ---- Independent hand-unrolled reference ----
    let alpha = syn.alpha;
    let xs: Vec<Vec<f64>> = (0..m).map(|i| image_data[i * dim..(i + 1) * dim].to_vec()).collect();
    let ys = syn.labels.clone();
    let split_wb = |pv: &ParamVector| {
        let flat = pv.flat().data();
        (flat[..classes * dim].to_vec(), flat[classes * dim..].to_vec())
    };
    let (w0, b0) = split_wb(&start);
    let (wt, bt) = split_wb(&traj.checkpoints[start_epoch + 1]);

    // Forward: N plain SGD steps, keeping every iterate.
    let mut ws = vec![w0.clone()];
    let mut bs = vec![b0.clone()];
    for n in 0..n_steps {
        let (gw, gb) = linear_grads(&ws[n], &bs[n], &xs, &ys, classes, dim);
        ws.push(ws[n].iter().zip(&gw).map(|(p, g)| p - alpha * g).collect());
        bs.push(bs[n].iter().zip(&gb).map(|(p, g)| p - alpha * g).collect());
    }

    let den: f64 = w0.iter().zip(&wt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        + b0.iter().zip(&bt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();

    // Reverse accumulation through θ_{n+1} = θ_n − α·G(θ_n, X).
    let mut ubar_w: Vec<f64> =
        ws[n_steps].iter().zip(&wt).map(|(a, b)| 2.0 * (a - b) / den).collect();
    let mut ubar_b: Vec<f64> =
        bs[n_steps].iter().zip(&bt).map(|(a, b)| 2.0 * (a - b) / den).collect();
    let mut d_alpha = 0.0f64;
    let mut d_images = vec![0.0f64; m * dim];

    for n in (0..n_steps).rev() {
        let (w, b) = (&ws[n], &bs[n]);
        let (gw, gb) = linear_grads(w, b, &xs, &ys, classes, dim);
        d_alpha -= ubar_w.iter().zip(&gw).map(|(u, g)| u * g).sum::<f64>()
            + ubar_b.iter().zip(&gb).map(|(u, g)| u * g).sum::<f64>();

        // Per-sample pieces shared by the Hessian-vector product and the
        // mixed parameter/input second derivative.
        let mf = m as f64;
        let mut hvp_w = vec![0.0f64; classes * dim];
        let mut hvp_b = vec![0.0f64; classes];
        for (i, (x, &_y)) in xs.iter().zip(&ys).enumerate() {
            let z: Vec<f64> = (0..classes)
                .map(|c| b[c] + (0..dim).map(|d| w[c * dim + d] * x[d]).sum::<f64>())
                .collect();
            let p = softmax(&z);
            // dz = Uw x + ub for the parameter direction (ubar).
            let dz: Vec<f64> = (0..classes)
                .map(|c| ubar_b[c] + (0..dim).map(|d| ubar_w[c * dim + d] * x[d]).sum::<f64>())
                .collect();
            let pdz: f64 = p.iter().zip(&dz).map(|(pc, dc)| pc * dc).sum();
            let dp: Vec<f64> = (0..classes).map(|c| p[c] * (dz[c] - pdz)).collect();
            for c in 0..classes {
                hvp_b[c] += dp[c] / mf;
                for d in 0..dim {
                    hvp_w[c * dim + d] += dp[c] * x[d] / mf;
                }
            }
            // ∂/∂x_i of ⟨ubar, G(θ, X)⟩ = Uwᵀ(p − e_y)/m + Wᵀ dp/m.
            let y = ys[i];
            for d in 0..dim {
                let mut v = 0.0;
                for c in 0..classes {
                    v += ubar_w[c * dim + d] * (p[c] - if c == y { 1.0 } else { 0.0 });
                    v += w[c * dim + d] * dp[c];
                }
                d_images[i * dim + d] -= alpha * v / mf;
            }
        }
        for (u, h) in ubar_w.iter_mut().zip(&hvp_w) {
            *u -= alpha * h;
        }
        for (u, h) in ubar_b.iter_mut().zip(&hvp_b) {
            *u -= alpha * h;
        }
    }

    let image_err = engine
        .image_grad
        .data()
        .iter()
        .zip(&d_images)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let alpha_err = (engine.alpha_grad - d_alpha).abs();

    let elapsed = started.elapsed();
    let pass = image_err < 1e-10 && alpha_err < 1e-10;
    report(
        7,
        "vanilla recovery",
        pass,
        elapsed,
        &format!(
            "hand-unrolled reference over {n_steps} steps: pixel gradient err {image_err:.2e}, alpha gradient err {alpha_err:.2e}"
        ),
    );
    assert!(pass, "criterion 7 failed: image {image_err:.3e} alpha {alpha_err:.3e}");
}

// ---------------------------------------------------------------------------
// Criterion 8: artifacts survive a round trip bit-for-bit, corruption is
// caught, and the IDX reader parses a known fixture.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_persistence() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut failures: Vec<String> = Vec::new();

    // Trajectory round trip.
    let (train, _) = blobs_split(12, 0.1, 31);
    let spec = mlp(1, 6, vec![6], 3);
    let traj = train_expert(
        &train,
        None,
        &spec,
        &SmoothnessConfig::disabled(),
        &OptimizerSettings { eta: 0.2, gamma: 0.5, batch_size: 16 },
        3,
        13,
    )
    .unwrap();
    let traj_dir = dir.path().join("expert");
    save_trajectory(&traj, &traj_dir).unwrap();
    let loaded = buffer::load_trajectory(&traj_dir).unwrap();
    let bits = |pv: &ParamVector| pv.flat().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = traj.checkpoints.len() == loaded.checkpoints.len()
        && traj
            .checkpoints
            .iter()
            .zip(&loaded.checkpoints)
            .all(|(a, b)| bits(a) == bits(b));
    if !same {
        failures.push("trajectory round trip is not bit-exact".into());
    }

    // Synthetic-dataset round trip.
    let syn = SyntheticDataset {
        images: Tensor::new(vec![3, 6, 1, 1], (0..18).map(|i| i as f64 / 17.0).collect()).unwrap(),
        labels: vec![0, 1, 2],
        alpha: 0.031_25,
    };
    let cfg = DistillConfig::default();
    let syn_dir = dir.path().join("syn");
    save_synthetic(&syn_dir, &syn, &cfg, &Default::default()).unwrap();
    let (syn_back, cfg_back) = load_synthetic(&syn_dir).unwrap();
    let syn_same = syn_back
        .images
        .data()
        .iter()
        .zip(syn.images.data())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && syn_back.labels == syn.labels
        && syn_back.alpha.to_bits() == syn.alpha.to_bits()
        && cfg_back == cfg;
    if !syn_same {
        failures.push("synthetic round trip is not bit-exact".into());
    }

    // Corruption detection: flip one payload byte of a checkpoint.
    let victim = traj_dir.join("epoch_0001.bin");
    let mut bytes = std::fs::read(&victim).unwrap();
    let at = bytes.len() - 9;
    bytes[at] ^= 0x40;
    std::fs::write(&victim, &bytes).unwrap();
    match buffer::load_trajectory(&traj_dir) {
        Err(Error::ChecksumFailure(_)) => {}
        other => failures.push(format!(
            "corrupted checkpoint not caught: {:?}",
            other.map(|_| "loaded fine")
        )),
    }

    // IDX fixture with known contents: two 2×3 images, pixel k has value k.
    let images_path = dir.path().join("fixture-images.idx");
    let labels_path = dir.path().join("fixture-labels.idx");
    let mut image_bytes = Vec::new();
    image_bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    for dim in [2u32, 2, 3] {
        image_bytes.extend_from_slice(&dim.to_be_bytes());
    }
    image_bytes.extend((0u8..12).map(|v| v * 20));
    std::fs::write(&images_path, &image_bytes).unwrap();
    let mut label_bytes = Vec::new();
    label_bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    label_bytes.extend_from_slice(&2u32.to_be_bytes());
    label_bytes.extend_from_slice(&[1u8, 0]);
    std::fs::write(&labels_path, &label_bytes).unwrap();

    let parsed = load_idx(&images_path, &labels_path).unwrap();
    let shape_ok = parsed.images.shape() == [2, 1, 2, 3];
    let value_ok = (0..12).all(|k| {
        (parsed.images.data()[k] - (k as f64 * 20.0) / 255.0).abs() < 1e-15
    });
    let labels_ok = parsed.labels == vec![1, 0] && parsed.class_count == 2;
    if !(shape_ok && value_ok && labels_ok) {
        failures.push(format!(
            "IDX fixture mismatch: shape {:?}, labels {:?}",
            parsed.images.shape(),
            parsed.labels
        ));
    }

    let elapsed = started.elapsed();
    let pass = failures.is_empty();
    report(
        8,
        "persistence",
        pass,
        elapsed,
        &format!(
            "trajectory + synthetic round trips, checksum corruption, IDX fixture ({})",
            if failures.is_empty() { "all hold".to_string() } else { failures.join("; ") }
        ),
    );
    assert!(pass, "criterion 8 failed: {failures:?}");
}
