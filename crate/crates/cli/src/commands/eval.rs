//! `distillery eval`: train fresh networks on a distilled set — or on a
//! random-subset / full-data reference — and report test accuracy.

use std::fs;
use std::path::{Path, PathBuf};

use distillery_core::distill::load_synthetic;
use distillery_core::eval::{baseline_full, baseline_random_subset, evaluate, mean_std, EvalReport};

use crate::commands::{prepare, Prepared};
use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    /// ipc random real images per class, averaged over several draws.
    RandomSubset,
    /// The entire real training set (upper bound).
    Full,
}

#[derive(Debug)]
pub enum Target {
    Synthetic(PathBuf),
    Baseline(Baseline),
}

impl Target {
    pub fn from_flags(synthetic: Option<PathBuf>, baseline: Option<Baseline>) -> Result<Self> {
        match (synthetic, baseline) {
            (Some(dir), None) => Ok(Target::Synthetic(dir)),
            (None, Some(b)) => Ok(Target::Baseline(b)),
            (None, None) => Err(CliError::config(
                "pass --synthetic DIR or --baseline <random-subset|full>",
            )),
            (Some(_), Some(_)) => {
                unreachable!("--synthetic and --baseline are declared mutually exclusive")
            }
        }
    }
}

pub fn run(cfg: &RunConfig, target: Target) -> Result<()> {
    let prep = prepare(cfg)?;
    let baseline_lr = cfg.eval.baseline_lr.unwrap_or(cfg.distill.alpha0);

    let (tag, reports) = match &target {
        Target::Synthetic(dir) => {
            let (syn, _) = load_synthetic(dir)?;
            println!(
                "evaluating {} distilled images from {} (alpha {:.4})",
                syn.len(),
                dir.display(),
                syn.alpha
            );
            let report = eval_one(cfg, &prep, &syn, "distilled")?;
            ("distilled", vec![report])
        }
        Target::Baseline(Baseline::Full) => {
            let syn = baseline_full(&prep.train, baseline_lr)?;
            println!(
                "evaluating the full training set ({} images, lr {baseline_lr})",
                syn.len()
            );
            let report = eval_one(cfg, &prep, &syn, "full")?;
            ("full", vec![report])
        }
        Target::Baseline(Baseline::RandomSubset) => {
            println!(
                "evaluating {} random {}-per-class subsets (lr {baseline_lr})",
                cfg.eval.subset_seeds.len(),
                cfg.distill.ipc
            );
            let mut reports = Vec::with_capacity(cfg.eval.subset_seeds.len());
            for &subset_seed in &cfg.eval.subset_seeds {
                let syn =
                    baseline_random_subset(&prep.train, cfg.distill.ipc, subset_seed, baseline_lr)?;
                reports.push(eval_one(cfg, &prep, &syn, &format!("random_subset_{subset_seed}"))?);
            }
            let means: Vec<f64> = reports.iter().map(|r| r.mean).collect();
            let (mean, std) = mean_std(&means);
            println!(
                "random-subset baseline across {} draws: {mean:.3} +/- {std:.3}",
                means.len()
            );
            ("random_subset", reports)
        }
    };

    let out_dir = cfg.run.out.join("eval").join(tag);
    write_reports(&out_dir, &reports)?;
    prep.echo.echo_to(&out_dir)?;
    println!("reports -> {}", out_dir.display());
    Ok(())
}

fn eval_one(
    cfg: &RunConfig,
    prep: &Prepared,
    syn: &distillery_core::data::SyntheticDataset,
    tag: &str,
) -> Result<EvalReport> {
    let policy = cfg.to_policy();
    let report = evaluate(
        syn,
        &prep.spec,
        &prep.test,
        &cfg.eval.seeds,
        cfg.eval.iters,
        &policy,
        tag,
    )?;
    println!(
        "  {tag}: test accuracy {:.3} +/- {:.3} over {} seeds ({} diverged)",
        report.mean,
        report.std,
        report.seeds.len(),
        report.diverged
    );
    Ok(report)
}

/// `report.json` (array of reports) + `report.csv` (one row per seed).
fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(reports)
        .map_err(|e| CliError::Config(format!("could not serialize reports: {e}")))?;
    fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;

    let mut csv = String::from("tag,seed,iters,accuracy\n");
    for report in reports {
        // csv_rows carries its own header; keep just the data lines.
        let rows = report.csv_rows();
        let body = rows.split_once('\n').map_or("", |(_, body)| body);
        csv.push_str(body);
    }
    let csv_path = dir.join("report.csv");
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))
}
