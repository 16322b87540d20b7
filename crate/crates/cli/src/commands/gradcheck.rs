//! `distillery gradcheck`: run every analytic derivative against central
//! finite differences — tensor ops, the gradient-penalty parameter gradient,
//! and the full unrolled meta-gradient on a tiny model.

use std::fs;

use distillery_core::gradcheck::full_suite;

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

pub fn run(cfg: &RunConfig, eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(CliError::Config(format!("--eps must be positive and finite, got {eps}")));
    }

    let results = full_suite(eps)?;
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for check in &results {
        let status = if check.pass() { "pass" } else { "FAIL" };
        println!(
            "{status}  {:<width$}  max rel err {:>12.5e}  (tol {:.0e})",
            check.name, check.max_rel_err, check.tol
        );
        if !check.pass() {
            failed += 1;
        }
    }

    let out_dir = cfg.run.out.join("gradcheck");
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    let json_path = out_dir.join("report.json");
    let text = serde_json::to_string_pretty(&results)
        .map_err(|e| CliError::Config(format!("could not serialize results: {e}")))?;
    fs::write(&json_path, text).map_err(|e| io_err(&json_path, e))?;
    cfg.echo_to(&out_dir)?;

    if failed > 0 {
        return Err(CliError::Verification(format!(
            "{failed} of {} derivative checks failed",
            results.len()
        )));
    }
    println!("all {} derivative checks passed (eps {eps:e})", results.len());
    Ok(())
}
