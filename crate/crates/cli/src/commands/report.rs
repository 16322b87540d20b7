//! `distillery report`: merge run directories into one long-format CSV
//! (`run_id,phase,iteration,metric,value`) ready for external plotting.
//!
//! A run directory is recognized by its marker file — `manifest.json`
//! (expert trajectory), `run_log.csv` (distillation), `report.json`
//! (evaluation) — and roots are walked recursively, so passing one output
//! root picks up every phase underneath it. Numeric values are copied
//! verbatim from the source files, so a re-parse sees identical values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use distillery_core::buffer::{load_trajectory, MANIFEST_FILE};
use distillery_core::distill::{RunLog, RUN_LOG_FILE};
use distillery_core::eval::EvalReport;

use crate::error::{io_err, CliError, Result};

pub const HEADER: &str = "run_id,phase,iteration,metric,value";

const EVAL_LOG_FILE: &str = "eval_log.csv";
const REPORT_FILE: &str = "report.json";

pub fn run(dirs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut csv = String::from(HEADER);
    csv.push('\n');
    let mut runs = 0usize;

    for root in dirs {
        if !root.is_dir() {
            eprintln!("warning: skipping {}: not a directory", root.display());
            continue;
        }
        runs += walk(root, &mut csv)?;
    }
    if runs == 0 {
        return Err(CliError::config(
            "no readable run directories found (expected manifest.json, run_log.csv, or report.json)",
        ));
    }

    match out {
        Some(path) => {
            fs::write(path, csv).map_err(|e| io_err(path, e))?;
            println!("merged {runs} run(s) -> {}", path.display());
        }
        None => {
            print!("{csv}");
            eprintln!("merged {runs} run(s)");
        }
    }
    Ok(())
}

/// Emits every run directory under `dir` (including `dir` itself); returns
/// how many were merged. Malformed run directories are skipped with a
/// warning on stderr.
fn walk(dir: &Path, csv: &mut String) -> Result<usize> {
    let is_run = dir.join(MANIFEST_FILE).is_file()
        || dir.join(RUN_LOG_FILE).is_file()
        || dir.join(REPORT_FILE).is_file();
    if is_run {
        return match emit_run(dir, csv) {
            Ok(()) => Ok(1),
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", dir.display());
                Ok(0)
            }
        };
    }

    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut found = 0;
    for sub in subdirs {
        found += walk(&sub, csv)?;
    }
    Ok(found)
}

/// All rows for one run directory, buffered so a malformed directory
/// contributes nothing at all.
fn emit_run(dir: &Path, csv: &mut String) -> Result<()> {
    // Commas would break the long format; paths with them get sanitized.
    let run_id = dir.display().to_string().replace(',', "_");
    let mut rows = String::new();
    if dir.join(MANIFEST_FILE).is_file() {
        emit_buffer(dir, &run_id, &mut rows)?;
    }
    if dir.join(RUN_LOG_FILE).is_file() {
        emit_distill(dir, &run_id, &mut rows)?;
    }
    if dir.join(REPORT_FILE).is_file() {
        emit_eval(dir, &run_id, &mut rows)?;
    }
    csv.push_str(&rows);
    Ok(())
}

fn emit_buffer(dir: &Path, run_id: &str, rows: &mut String) -> Result<()> {
    let traj = load_trajectory(dir)?;
    for (epoch, acc) in traj.meta.train_accuracy.iter().enumerate() {
        let _ = writeln!(rows, "{run_id},buffer,{},train_accuracy,{acc}", epoch + 1);
    }
    for (epoch, acc) in traj.meta.test_accuracy.iter().enumerate() {
        let _ = writeln!(rows, "{run_id},buffer,{},test_accuracy,{acc}", epoch + 1);
    }
    let _ = writeln!(
        rows,
        "{run_id},buffer,{},avg_var,{}",
        traj.meta.epochs, traj.diagnostics.avg_var
    );
    Ok(())
}

fn malformed(path: &Path, detail: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {detail}", path.display()))
}

fn emit_distill(dir: &Path, run_id: &str, rows: &mut String) -> Result<()> {
    let path = dir.join(RUN_LOG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == RunLog::CSV_HEADER => {}
        Some(other) => return Err(malformed(&path, format!("unexpected header {other:?}"))),
        None => return Err(malformed(&path, "empty file")),
    }
    for (index, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(malformed(
                &path,
                format!("line {}: expected 10 fields, found {}", index + 2, fields.len()),
            ));
        }
        let iter: usize = fields[0]
            .parse()
            .map_err(|_| malformed(&path, format!("line {}: bad iteration", index + 2)))?;
        let skipped = fields[9].trim() == "true";
        if skipped {
            let _ = writeln!(rows, "{run_id},distill,{iter},skipped,1");
            continue;
        }
        for (metric, value) in [
            ("nu", fields[3]),
            ("total_loss", fields[5]),
            ("alpha", fields[6]),
            ("image_grad_norm", fields[7]),
            ("alpha_grad", fields[8]),
        ] {
            let _ = writeln!(rows, "{run_id},distill,{iter},{metric},{value}");
        }
        if !fields[4].is_empty() {
            for (point, value) in fields[4].split(';').enumerate() {
                let _ = writeln!(rows, "{run_id},distill,{iter},point_loss_{point},{value}");
            }
        }
    }

    let eval_log = dir.join(EVAL_LOG_FILE);
    if eval_log.is_file() {
        let text = fs::read_to_string(&eval_log).map_err(|e| io_err(&eval_log, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("iteration,mean,std,diverged") => {}
            Some(other) => {
                return Err(malformed(&eval_log, format!("unexpected header {other:?}")))
            }
            None => return Err(malformed(&eval_log, "empty file")),
        }
        for (index, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(malformed(
                    &eval_log,
                    format!("line {}: expected 4 fields, found {}", index + 2, fields.len()),
                ));
            }
            let iter: usize = fields[0].parse().map_err(|_| {
                malformed(&eval_log, format!("line {}: bad iteration", index + 2))
            })?;
            for (metric, value) in
                [("eval_mean", fields[1]), ("eval_std", fields[2]), ("eval_diverged", fields[3])]
            {
                let _ = writeln!(rows, "{run_id},distill,{iter},{metric},{value}");
            }
        }
    }
    Ok(())
}

fn emit_eval(dir: &Path, run_id: &str, rows: &mut String) -> Result<()> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let reports: Vec<EvalReport> =
        serde_json::from_str(&text).map_err(|e| malformed(&path, e))?;
    for report in &reports {
        for (seed, acc) in report.seeds.iter().zip(&report.per_seed_accuracy) {
            let _ = writeln!(rows, "{run_id},eval,{seed},accuracy/{},{acc}", report.tag);
        }
        let _ = writeln!(rows, "{run_id},eval,0,mean/{},{}", report.tag, report.mean);
        let _ = writeln!(rows, "{run_id},eval,0,std/{},{}", report.tag, report.std);
        let _ = writeln!(rows, "{run_id},eval,0,diverged/{},{}", report.tag, report.diverged);
    }
    Ok(())
}
