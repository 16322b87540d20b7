//! `distillery distill`: align student parameter flow to saved expert
//! trajectories, learning synthetic pixels and the student learning rate.

use std::fs;
use std::path::PathBuf;

use distillery_core::buffer::{load_trajectory, Trajectory, MANIFEST_FILE};
use distillery_core::data::SyntheticDataset;
use distillery_core::distill::{representative_init, run_distillation_with, save_synthetic};
use distillery_core::eval::evaluate;

use crate::commands::prepare;
use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

/// `{out}/buffer/expert_*` directories, sorted for a deterministic order.
fn discover_trajectory_dirs(buffer_root: &std::path::Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    if !buffer_root.is_dir() {
        return Ok(dirs);
    }
    for entry in fs::read_dir(buffer_root).map_err(|e| io_err(buffer_root, e))? {
        let path = entry.map_err(|e| io_err(buffer_root, e))?.path();
        if path.is_dir() && path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let prep = prepare(cfg)?;
    let out_dir = cfg.run.out.join("distill");
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    let dirs = if cfg.distill.trajectories.is_empty() {
        let found = discover_trajectory_dirs(&cfg.run.out.join("buffer"))?;
        if found.is_empty() {
            return Err(CliError::Config(format!(
                "distill.trajectories: no expert directories under {}; run `distillery buffer` first or pass --trajectories",
                cfg.run.out.join("buffer").display()
            )));
        }
        found
    } else {
        cfg.distill.trajectories.clone()
    };

    let fingerprint = prep.train.fingerprint();
    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let traj = load_trajectory(dir)?;
        if traj.meta.dataset_fingerprint != fingerprint {
            eprintln!(
                "warning: {} was trained on different data (fingerprint {} vs {})",
                dir.display(),
                traj.meta.dataset_fingerprint,
                fingerprint
            );
        }
        trajectories.push(traj);
    }
    println!("loaded {} expert trajectories", trajectories.len());

    let dcfg = cfg.to_distill_config();
    let syn0 = representative_init(
        &prep.train,
        &trajectories[0],
        cfg.distill.ipc,
        cfg.distill.alpha0,
        dcfg.seed,
    )?;

    if let Some(name) = &cfg.distill.ablate {
        println!("ablation preset active: {name}");
    }

    let every = cfg.distill.eval_every;
    let progress_every = (cfg.distill.outer_iters / 10).max(1);
    let mut snapshots: Vec<(usize, SyntheticDataset)> = Vec::new();
    let (syn, log) = run_distillation_with(&trajectories, syn0, &dcfg, |iter, state, row| {
        let done = iter + 1;
        if !row.skipped && (done % progress_every == 0 || done == cfg.distill.outer_iters) {
            println!(
                "iter {done:>5}/{}: loss {:.6}, alpha {:.4}",
                cfg.distill.outer_iters, row.total_loss, row.alpha
            );
        }
        if every > 0 && done % every == 0 {
            snapshots.push((done, state.clone()));
        }
    })?;

    save_synthetic(&out_dir, &syn, &dcfg, &log)?;
    let skipped = log.rows.iter().filter(|r| r.skipped).count();
    println!(
        "distilled {} images ({} outer iterations, {} skipped); final alpha {:.4}",
        syn.len(),
        log.rows.len(),
        skipped,
        syn.alpha
    );
    println!("synthetic dataset -> {}", out_dir.display());

    if !snapshots.is_empty() {
        let policy = cfg.to_policy();
        let mut csv = String::from("iteration,mean,std,diverged\n");
        for (done, snap) in &snapshots {
            let report = evaluate(
                snap,
                &prep.spec,
                &prep.test,
                &cfg.eval.seeds,
                cfg.eval.iters,
                &policy,
                &format!("snapshot_{done}"),
            )?;
            println!(
                "  snapshot at iter {done}: test accuracy {:.3} +/- {:.3}",
                report.mean, report.std
            );
            csv.push_str(&format!(
                "{done},{},{},{}\n",
                report.mean, report.std, report.diverged
            ));
        }
        let path = out_dir.join("eval_log.csv");
        fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    }

    prep.echo.echo_to(&out_dir)?;
    Ok(())
}
