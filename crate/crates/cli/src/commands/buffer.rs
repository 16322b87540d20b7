//! `distillery buffer`: train one expert trajectory per seed and save each
//! under `{out}/buffer/expert_{seed}/`.

use std::fs;

use distillery_core::buffer::{save_trajectory, train_expert, Trajectory};

use crate::commands::prepare;
use crate::config::RunConfig;
use crate::error::{io_err, Result};

pub fn run(cfg: &RunConfig) -> Result<()> {
    let prep = prepare(cfg)?;
    let root = cfg.run.out.join("buffer");
    fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;

    let optimizer = cfg.to_optimizer();
    let smoothness = cfg.to_smoothness();
    let seeds = &cfg.buffer.expert_seeds;
    let workers = cfg.effective_threads(seeds.len())?;

    println!(
        "training {} expert(s) for {} epochs on {} samples ({} worker{})",
        seeds.len(),
        cfg.buffer.epochs,
        prep.train.len(),
        workers,
        if workers == 1 { "" } else { "s" },
    );

    let mut trajectories: Vec<(u64, Trajectory)> = Vec::with_capacity(seeds.len());
    for wave in seeds.chunks(workers) {
        let wave_results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&seed| {
                    let (train, test, spec) = (&prep.train, &prep.test, &prep.spec);
                    let (optimizer, smoothness) = (&optimizer, &smoothness);
                    let epochs = cfg.buffer.epochs;
                    scope.spawn(move || {
                        train_expert(train, Some(test), spec, smoothness, optimizer, epochs, seed)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("expert training thread panicked"))
                .collect()
        });
        for (&seed, result) in wave.iter().zip(wave_results) {
            trajectories.push((seed, result?));
        }
    }

    for (seed, traj) in &trajectories {
        let dir = root.join(format!("expert_{seed}"));
        save_trajectory(traj, &dir)?;
        println!("expert {seed} -> {}", dir.display());
        let tests = &traj.meta.test_accuracy;
        for (e, train_acc) in traj.meta.train_accuracy.iter().enumerate() {
            match tests.get(e) {
                Some(test_acc) => println!(
                    "  epoch {:>3}: train accuracy {train_acc:.3}, test accuracy {test_acc:.3}",
                    e + 1
                ),
                None => println!("  epoch {:>3}: train accuracy {train_acc:.3}", e + 1),
            }
        }
        println!("  avg_var {:.6e}", traj.diagnostics.avg_var);
    }

    let mean_avg_var = trajectories
        .iter()
        .map(|(_, t)| t.diagnostics.avg_var)
        .sum::<f64>()
        / trajectories.len() as f64;
    println!("mean avg_var across experts: {mean_avg_var:.6e}");

    prep.echo.echo_to(&root)?;
    Ok(())
}
