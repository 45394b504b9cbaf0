//! `grid-search`: runs repeated evolution over the cross product of GA
//! parameters (eta x crossover kind x truncation proportion), keeps each
//! cell's best run, trains the cell champion, and tabulates the final
//! attack metrics.

use nascty_core::evolution::{self, CrossoverKind, EvolutionConfig, TrainingFitness, SENTINEL_FITNESS};
use nascty_core::genome;
use nascty_core::rng::{self, tag};
use serde_json::json;

use crate::commands::eval_genome::train_and_attack;
use crate::commands::evolve::workers_from_env;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::util::{ensure_out_dir, load_profiling_split, load_traceset};
use crate::GridSearchArgs;

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub eta: f64,
    pub crossover: CrossoverKind,
    pub truncation: f64,
}

/// Cross product in deterministic order: eta outer, crossover middle,
/// truncation inner.
pub fn grid_cells(etas: &[f64], crossovers: &[CrossoverKind], truncations: &[f64]) -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(etas.len() * crossovers.len() * truncations.len());
    for &eta in etas {
        for &crossover in crossovers {
            for &truncation in truncations {
                cells.push(GridCell { eta, crossover, truncation });
            }
        }
    }
    cells
}

pub fn run(args: GridSearchArgs) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    if args.repeats == 0 {
        return Err(CliError::Validation("repeats must be positive".into()));
    }
    let crossovers: Vec<CrossoverKind> = args.crossovers.iter().map(|&c| c.into()).collect();
    let cells = grid_cells(&args.etas, &crossovers, &args.truncations);

    let train = load_profiling_split(&args.train, "training")?;
    let valid = load_profiling_split(&args.val, "validation")?;
    let attack = load_traceset(&args.attack)?;

    let workers = args
        .workers
        .or(workers_from_env()?)
        .unwrap_or_else(|| EvolutionConfig::default().parallel_workers);

    let mut csv = String::from(
        "eta,crossover,truncation,repeats,best_fitness,mean_key_rank_final,traces_to_rank0,mean_incremental_key_rank\n",
    );
    let mut manifest = RunManifest::new(
        "grid-search",
        json!({
            "etas": args.etas,
            "crossovers": crossovers.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "truncations": args.truncations,
            "repeats": args.repeats,
            "population": args.population,
            "generations": args.generations,
            "epochs": args.epochs,
            "eval_epochs": args.eval_epochs,
            "folds": args.folds,
            "attack_traces": args.attack_traces,
            "seed": args.seed,
        }),
    );
    manifest.add_input(&args.train)?;
    manifest.add_input(&args.val)?;
    manifest.add_input(&args.attack)?;

    for (cell_idx, cell) in cells.iter().enumerate() {
        let mut best: Option<(f64, genome::Genome)> = None;
        for repeat in 0..args.repeats {
            let cfg = EvolutionConfig {
                population_size: args.population,
                max_generations: args.generations,
                tournament_size: 3,
                truncation_proportion: cell.truncation,
                crossover_kind: cell.crossover,
                eta: cell.eta,
                train_epochs: args.epochs,
                batch_size: args.batch_size,
                learning_rate: args.learning_rate,
                master_seed: rng::mix(&[args.seed, tag::GRID_CELL, cell_idx as u64, repeat as u64]),
                parallel_workers: workers,
            };
            cfg.validate()?;
            let fitness = TrainingFitness::new(&train, &valid, &cfg);
            let state = evolution::run(&cfg, &fitness)?;
            if let (Some(genome), Some(fit)) = (state.best_genome, state.best_fitness) {
                if best.as_ref().map_or(true, |(b, _)| fit < *b) {
                    best = Some((fit, genome));
                }
            }
        }
        let (best_fitness, champion) = best.ok_or_else(|| {
            CliError::Internal(format!("grid cell {cell_idx} produced no champion"))
        })?;
        if best_fitness >= SENTINEL_FITNESS {
            return Err(CliError::Data(format!(
                "grid cell {cell_idx}: every genome was inexpressible on {}-sample traces; \
                 use longer traces or more generations",
                train.n_samples()
            )));
        }

        let champion_path = args.out.join(format!("cell-{cell_idx}-champion.json"));
        std::fs::write(&champion_path, genome::serialize_genome(&champion) + "\n")?;
        manifest.add_artifact(&champion_path)?;

        let outcome = train_and_attack(
            &champion,
            &train,
            &attack,
            args.eval_epochs,
            args.batch_size,
            args.learning_rate,
            args.folds,
            args.attack_traces,
            rng::mix(&[args.seed, tag::GRID_CELL, cell_idx as u64, u64::MAX]),
        )?;
        let report = outcome.report;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            cell.eta,
            cell.crossover,
            cell.truncation,
            args.repeats,
            best_fitness,
            report.ge_curve.last().copied().unwrap_or(f64::NAN),
            report.traces_to_rank0.map_or("not reached".to_string(), |t| t.to_string()),
            report.mean_incremental_key_rank
        ));
        println!(
            "cell {cell_idx} (eta {}, {}, truncation {}): best fitness {:.6}, MIKR {:.5}",
            cell.eta, cell.crossover, cell.truncation, best_fitness, report.mean_incremental_key_rank
        );
    }

    let results_path = args.out.join("results.csv");
    std::fs::write(&results_path, csv)?;
    manifest.add_artifact(&results_path)?;
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}
