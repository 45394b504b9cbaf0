//! `evolve`: runs the generational search over a training/validation pair,
//! writing a per-generation CSV log, a digest-protected checkpoint after
//! every generation, and the best-so-far genome.
//!
//! Configuration precedence: defaults < TOML file < NASCTY_WORKERS < flags.
//! Resuming continues bit-exactly: the log of a resumed run is identical
//! to the log of an uninterrupted one.

use std::path::Path;

use nascty_core::evolution::{
    self, EvolutionConfig, GenerationRecord, RunState, TrainingFitness,
};
use nascty_core::genome;

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::util::{ensure_out_dir, load_profiling_split};
use crate::EvolveArgs;

pub const GENERATIONS_CSV: &str = "generations.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const CHAMPION_FILE: &str = "champion.json";

pub fn workers_from_env() -> CliResult<Option<usize>> {
    match std::env::var("NASCTY_WORKERS") {
        Ok(raw) => {
            let n: usize = raw.parse().map_err(|_| {
                CliError::Validation(format!("NASCTY_WORKERS must be a positive integer, got `{raw}`"))
            })?;
            if n == 0 {
                return Err(CliError::Validation("NASCTY_WORKERS must be positive".into()));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Builds the effective configuration for a fresh run.
pub fn assemble_config(args: &EvolveArgs) -> CliResult<EvolutionConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            toml::from_str::<EvolutionConfig>(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        None => EvolutionConfig::default(),
    };
    if let Some(n) = workers_from_env()? {
        cfg.parallel_workers = n;
    }
    apply_flag_overrides(&mut cfg, args);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_flag_overrides(cfg: &mut EvolutionConfig, args: &EvolveArgs) {
    if let Some(v) = args.population {
        cfg.population_size = v;
    }
    if let Some(v) = args.generations {
        cfg.max_generations = v;
    }
    if let Some(v) = args.tournament_size {
        cfg.tournament_size = v;
    }
    if let Some(v) = args.truncation {
        cfg.truncation_proportion = v;
    }
    if let Some(v) = args.crossover {
        cfg.crossover_kind = v.into();
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.epochs {
        cfg.train_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = args.workers {
        cfg.parallel_workers = v;
    }
}

/// Rewrites the whole CSV from the records so interrupted and resumed runs
/// produce byte-identical logs. Durations stay out of this file (they are
/// wall-clock and would break reproducibility); they live in the
/// checkpoint records and the manifest.
pub fn write_generations_csv(records: &[GenerationRecord], path: &Path) -> CliResult<()> {
    let mut text = String::from("generation,best_fitness,mean_fitness,diversity\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.generation, r.best_fitness, r.mean_fitness, r.diversity
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_champion(state: &RunState, path: &Path) -> CliResult<()> {
    if let Some(genome) = &state.best_genome {
        std::fs::write(path, genome::serialize_genome(genome) + "\n")?;
    }
    Ok(())
}

pub fn run(args: EvolveArgs) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    let checkpoint_path = args.out.join(CHECKPOINT_FILE);
    let csv_path = args.out.join(GENERATIONS_CSV);
    let champion_path = args.out.join(CHAMPION_FILE);

    let mut state = match &args.resume {
        Some(path) => {
            let mut state = evolution::resume(path)?;
            // only run-neutral knobs may change on resume
            if let Some(gens) = args.generations {
                state.config.max_generations = gens;
            }
            if let Some(n) = workers_from_env()? {
                state.config.parallel_workers = n;
            }
            if let Some(n) = args.workers {
                state.config.parallel_workers = n;
            }
            state.config.validate()?;
            state
        }
        None => {
            let cfg = assemble_config(&args)?;
            evolution::init_run(&cfg)?
        }
    };

    let train = load_profiling_split(&args.train, "training")?;
    let valid = load_profiling_split(&args.val, "validation")?;
    if train.n_samples() != valid.n_samples() {
        return Err(CliError::Validation(format!(
            "training traces have {} samples but validation traces have {}",
            train.n_samples(),
            valid.n_samples()
        )));
    }

    let fitness = TrainingFitness::new(&train, &valid, &state.config);
    let config_snapshot = serde_json::to_value(&state.config)?;

    evolution::run_generations(&mut state, &fitness, |s| {
        evolution::checkpoint(s, &checkpoint_path)?;
        write_generations_csv(&s.records, &csv_path).map_err(cli_to_evo)?;
        write_champion(s, &champion_path).map_err(cli_to_evo)?;
        if let Some(rec) = s.records.last() {
            println!(
                "generation {}: best {:.6} mean {:.6} best-so-far {:.6} ({:.1}s)",
                rec.generation,
                rec.best_fitness,
                rec.mean_fitness,
                rec.best_so_far_fitness,
                rec.duration_secs
            );
        }
        Ok(())
    })?;

    let mut manifest = RunManifest::new("evolve", config_snapshot);
    manifest.add_input(&args.train)?;
    manifest.add_input(&args.val)?;
    for artifact in [&checkpoint_path, &csv_path, &champion_path] {
        if artifact.exists() {
            manifest.add_artifact(artifact)?;
        }
    }
    manifest.write(&args.out.join("manifest.json"))?;

    if let (Some(genome), Some(fitness)) = (&state.best_genome, state.best_fitness) {
        println!(
            "champion fitness {fitness:.6}: {} -> {}",
            genome_shape(genome),
            champion_path.display()
        );
    }
    Ok(())
}

fn genome_shape(genome: &nascty_core::Genome) -> String {
    format!(
        "{} conv block(s), {} dense layer(s)",
        genome.conv_blocks.len(),
        genome.dense_layers.len()
    )
}

fn cli_to_evo(err: CliError) -> evolution::EvolutionError {
    evolution::EvolutionError::Io(std::io::Error::other(err.to_string()))
}
