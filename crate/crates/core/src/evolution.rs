//! The generational loop: fitness evaluation by short training, tournament
//! selection over a truncated elite pool, offspring production via
//! crossover + mutation, and checkpointing.
//!
//! Every random stream is derived from `(master_seed, purpose, generation)`,
//! so runs are bit-identical regardless of worker count or interruption:
//! a checkpoint only needs the configuration, the generation index, and the
//! population to reproduce the remainder of a run exactly. All networks in
//! one generation train with the same seed so genomes compare fairly.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::genome::{self, Genome};
use crate::neural_engine::{cce_loss, init_parameters};
use crate::rng::{self, tag};
use crate::trace_model::TraceSet;

/// Worst-fitness sentinel for inexpressible genomes and failed trainings.
/// The clamped cross-entropy cannot exceed `-ln(1e-12) ~ 27.6`, so this
/// orders after every real fitness while staying JSON-representable.
pub const SENTINEL_FITNESS: f64 = 1e9;

pub const CHECKPOINT_MAGIC: &str = "NASCTY-CHECKPOINT-V1";

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported checkpoint version `{0}`")]
    UnsupportedCheckpointVersion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossoverKind {
    OnePoint,
    ParameterWise,
}

impl std::fmt::Display for CrossoverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CrossoverKind::OnePoint => write!(f, "one-point"),
            CrossoverKind::ParameterWise => write!(f, "parameter-wise"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub tournament_size: usize,
    pub truncation_proportion: f64,
    pub crossover_kind: CrossoverKind,
    pub eta: f64,
    pub train_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub master_seed: u64,
    pub parallel_workers: usize,
}

impl Default for EvolutionConfig {
    /// The best-performing grid-search cell: eta 20, one-point crossover,
    /// truncation proportion 1.0; ten training epochs per fitness
    /// evaluation, tournament size 3.
    fn default() -> Self {
        EvolutionConfig {
            population_size: 52,
            max_generations: 10,
            tournament_size: 3,
            truncation_proportion: 1.0,
            crossover_kind: CrossoverKind::OnePoint,
            eta: 20.0,
            train_epochs: 10,
            batch_size: 100,
            learning_rate: 1e-3,
            master_seed: 0,
            parallel_workers: 4,
        }
    }
}

/// Elite pool size: the top `ceil(truncation_proportion * n)` genomes.
pub fn truncation_pool_size(truncation_proportion: f64, population_size: usize) -> usize {
    ((truncation_proportion * population_size as f64).ceil() as usize).clamp(1, population_size)
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let fail = |msg: String| Err(EvolutionError::InvalidConfig(msg));
        if self.population_size < 2 || self.population_size % 2 != 0 {
            return fail(format!(
                "population_size must be even and at least 2, got {}",
                self.population_size
            ));
        }
        if self.max_generations == 0 {
            return fail("max_generations must be positive".into());
        }
        if !(self.truncation_proportion > 0.0 && self.truncation_proportion <= 1.0) {
            return fail(format!(
                "truncation_proportion must lie in (0, 1], got {}",
                self.truncation_proportion
            ));
        }
        let pool = truncation_pool_size(self.truncation_proportion, self.population_size);
        if self.tournament_size == 0 || self.tournament_size > pool {
            return fail(format!(
                "tournament_size {} must lie in [1, truncation pool size {pool}]",
                self.tournament_size
            ));
        }
        if !(self.eta > 0.0) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if self.train_epochs == 0 || self.batch_size == 0 {
            return fail("train_epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.parallel_workers == 0 {
            return fail("parallel_workers must be positive".into());
        }
        Ok(())
    }
}

/// Bookkeeping for one evaluated generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Per-genome fitness in population order (validation cross-entropy,
    /// or [`SENTINEL_FITNESS`] for inexpressible genomes).
    pub fitness: Vec<f64>,
    pub best_genome: Genome,
    pub best_fitness: f64,
    pub best_so_far_fitness: f64,
    /// Mean fitness over expressible genomes; sentinel when none exist.
    pub mean_fitness: f64,
    /// Mean pairwise layer-count distance.
    pub diversity: f64,
    pub duration_secs: f64,
    /// Digest of the generation's derived RNG stream identity.
    pub rng_digest: String,
}

/// Anything that can score a genome. Training-based fitness is the real
/// implementation; tests substitute cheap surrogates.
pub trait FitnessFn: Sync {
    /// `train_seed` is fixed per generation so all genomes compare fairly.
    fn evaluate(&self, genome: &Genome, train_seed: u64) -> f64;
}

/// Fitness = categorical cross-entropy on the validation set after
/// expressing the genome and training it for a fixed number of epochs.
pub struct TrainingFitness {
    train_x: ndarray::Array2<f64>,
    train_y: Vec<u8>,
    valid_x: ndarray::Array2<f64>,
    valid_y: Vec<u8>,
    input_length: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
}

impl TrainingFitness {
    pub fn new(train: &TraceSet, valid: &TraceSet, cfg: &EvolutionConfig) -> Self {
        TrainingFitness {
            train_x: train.to_matrix(),
            train_y: train.labels().to_vec(),
            valid_x: valid.to_matrix(),
            valid_y: valid.labels().to_vec(),
            input_length: train.n_samples(),
            epochs: cfg.train_epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
        }
    }
}

impl FitnessFn for TrainingFitness {
    fn evaluate(&self, genome: &Genome, train_seed: u64) -> f64 {
        let specs = match genome::express(genome, self.input_length) {
            Ok(specs) => specs,
            Err(err) => {
                log::debug!("inexpressible genome gets sentinel fitness: {err}");
                return SENTINEL_FITNESS;
            }
        };
        let result = init_parameters(specs, self.input_length, train_seed).and_then(|mut net| {
            net.train(
                &self.train_x,
                &self.train_y,
                self.epochs,
                self.batch_size,
                self.learning_rate,
                train_seed,
            )?;
            let probs = net.forward(&self.valid_x)?;
            cce_loss(&probs, &self.valid_y)
        });
        match result {
            Ok(fitness) if fitness.is_finite() => fitness,
            Ok(bad) => {
                log::warn!("non-finite fitness {bad}, using sentinel");
                SENTINEL_FITNESS
            }
            Err(err) => {
                log::warn!("training failed, using sentinel fitness: {err}");
                SENTINEL_FITNESS
            }
        }
    }
}

/// Scores one genome exactly as the evolutionary loop would in a
/// generation whose training seed is `train_seed`.
pub fn evaluate_fitness(
    genome: &Genome,
    train: &TraceSet,
    valid: &TraceSet,
    cfg: &EvolutionConfig,
    train_seed: u64,
) -> f64 {
    TrainingFitness::new(train, valid, cfg).evaluate(genome, train_seed)
}

/// Deterministic population order: fitness ascending, ties broken by the
/// canonical genome serialization, then by insertion index.
fn ranked_indices(genomes: &[Genome], fitness: &[f64]) -> Vec<usize> {
    let keys: Vec<String> = genomes.iter().map(genome::serialize_genome).collect();
    let mut order: Vec<usize> = (0..genomes.len()).collect();
    order.sort_by(|&a, &b| {
        fitness[a]
            .partial_cmp(&fitness[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| keys[a].cmp(&keys[b]))
            .then_with(|| a.cmp(&b))
    });
    order
}

/// Tournament selection over the truncated elite: the candidate pool is
/// the top `ceil(truncation_proportion * n)` genomes; each of the `n / 2`
/// parents is the fittest of `tournament_size` pool members drawn
/// uniformly with replacement.
pub fn select_parents(
    genomes: &[Genome],
    fitness: &[f64],
    cfg: &EvolutionConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Genome> {
    assert_eq!(genomes.len(), fitness.len(), "fitness must be assigned");
    let order = ranked_indices(genomes, fitness);
    let pool_size = truncation_pool_size(cfg.truncation_proportion, genomes.len());
    let n_parents = genomes.len() / 2;
    let mut parents = Vec::with_capacity(n_parents);
    for _ in 0..n_parents {
        // pool position doubles as rank, so the winner is the minimum draw
        let mut winner = rng.random_range(0..pool_size);
        for _ in 1..cfg.tournament_size {
            winner = winner.min(rng.random_range(0..pool_size));
        }
        parents.push(genomes[order[winner]].clone());
    }
    parents
}

fn crossover(
    kind: CrossoverKind,
    a: &Genome,
    b: &Genome,
    rng: &mut ChaCha8Rng,
) -> (Genome, Genome) {
    match kind {
        CrossoverKind::OnePoint => genome::one_point_crossover(a, b, rng),
        CrossoverKind::ParameterWise => genome::parameterwise_crossover(a, b, rng),
    }
}

/// Offspring production over injected operators, so tests can substitute
/// identity crossover and no-op mutation.
fn produce_offspring_with(
    parents: &[Genome],
    rng: &mut ChaCha8Rng,
    mut cross: impl FnMut(&Genome, &Genome, &mut ChaCha8Rng) -> (Genome, Genome),
    mut mutate: impl FnMut(Genome, &mut ChaCha8Rng) -> Genome,
) -> Vec<Genome> {
    let n = parents.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut offspring = Vec::with_capacity(n);
    for pair in order.chunks(2) {
        match *pair {
            [a, b] => {
                let (c1, c2) = cross(&parents[a], &parents[b], rng);
                offspring.push(mutate(c1, rng));
                offspring.push(mutate(c2, rng));
            }
            [leftover] => {
                // odd parent count: borrow a random mate, keep one child
                let mate = if n > 1 {
                    let mut m = rng.random_range(0..n - 1);
                    if m >= leftover {
                        m += 1;
                    }
                    m
                } else {
                    leftover
                };
                let (c1, c2) = cross(&parents[leftover], &parents[mate], rng);
                let keep = if rng.random_bool(0.5) { c1 } else { c2 };
                offspring.push(mutate(keep, rng));
            }
            _ => unreachable!("chunks of 2"),
        }
    }
    offspring
}

/// Pairs parents by a uniform random matching; each pair yields two
/// children via the configured crossover followed by mutation. The
/// offspring count equals the parent count.
pub fn produce_offspring(
    parents: &[Genome],
    cfg: &EvolutionConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Genome> {
    produce_offspring_with(
        parents,
        rng,
        |a, b, r| crossover(cfg.crossover_kind, a, b, r),
        |child, r| genome::mutate(&child, cfg.eta, r),
    )
}

/// Complete, resumable run state. Serialized as the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub config: EvolutionConfig,
    /// Index of the next generation to evaluate.
    pub next_generation: usize,
    pub population: Vec<Genome>,
    pub best_genome: Option<Genome>,
    pub best_fitness: Option<f64>,
    pub records: Vec<GenerationRecord>,
}

/// Fresh state with a seeded random initial population.
pub fn init_run(cfg: &EvolutionConfig) -> Result<RunState, EvolutionError> {
    cfg.validate()?;
    let mut init_rng = rng::stream(cfg.master_seed, tag::INIT_POPULATION, 0);
    let population = (0..cfg.population_size)
        .map(|_| genome::random_genome(&mut init_rng))
        .collect();
    Ok(RunState {
        config: cfg.clone(),
        next_generation: 0,
        population,
        best_genome: None,
        best_fitness: None,
        records: Vec::new(),
    })
}

fn mean_pairwise_diversity(population: &[Genome]) -> f64 {
    let n = population.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += population[i].layer_count_distance(&population[j]);
        }
    }
    total as f64 / (n * (n - 1) / 2) as f64
}

/// Advances the state until `next_generation == config.max_generations`,
/// invoking `on_generation` after every evaluated generation (checkpoint
/// and log writers hook in here). Fitness evaluations run on a dedicated
/// thread pool of `parallel_workers` threads; scheduling cannot affect
/// results because evaluations share one generation-derived seed.
pub fn run_generations(
    state: &mut RunState,
    fitness_fn: &dyn FitnessFn,
    mut on_generation: impl FnMut(&RunState) -> Result<(), EvolutionError>,
) -> Result<(), EvolutionError> {
    state.config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(state.config.parallel_workers)
        .build()
        .map_err(|e| EvolutionError::InvalidConfig(format!("thread pool: {e}")))?;

    while state.next_generation < state.config.max_generations {
        let generation = state.next_generation;
        let started = Instant::now();
        let train_seed = rng::mix(&[state.config.master_seed, tag::TRAIN, generation as u64]);

        let fitness: Vec<f64> = pool.install(|| {
            state
                .population
                .par_iter()
                .map(|g| fitness_fn.evaluate(g, train_seed))
                .collect()
        });

        let order = ranked_indices(&state.population, &fitness);
        let best_idx = order[0];
        let best_fitness = fitness[best_idx];
        if state.best_fitness.map_or(true, |f| best_fitness < f) {
            state.best_fitness = Some(best_fitness);
            state.best_genome = Some(state.population[best_idx].clone());
        }
        let expressible: Vec<f64> = fitness
            .iter()
            .copied()
            .filter(|&f| f < SENTINEL_FITNESS)
            .collect();
        let mean_fitness = if expressible.is_empty() {
            SENTINEL_FITNESS
        } else {
            expressible.iter().sum::<f64>() / expressible.len() as f64
        };
        let record = GenerationRecord {
            generation,
            fitness: fitness.clone(),
            best_genome: state.population[best_idx].clone(),
            best_fitness,
            best_so_far_fitness: state.best_fitness.expect("set above"),
            mean_fitness,
            diversity: mean_pairwise_diversity(&state.population),
            duration_secs: started.elapsed().as_secs_f64(),
            rng_digest: format!(
                "{:016x}",
                rng::mix(&[state.config.master_seed, tag::GENETIC_OPS, generation as u64])
            ),
        };
        state.records.push(record);

        let mut ops_rng = rng::stream(state.config.master_seed, tag::GENETIC_OPS, generation as u64);
        let parents = select_parents(&state.population, &fitness, &state.config, &mut ops_rng);
        let offspring = produce_offspring(&parents, &state.config, &mut ops_rng);
        debug_assert_eq!(parents.len() + offspring.len(), state.config.population_size);
        let mut next = parents;
        next.extend(offspring);
        state.population = next;
        state.next_generation = generation + 1;
        on_generation(state)?;
    }
    Ok(())
}

/// Convenience wrapper: initialize, run to `max_generations`, return the
/// final state. The champion is the best genome ever evaluated.
pub fn run(cfg: &EvolutionConfig, fitness_fn: &dyn FitnessFn) -> Result<RunState, EvolutionError> {
    let mut state = init_run(cfg)?;
    run_generations(&mut state, fitness_fn, |_| Ok(()))?;
    Ok(state)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

/// Writes the run state as digest-protected structured text:
/// a magic/version line, the SHA-256 of the state JSON, then the JSON.
pub fn checkpoint(state: &RunState, path: &Path) -> Result<(), EvolutionError> {
    let body = serde_json::to_string(state)
        .map_err(|e| EvolutionError::CorruptCheckpoint(format!("serialize: {e}")))?;
    let digest = Sha256::digest(body.as_bytes());
    let mut text = String::with_capacity(body.len() + 96);
    text.push_str(CHECKPOINT_MAGIC);
    text.push('\n');
    for byte in digest {
        text.push_str(&format!("{byte:02x}"));
    }
    text.push('\n');
    text.push_str(&body);
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads and verifies a checkpoint; a single flipped byte fails the digest.
pub fn resume(path: &Path) -> Result<RunState, EvolutionError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.splitn(3, '\n');
    let magic = lines
        .next()
        .ok_or_else(|| EvolutionError::CorruptCheckpoint("empty file".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(EvolutionError::UnsupportedCheckpointVersion(magic.into()));
    }
    let digest_line = lines
        .next()
        .ok_or_else(|| EvolutionError::CorruptCheckpoint("missing digest line".into()))?;
    let body = lines
        .next()
        .ok_or_else(|| EvolutionError::CorruptCheckpoint("missing state body".into()))?
        .trim_end_matches('\n');
    let digest = Sha256::digest(body.as_bytes());
    let expected: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    if digest_line != expected {
        return Err(EvolutionError::CorruptCheckpoint(
            "digest mismatch, file was modified or truncated".into(),
        ));
    }
    let state: RunState = serde_json::from_str(body)
        .map_err(|e| EvolutionError::CorruptCheckpoint(format!("parse: {e}")))?;
    state.config.validate()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{bounds, DenseGene};
    use crate::trace_model::{generate, normalize, sample_balanced, TraceParams};

    /// Training-free surrogate: prefers three conv blocks, two dense
    /// layers, and 64 filters. Smooth enough for hill-climbing.
    struct Surrogate;

    impl FitnessFn for Surrogate {
        fn evaluate(&self, g: &Genome, _seed: u64) -> f64 {
            let conv_term = (g.conv_blocks.len() as f64 - 3.0).abs();
            let dense_term = (g.dense_layers.len() as f64 - 2.0).abs();
            let filter_term: f64 = g
                .conv_blocks
                .iter()
                .map(|b| (b.n_filters as f64 - 64.0).abs() / 126.0)
                .sum();
            conv_term + dense_term + filter_term
        }
    }

    fn surrogate_config(pop: usize, gens: usize, seed: u64) -> EvolutionConfig {
        EvolutionConfig {
            population_size: pop,
            max_generations: gens,
            master_seed: seed,
            parallel_workers: 2,
            ..EvolutionConfig::default()
        }
    }

    fn tiny_sets(seed: u64) -> (TraceSet, TraceSet) {
        let params = TraceParams {
            n_samples_per_trace: 16,
            leak_point_value: 8,
            leak_point_mask: None,
            noise_sigma: 0.0,
            max_desync: 0,
            masking_enabled: false,
            key_byte: 0x22,
            seed,
        };
        let pool = generate(&params, 3200).unwrap();
        let train = sample_balanced(&pool, 2, seed + 1).unwrap();
        let mut vparams = params.clone();
        vparams.seed = seed + 1000;
        let vpool = generate(&vparams, 3200).unwrap();
        let valid = sample_balanced(&vpool, 2, seed + 2).unwrap();
        let (train, np) = normalize(&train).unwrap();
        let valid = crate::trace_model::apply_normalization(&valid, &np);
        (train, valid)
    }

    #[test]
    fn config_validation_rules() {
        let mut cfg = EvolutionConfig::default();
        cfg.validate().unwrap();
        cfg.population_size = 7;
        assert!(cfg.validate().is_err());
        cfg.population_size = 52;
        cfg.truncation_proportion = 0.0;
        assert!(cfg.validate().is_err());
        cfg.truncation_proportion = 0.01;
        // pool of ceil(0.01 * 52) = 1 cannot host a 3-way tournament
        assert!(cfg.validate().is_err());
        cfg.truncation_proportion = 0.5;
        cfg.validate().unwrap();
        assert_eq!(truncation_pool_size(0.5, 52), 26);
        assert_eq!(truncation_pool_size(1.0, 52), 52);
    }

    #[test]
    fn identical_genomes_in_one_generation_share_fitness() {
        let (train, valid) = tiny_sets(7);
        let cfg = EvolutionConfig {
            train_epochs: 1,
            batch_size: 128,
            ..EvolutionConfig::default()
        };
        let g = Genome {
            conv_blocks: vec![],
            lone_pool: None,
            dense_layers: vec![DenseGene { n_neurons: 6 }],
        };
        let seed = rng::mix(&[cfg.master_seed, tag::TRAIN, 0]);
        let f1 = evaluate_fitness(&g, &train, &valid, &cfg, seed);
        let f2 = evaluate_fitness(&g.clone(), &train, &valid, &cfg, seed);
        assert_eq!(f1, f2);
        assert!(f1 < SENTINEL_FITNESS);
    }

    #[test]
    fn inexpressible_genome_gets_sentinel_fitness() {
        let (train, valid) = tiny_sets(8);
        let cfg = EvolutionConfig::default();
        let g = Genome {
            conv_blocks: vec![],
            lone_pool: Some(crate::genome::PoolGene {
                kind: crate::neural_engine::PoolKind::Average,
                size: 50,
                stride: 50,
            }),
            dense_layers: vec![DenseGene { n_neurons: 4 }],
        };
        // 16-point traces cannot host a 50-wide pool
        assert_eq!(evaluate_fitness(&g, &train, &valid, &cfg, 1), SENTINEL_FITNESS);
    }

    #[test]
    fn conv_genome_beats_chance_on_noise_free_traces() {
        let (train, valid) = tiny_sets(9);
        let cfg = EvolutionConfig {
            train_epochs: 10,
            batch_size: 64,
            ..EvolutionConfig::default()
        };
        let g = Genome {
            conv_blocks: vec![crate::genome::ConvBlockGene {
                n_filters: 4,
                filter_size: 3,
                batch_norm: false,
                pool: crate::genome::PoolGene {
                    kind: crate::neural_engine::PoolKind::Average,
                    size: 2,
                    stride: 2,
                },
            }],
            lone_pool: None,
            dense_layers: vec![DenseGene { n_neurons: 16 }],
        };
        let fitness = evaluate_fitness(&g, &train, &valid, &cfg, 77);
        assert!(
            fitness < 256.0f64.ln(),
            "fitness {fitness} should beat chance {}",
            256.0f64.ln()
        );
    }

    #[test]
    fn truncation_excludes_the_worst_genome() {
        let mut r = rng::from_seed(100);
        let genomes: Vec<Genome> = (0..52).map(|_| genome::random_genome(&mut r)).collect();
        // distinct fitness 0..52; genome 51 is uniquely worst
        let fitness: Vec<f64> = (0..52).map(|i| i as f64).collect();
        let cfg = EvolutionConfig {
            truncation_proportion: 0.5,
            ..EvolutionConfig::default()
        };
        let mut ops = rng::from_seed(101);
        for _ in 0..200 {
            let parents = select_parents(&genomes, &fitness, &cfg, &mut ops);
            assert_eq!(parents.len(), 26);
            for p in &parents {
                let idx = genomes.iter().position(|g| g == p).unwrap();
                assert!(idx < 26, "parent from outside the elite pool");
            }
        }
    }

    #[test]
    fn tournament_winners_average_no_worse_than_pool_mean() {
        let mut r = rng::from_seed(110);
        let genomes: Vec<Genome> = (0..30).map(|_| genome::random_genome(&mut r)).collect();
        let fitness: Vec<f64> = (0..30).map(|_| r.random::<f64>() * 10.0).collect();
        let pool_mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
        let cfg = EvolutionConfig {
            population_size: 30,
            truncation_proportion: 1.0,
            ..EvolutionConfig::default()
        };
        let mut ops = rng::from_seed(111);
        let mut winner_sum = 0.0;
        let mut winner_count = 0usize;
        for _ in 0..200 {
            for parent in select_parents(&genomes, &fitness, &cfg, &mut ops) {
                let idx = genomes.iter().position(|g| *g == parent).unwrap();
                winner_sum += fitness[idx];
                winner_count += 1;
            }
        }
        let winner_mean = winner_sum / winner_count as f64;
        assert!(
            winner_mean <= pool_mean,
            "winner mean {winner_mean} exceeds pool mean {pool_mean}"
        );
    }

    #[test]
    fn offspring_count_and_closure() {
        let mut r = rng::from_seed(120);
        let parents: Vec<Genome> = (0..13).map(|_| genome::random_genome(&mut r)).collect();
        let cfg = EvolutionConfig::default();
        for _ in 0..50 {
            let offspring = produce_offspring(&parents, &cfg, &mut r);
            assert_eq!(offspring.len(), parents.len());
            for child in &offspring {
                child.validate().unwrap();
            }
        }
    }

    #[test]
    fn stubbed_identity_pipeline_preserves_the_parent_multiset() {
        let mut r = rng::from_seed(130);
        let parents: Vec<Genome> = (0..10).map(|_| genome::random_genome(&mut r)).collect();
        let offspring = produce_offspring_with(
            &parents,
            &mut r,
            |a, b, _| (a.clone(), b.clone()),
            |c, _| c,
        );
        let mut expect: Vec<String> = parents.iter().map(genome::serialize_genome).collect();
        let mut got: Vec<String> = offspring.iter().map(genome::serialize_genome).collect();
        expect.sort();
        got.sort();
        assert_eq!(expect, got);
    }

    #[test]
    fn run_keeps_population_size_and_best_so_far_monotone() {
        let cfg = surrogate_config(8, 6, 7);
        let mut state = init_run(&cfg).unwrap();
        run_generations(&mut state, &Surrogate, |s| {
            assert_eq!(s.population.len(), 8);
            Ok(())
        })
        .unwrap();
        assert_eq!(state.records.len(), 6);
        let mut last = f64::INFINITY;
        for rec in &state.records {
            assert!(rec.best_so_far_fitness <= last);
            last = rec.best_so_far_fitness;
        }
        assert!(state.records[5].best_so_far_fitness <= state.records[0].best_fitness);
        assert!(state.best_genome.is_some());
    }

    /// Records with wall-clock durations zeroed; everything else in a
    /// record is part of the determinism contract.
    fn canonical(records: &[GenerationRecord]) -> String {
        let mut stripped = records.to_vec();
        for r in stripped.iter_mut() {
            r.duration_secs = 0.0;
        }
        serde_json::to_string(&stripped).unwrap()
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let mut cfg = surrogate_config(10, 5, 8);
        cfg.parallel_workers = 1;
        let a = run(&cfg, &Surrogate).unwrap();
        cfg.parallel_workers = 4;
        let b = run(&cfg, &Surrogate).unwrap();
        assert_eq!(canonical(&a.records), canonical(&b.records));
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");

        let cfg4 = surrogate_config(8, 4, 9);
        let uninterrupted = run(&cfg4, &Surrogate).unwrap();

        let cfg2 = surrogate_config(8, 2, 9);
        let mut partial = init_run(&cfg2).unwrap();
        run_generations(&mut partial, &Surrogate, |_| Ok(())).unwrap();
        checkpoint(&partial, &path).unwrap();

        let mut resumed = resume(&path).unwrap();
        resumed.config.max_generations = 4;
        run_generations(&mut resumed, &Surrogate, |_| Ok(())).unwrap();

        assert_eq!(canonical(&uninterrupted.records), canonical(&resumed.records));
        assert_eq!(uninterrupted.population.len(), resumed.population.len());
        for (a, b) in uninterrupted.population.iter().zip(resumed.population.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn generation_zero_checkpoint_reproduces_the_initial_population() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen0.json");
        let cfg = surrogate_config(12, 3, 10);
        let state = init_run(&cfg).unwrap();
        checkpoint(&state, &path).unwrap();
        let back = resume(&path).unwrap();
        assert_eq!(back.next_generation, 0);
        assert_eq!(back.population, state.population);
    }

    #[test]
    fn tampered_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let state = init_run(&surrogate_config(8, 2, 11)).unwrap();
        checkpoint(&state, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        let flip = bytes.len() - 10;
        bytes[flip] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(resume(&path), Err(EvolutionError::CorruptCheckpoint(_))));

        let mut text = String::from_utf8(std::fs::read(&path).unwrap()).unwrap();
        text = text.replacen(CHECKPOINT_MAGIC, "NASCTY-CHECKPOINT-V9", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            resume(&path),
            Err(EvolutionError::UnsupportedCheckpointVersion(_))
        ));
    }

    #[test]
    fn expressible_genomes_always_beat_sentinel_in_selection() {
        let mut r = rng::from_seed(140);
        let genomes: Vec<Genome> = (0..8).map(|_| genome::random_genome(&mut r)).collect();
        let mut fitness = vec![SENTINEL_FITNESS; 8];
        for (i, f) in [(1usize, 3.0), (3, 5.0), (5, 2.0), (7, 4.0)] {
            fitness[i] = f;
        }
        let order = ranked_indices(&genomes, &fitness);
        assert_eq!(&order[..4], &[5, 1, 7, 3], "expressible genomes rank first");

        // truncation 0.5 trims the pool to the four expressible genomes,
        // so no sentinel genome can ever parent offspring
        let cfg = EvolutionConfig {
            population_size: 8,
            truncation_proportion: 0.5,
            ..EvolutionConfig::default()
        };
        let mut ops = rng::from_seed(141);
        let expressible: Vec<&Genome> = [1usize, 3, 5, 7].iter().map(|&i| &genomes[i]).collect();
        for _ in 0..100 {
            for parent in select_parents(&genomes, &fitness, &cfg, &mut ops) {
                assert!(expressible.iter().any(|&g| *g == parent));
            }
        }
    }

    #[test]
    fn surrogate_evolution_improves_over_generation_zero() {
        let mut improved = 0;
        for seed in 0..20 {
            let cfg = surrogate_config(20, 20, 1000 + seed);
            let state = run(&cfg, &Surrogate).unwrap();
            let first = state.records.first().unwrap().best_fitness;
            let last = state.records.last().unwrap().best_so_far_fitness;
            if last < first {
                improved += 1;
            }
        }
        assert!(improved >= 19, "only {improved}/20 runs improved");
    }

    #[test]
    fn bounds_module_matches_table_ranges() {
        assert_eq!(bounds::CONV_BLOCKS_MAX, 5);
        assert_eq!(bounds::DENSE_LAYERS_MAX, 5);
        assert_eq!((bounds::N_FILTERS_MIN, bounds::N_FILTERS_MAX), (2, 128));
        assert_eq!((bounds::DENSE_NEURONS_MIN, bounds::DENSE_NEURONS_MAX), (1, 20));
    }
}
