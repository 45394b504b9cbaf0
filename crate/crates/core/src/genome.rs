//! Evolvable CNN architecture encoding and its genetic operators.
//!
//! A genome is an ordered list of convolutional block genes (0 to 5), an
//! optional lone pooling gene that can only exist while no convolutional
//! blocks are present, and a list of dense-layer genes (1 to 5). Every
//! hyperparameter lives inside fixed bounds and every operator is closed
//! over valid genomes: random initialization, one-point and parameter-wise
//! crossover, and a three-way mutation (add a layer, remove a layer, or
//! polynomial mutation of individual hyperparameters).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural_engine::{ActivationKind, LayerSpec, PoolKind};

/// Hyperparameter bounds (inclusive).
pub mod bounds {
    pub const CONV_BLOCKS_MIN: usize = 0;
    pub const CONV_BLOCKS_MAX: usize = 5;
    pub const DENSE_LAYERS_MIN: usize = 1;
    pub const DENSE_LAYERS_MAX: usize = 5;
    pub const N_FILTERS_MIN: usize = 2;
    pub const N_FILTERS_MAX: usize = 128;
    pub const FILTER_SIZE_MIN: usize = 1;
    pub const FILTER_SIZE_MAX: usize = 50;
    pub const POOL_SIZE_MIN: usize = 2;
    pub const POOL_SIZE_MAX: usize = 50;
    pub const POOL_STRIDE_MIN: usize = 2;
    pub const POOL_STRIDE_MAX: usize = 50;
    pub const DENSE_NEURONS_MIN: usize = 1;
    pub const DENSE_NEURONS_MAX: usize = 20;
}

pub const GENOME_FORMAT_VERSION: u32 = 1;

/// Number of classes every expressed network predicts.
pub const N_CLASSES: usize = 256;

#[derive(Debug, Error)]
pub enum GenomeError {
    #[error("genome parse error: {0}")]
    Parse(String),
    #[error("unsupported genome format version {0}, this build reads version {GENOME_FORMAT_VERSION}")]
    UnsupportedVersion(u32),
    #[error("{field} = {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        field: &'static str,
        value: usize,
        lo: usize,
        hi: usize,
    },
    #[error("{list} has {count} entries, allowed [{lo}, {hi}]")]
    BadCount {
        list: &'static str,
        count: usize,
        lo: usize,
        hi: usize,
    },
    #[error("lone pooling gene requires an empty convolutional block list")]
    LonePoolWithConvBlocks,
}

/// Expression failure: the genome cannot be realized as a network on the
/// given input length. Callers treat this as worst fitness, not a crash.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("inexpressible genome: layer {layer_index} ({kind}) {detail}")]
pub struct ExpressError {
    pub layer_index: usize,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGene {
    pub kind: PoolKind,
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockGene {
    pub n_filters: usize,
    pub filter_size: usize,
    pub batch_norm: bool,
    pub pool: PoolGene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseGene {
    pub n_neurons: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genome {
    pub conv_blocks: Vec<ConvBlockGene>,
    pub lone_pool: Option<PoolGene>,
    pub dense_layers: Vec<DenseGene>,
}

fn check_range(
    field: &'static str,
    value: usize,
    lo: usize,
    hi: usize,
) -> Result<(), GenomeError> {
    if value < lo || value > hi {
        return Err(GenomeError::OutOfBounds { field, value, lo, hi });
    }
    Ok(())
}

impl PoolGene {
    pub fn validate(&self) -> Result<(), GenomeError> {
        check_range("pool_size", self.size, bounds::POOL_SIZE_MIN, bounds::POOL_SIZE_MAX)?;
        check_range(
            "pool_stride",
            self.stride,
            bounds::POOL_STRIDE_MIN,
            bounds::POOL_STRIDE_MAX,
        )
    }
}

impl ConvBlockGene {
    pub fn validate(&self) -> Result<(), GenomeError> {
        check_range("n_filters", self.n_filters, bounds::N_FILTERS_MIN, bounds::N_FILTERS_MAX)?;
        check_range(
            "filter_size",
            self.filter_size,
            bounds::FILTER_SIZE_MIN,
            bounds::FILTER_SIZE_MAX,
        )?;
        self.pool.validate()
    }
}

impl DenseGene {
    pub fn validate(&self) -> Result<(), GenomeError> {
        check_range(
            "n_neurons",
            self.n_neurons,
            bounds::DENSE_NEURONS_MIN,
            bounds::DENSE_NEURONS_MAX,
        )
    }
}

impl Genome {
    pub fn validate(&self) -> Result<(), GenomeError> {
        if self.conv_blocks.len() > bounds::CONV_BLOCKS_MAX {
            return Err(GenomeError::BadCount {
                list: "conv_blocks",
                count: self.conv_blocks.len(),
                lo: bounds::CONV_BLOCKS_MIN,
                hi: bounds::CONV_BLOCKS_MAX,
            });
        }
        if self.dense_layers.is_empty() || self.dense_layers.len() > bounds::DENSE_LAYERS_MAX {
            return Err(GenomeError::BadCount {
                list: "dense_layers",
                count: self.dense_layers.len(),
                lo: bounds::DENSE_LAYERS_MIN,
                hi: bounds::DENSE_LAYERS_MAX,
            });
        }
        if self.lone_pool.is_some() && !self.conv_blocks.is_empty() {
            return Err(GenomeError::LonePoolWithConvBlocks);
        }
        for block in &self.conv_blocks {
            block.validate()?;
        }
        if let Some(pool) = &self.lone_pool {
            pool.validate()?;
        }
        for dense in &self.dense_layers {
            dense.validate()?;
        }
        Ok(())
    }

    /// Total count of individually mutable hyperparameters: six per conv
    /// block, three for a lone pool, one per dense layer.
    pub fn n_hyperparameters(&self) -> usize {
        self.conv_blocks.len() * 6
            + if self.lone_pool.is_some() { 3 } else { 0 }
            + self.dense_layers.len()
    }

    /// Distance used for population diversity reporting.
    pub fn layer_count_distance(&self, other: &Genome) -> usize {
        self.conv_blocks.len().abs_diff(other.conv_blocks.len())
            + self.dense_layers.len().abs_diff(other.dense_layers.len())
    }
}

// ---------------------------------------------------------------------------
// Random initialization
// ---------------------------------------------------------------------------

fn random_pool_gene(rng: &mut impl Rng) -> PoolGene {
    PoolGene {
        kind: if rng.random_bool(0.5) { PoolKind::Average } else { PoolKind::Max },
        size: rng.random_range(bounds::POOL_SIZE_MIN..=bounds::POOL_SIZE_MAX),
        stride: rng.random_range(bounds::POOL_STRIDE_MIN..=bounds::POOL_STRIDE_MAX),
    }
}

fn random_conv_block(rng: &mut impl Rng) -> ConvBlockGene {
    ConvBlockGene {
        n_filters: rng.random_range(bounds::N_FILTERS_MIN..=bounds::N_FILTERS_MAX),
        filter_size: rng.random_range(bounds::FILTER_SIZE_MIN..=bounds::FILTER_SIZE_MAX),
        batch_norm: rng.random_bool(0.5),
        pool: random_pool_gene(rng),
    }
}

fn random_dense_gene(rng: &mut impl Rng) -> DenseGene {
    DenseGene {
        n_neurons: rng.random_range(bounds::DENSE_NEURONS_MIN..=bounds::DENSE_NEURONS_MAX),
    }
}

/// Draws every structural count and hyperparameter uniformly from its
/// range. When the conv-block count comes up zero, a lone pooling gene is
/// included with probability 1/2.
pub fn random_genome(rng: &mut impl Rng) -> Genome {
    let n_conv = rng.random_range(bounds::CONV_BLOCKS_MIN..=bounds::CONV_BLOCKS_MAX);
    let conv_blocks: Vec<ConvBlockGene> = (0..n_conv).map(|_| random_conv_block(rng)).collect();
    let lone_pool = if n_conv == 0 && rng.random_bool(0.5) {
        Some(random_pool_gene(rng))
    } else {
        None
    };
    let n_dense = rng.random_range(bounds::DENSE_LAYERS_MIN..=bounds::DENSE_LAYERS_MAX);
    let dense_layers = (0..n_dense).map(|_| random_dense_gene(rng)).collect();
    Genome { conv_blocks, lone_pool, dense_layers }
}

// ---------------------------------------------------------------------------
// Expression into layer specs
// ---------------------------------------------------------------------------

fn pool_spec(
    pool: &PoolGene,
    specs: &mut Vec<LayerSpec>,
    length: &mut usize,
) -> Result<(), ExpressError> {
    let out = if *length >= pool.size {
        Some((*length - pool.size) / pool.stride + 1)
    } else {
        None
    };
    match out {
        Some(l) if l >= 1 => {
            specs.push(LayerSpec::Pool { kind: pool.kind, size: pool.size, stride: pool.stride });
            *length = l;
            Ok(())
        }
        _ => Err(ExpressError {
            layer_index: specs.len(),
            kind: "Pool".into(),
            detail: format!(
                "pool size {} on remaining length {} collapses the output below 1",
                pool.size, *length
            ),
        }),
    }
}

/// Emits the genome as engine layer specs: per conv block
/// Conv1D -> optional BatchNorm -> SELU -> Pool, else an optional lone
/// pool; then Flatten; per dense gene Dense -> SELU; finally a 256-class
/// softmax output. Rejects genomes whose pooling chain collapses the
/// remaining length below one sample.
pub fn express(genome: &Genome, input_length: usize) -> Result<Vec<LayerSpec>, ExpressError> {
    let mut specs = Vec::new();
    let mut length = input_length;

    for block in &genome.conv_blocks {
        specs.push(LayerSpec::Conv1D {
            n_filters: block.n_filters,
            kernel_size: block.filter_size,
        });
        if block.batch_norm {
            specs.push(LayerSpec::BatchNorm);
        }
        specs.push(LayerSpec::Activation(ActivationKind::Selu));
        pool_spec(&block.pool, &mut specs, &mut length)?;
    }
    if genome.conv_blocks.is_empty() {
        if let Some(pool) = &genome.lone_pool {
            pool_spec(pool, &mut specs, &mut length)?;
        }
    }
    specs.push(LayerSpec::Flatten);
    for dense in &genome.dense_layers {
        specs.push(LayerSpec::Dense { n_neurons: dense.n_neurons });
        specs.push(LayerSpec::Activation(ActivationKind::Selu));
    }
    specs.push(LayerSpec::SoftmaxOutput { n_classes: N_CLASSES });
    Ok(specs)
}

// ---------------------------------------------------------------------------
// Crossover
// ---------------------------------------------------------------------------

fn splice<T: Clone>(a: &[T], b: &[T], cut_a: usize, cut_b: usize) -> (Vec<T>, Vec<T>) {
    let mut child1 = a[..cut_a].to_vec();
    child1.extend_from_slice(&b[cut_b..]);
    let mut child2 = b[..cut_b].to_vec();
    child2.extend_from_slice(&a[cut_a..]);
    (child1, child2)
}

fn conv_count_ok(list: &[ConvBlockGene]) -> bool {
    list.len() <= bounds::CONV_BLOCKS_MAX
}

fn dense_count_ok(list: &[DenseGene]) -> bool {
    (bounds::DENSE_LAYERS_MIN..=bounds::DENSE_LAYERS_MAX).contains(&list.len())
}

/// A child with convolutional blocks drops any inherited lone pool.
fn assemble(conv: Vec<ConvBlockGene>, lone_pool: Option<PoolGene>, dense: Vec<DenseGene>) -> Genome {
    let lone_pool = if conv.is_empty() { lone_pool } else { None };
    Genome { conv_blocks: conv, lone_pool, dense_layers: dense }
}

/// Deterministic one-point crossover kernel: explicit cut points per list,
/// lone pools passed through by position (parent `a`'s pool to child 1,
/// parent `b`'s to child 2). With boundary cuts `(|a|, |b|)` the children
/// reproduce the parents gene for gene.
pub fn one_point_crossover_with_cuts(
    a: &Genome,
    b: &Genome,
    conv_cut_a: usize,
    conv_cut_b: usize,
    dense_cut_a: usize,
    dense_cut_b: usize,
) -> (Genome, Genome) {
    let (conv1, conv2) = splice(&a.conv_blocks, &b.conv_blocks, conv_cut_a, conv_cut_b);
    let (dense1, dense2) = splice(&a.dense_layers, &b.dense_layers, dense_cut_a, dense_cut_b);
    (
        assemble(conv1, a.lone_pool, dense1),
        assemble(conv2, b.lone_pool, dense2),
    )
}

/// One-point crossover: independently for the conv and dense lists, cut
/// points are drawn in `[0, len]` for both parents and the prefixes and
/// suffixes are exchanged. Cut points are redrawn (up to 16 attempts)
/// until both children satisfy the count bounds; afterwards lists are
/// truncated to the bound and an empty dense list is repaired with a gene
/// from the other parent. Parents' lone pools are divided randomly
/// between the children.
pub fn one_point_crossover(a: &Genome, b: &Genome, rng: &mut impl Rng) -> (Genome, Genome) {
    let mut kept = None;
    for _ in 0..16 {
        let ca = rng.random_range(0..=a.conv_blocks.len());
        let cb = rng.random_range(0..=b.conv_blocks.len());
        let da = rng.random_range(0..=a.dense_layers.len());
        let db = rng.random_range(0..=b.dense_layers.len());
        let (conv1, conv2) = splice(&a.conv_blocks, &b.conv_blocks, ca, cb);
        let (dense1, dense2) = splice(&a.dense_layers, &b.dense_layers, da, db);
        let ok = conv_count_ok(&conv1)
            && conv_count_ok(&conv2)
            && dense_count_ok(&dense1)
            && dense_count_ok(&dense2);
        kept = Some((conv1, conv2, dense1, dense2));
        if ok {
            break;
        }
    }
    let (mut conv1, mut conv2, mut dense1, mut dense2) = kept.expect("at least one attempt runs");

    conv1.truncate(bounds::CONV_BLOCKS_MAX);
    conv2.truncate(bounds::CONV_BLOCKS_MAX);
    dense1.truncate(bounds::DENSE_LAYERS_MAX);
    dense2.truncate(bounds::DENSE_LAYERS_MAX);
    if dense1.is_empty() {
        let pick = rng.random_range(0..b.dense_layers.len());
        dense1.push(b.dense_layers[pick]);
    }
    if dense2.is_empty() {
        let pick = rng.random_range(0..a.dense_layers.len());
        dense2.push(a.dense_layers[pick]);
    }

    let (pool1, pool2) = divide_lone_pools(a.lone_pool, b.lone_pool, rng);
    (assemble(conv1, pool1, dense1), assemble(conv2, pool2, dense2))
}

/// Each parental lone pool goes to a uniformly chosen child; when both
/// pools land on the same child the second moves to the other one.
fn divide_lone_pools(
    a: Option<PoolGene>,
    b: Option<PoolGene>,
    rng: &mut impl Rng,
) -> (Option<PoolGene>, Option<PoolGene>) {
    let mut first: Option<PoolGene> = None;
    let mut second: Option<PoolGene> = None;
    for pool in [a, b].into_iter().flatten() {
        let slot = if rng.random_bool(0.5) { &mut first } else { &mut second };
        if slot.is_none() {
            *slot = Some(pool);
        } else if first.is_none() {
            first = Some(pool);
        } else {
            second = Some(pool);
        }
    }
    (first, second)
}

/// Parameter-wise crossover: for each aligned block or layer position,
/// every scalar gene of child 1 is inherited from either parent with
/// probability 1/2 and child 2 takes the complementary gene. Positions
/// beyond the shorter parent are appended unmodified to child 1.
pub fn parameterwise_crossover(a: &Genome, b: &Genome, rng: &mut impl Rng) -> (Genome, Genome) {
    let n_conv = a.conv_blocks.len().min(b.conv_blocks.len());
    let mut conv1 = Vec::with_capacity(a.conv_blocks.len().max(b.conv_blocks.len()));
    let mut conv2 = Vec::with_capacity(n_conv);
    for i in 0..n_conv {
        let (ga, gb) = (a.conv_blocks[i], b.conv_blocks[i]);
        let mut c1 = ga;
        let mut c2 = gb;
        if rng.random_bool(0.5) {
            c1.n_filters = gb.n_filters;
            c2.n_filters = ga.n_filters;
        }
        if rng.random_bool(0.5) {
            c1.filter_size = gb.filter_size;
            c2.filter_size = ga.filter_size;
        }
        if rng.random_bool(0.5) {
            c1.batch_norm = gb.batch_norm;
            c2.batch_norm = ga.batch_norm;
        }
        if rng.random_bool(0.5) {
            c1.pool.kind = gb.pool.kind;
            c2.pool.kind = ga.pool.kind;
        }
        if rng.random_bool(0.5) {
            c1.pool.size = gb.pool.size;
            c2.pool.size = ga.pool.size;
        }
        if rng.random_bool(0.5) {
            c1.pool.stride = gb.pool.stride;
            c2.pool.stride = ga.pool.stride;
        }
        conv1.push(c1);
        conv2.push(c2);
    }
    let longer_conv = if a.conv_blocks.len() >= b.conv_blocks.len() {
        &a.conv_blocks
    } else {
        &b.conv_blocks
    };
    conv1.extend_from_slice(&longer_conv[n_conv..]);

    let n_dense = a.dense_layers.len().min(b.dense_layers.len());
    let mut dense1 = Vec::with_capacity(a.dense_layers.len().max(b.dense_layers.len()));
    let mut dense2 = Vec::with_capacity(n_dense);
    for i in 0..n_dense {
        let (ga, gb) = (a.dense_layers[i], b.dense_layers[i]);
        if rng.random_bool(0.5) {
            dense1.push(gb);
            dense2.push(ga);
        } else {
            dense1.push(ga);
            dense2.push(gb);
        }
    }
    let longer_dense = if a.dense_layers.len() >= b.dense_layers.len() {
        &a.dense_layers
    } else {
        &b.dense_layers
    };
    dense1.extend_from_slice(&longer_dense[n_dense..]);

    let (pool1, pool2) = divide_lone_pools(a.lone_pool, b.lone_pool, rng);
    (assemble(conv1, pool1, dense1), assemble(conv2, pool2, dense2))
}

// ---------------------------------------------------------------------------
// Mutation
// ---------------------------------------------------------------------------

/// Bounded polynomial mutation of a single real value: `u < 0.5` moves the
/// value toward the lower bound by `(2u)^(1/(1+eta)) - 1` of the available
/// room, `u >= 0.5` toward the upper bound by `1 - (2(1-u))^(1/(1+eta))`.
/// `u = 0.5` is an exact fixed point; `u -> 0` and `u -> 1` reach the
/// bounds exactly. Larger `eta` shrinks the mutation spread.
pub fn polynomial_mutate_scalar(x: f64, lower: f64, upper: f64, eta: f64, u: f64) -> f64 {
    if u < 0.5 {
        let delta = (2.0 * u).powf(1.0 / (1.0 + eta)) - 1.0;
        x + delta * (x - lower)
    } else {
        let delta = 1.0 - (2.0 * (1.0 - u)).powf(1.0 / (1.0 + eta));
        x + delta * (upper - x)
    }
}

/// Polynomial mutation of an integer hyperparameter: mutate in the
/// continuous domain, round to nearest, clamp to the bounds.
pub fn polynomial_mutate_int(
    value: usize,
    lo: usize,
    hi: usize,
    eta: f64,
    rng: &mut impl Rng,
) -> usize {
    let u: f64 = rng.random();
    let y = polynomial_mutate_scalar(value as f64, lo as f64, hi as f64, eta, u);
    (y.round() as i64).clamp(lo as i64, hi as i64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MutationMethod {
    Add,
    Remove,
    Polynomial,
}

/// Mutates a genome by one of three methods chosen uniformly: inserting a
/// randomly initialized conv block or dense layer at a uniform position,
/// removing a uniformly chosen one, or polynomial mutation of each
/// hyperparameter with probability 1/n. Add and remove fall through to
/// polynomial mutation when the structure makes them impossible, so the
/// operator always perturbs.
pub fn mutate(genome: &Genome, eta: f64, rng: &mut impl Rng) -> Genome {
    let mut out = genome.clone();
    let method = match rng.random_range(0..3u32) {
        0 => MutationMethod::Add,
        1 => MutationMethod::Remove,
        _ => MutationMethod::Polynomial,
    };

    match method {
        MutationMethod::Add => {
            let can_conv = out.conv_blocks.len() < bounds::CONV_BLOCKS_MAX;
            let can_dense = out.dense_layers.len() < bounds::DENSE_LAYERS_MAX;
            if can_conv || can_dense {
                let add_conv = match (can_conv, can_dense) {
                    (true, true) => rng.random_bool(0.5),
                    (only_conv, _) => only_conv,
                };
                if add_conv {
                    let pos = rng.random_range(0..=out.conv_blocks.len());
                    out.conv_blocks.insert(pos, random_conv_block(rng));
                    out.lone_pool = None;
                } else {
                    let pos = rng.random_range(0..=out.dense_layers.len());
                    out.dense_layers.insert(pos, random_dense_gene(rng));
                }
                return out;
            }
        }
        MutationMethod::Remove => {
            let n_conv = out.conv_blocks.len();
            let n_dense_removable = if out.dense_layers.len() > bounds::DENSE_LAYERS_MIN {
                out.dense_layers.len()
            } else {
                0
            };
            let total = n_conv + n_dense_removable;
            if total > 0 {
                let pick = rng.random_range(0..total);
                if pick < n_conv {
                    out.conv_blocks.remove(pick);
                } else {
                    out.dense_layers.remove(pick - n_conv);
                }
                return out;
            }
        }
        MutationMethod::Polynomial => {}
    }

    let n = out.n_hyperparameters().max(1);
    let p = 1.0 / n as f64;
    for block in &mut out.conv_blocks {
        if rng.random_bool(p) {
            block.n_filters = polynomial_mutate_int(
                block.n_filters,
                bounds::N_FILTERS_MIN,
                bounds::N_FILTERS_MAX,
                eta,
                rng,
            );
        }
        if rng.random_bool(p) {
            block.filter_size = polynomial_mutate_int(
                block.filter_size,
                bounds::FILTER_SIZE_MIN,
                bounds::FILTER_SIZE_MAX,
                eta,
                rng,
            );
        }
        if rng.random_bool(p) {
            block.batch_norm = rng.random_bool(0.5);
        }
        mutate_pool(&mut block.pool, p, eta, rng);
    }
    if let Some(pool) = &mut out.lone_pool {
        mutate_pool(pool, p, eta, rng);
    }
    for dense in &mut out.dense_layers {
        if rng.random_bool(p) {
            dense.n_neurons = polynomial_mutate_int(
                dense.n_neurons,
                bounds::DENSE_NEURONS_MIN,
                bounds::DENSE_NEURONS_MAX,
                eta,
                rng,
            );
        }
    }
    out
}

fn mutate_pool(pool: &mut PoolGene, p: f64, eta: f64, rng: &mut impl Rng) {
    if rng.random_bool(p) {
        pool.kind = if rng.random_bool(0.5) { PoolKind::Average } else { PoolKind::Max };
    }
    if rng.random_bool(p) {
        pool.size =
            polynomial_mutate_int(pool.size, bounds::POOL_SIZE_MIN, bounds::POOL_SIZE_MAX, eta, rng);
    }
    if rng.random_bool(p) {
        pool.stride = polynomial_mutate_int(
            pool.stride,
            bounds::POOL_STRIDE_MIN,
            bounds::POOL_STRIDE_MAX,
            eta,
            rng,
        );
    }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GenomeFile {
    version: u32,
    conv_blocks: Vec<ConvBlockGene>,
    lone_pool: Option<PoolGene>,
    dense_layers: Vec<DenseGene>,
}

/// Canonical single-line text form. Also used as a deterministic total
/// order for fitness tie-breaking.
pub fn serialize_genome(genome: &Genome) -> String {
    serde_json::to_string(&GenomeFile {
        version: GENOME_FORMAT_VERSION,
        conv_blocks: genome.conv_blocks.clone(),
        lone_pool: genome.lone_pool,
        dense_layers: genome.dense_layers.clone(),
    })
    .expect("genome serialization cannot fail")
}

/// Parses and fully validates a genome: structural counts, the lone-pool
/// rule, and every hyperparameter bound.
pub fn parse_genome(text: &str) -> Result<Genome, GenomeError> {
    let file: GenomeFile =
        serde_json::from_str(text).map_err(|e| GenomeError::Parse(e.to_string()))?;
    if file.version != GENOME_FORMAT_VERSION {
        return Err(GenomeError::UnsupportedVersion(file.version));
    }
    let genome = Genome {
        conv_blocks: file.conv_blocks,
        lone_pool: file.lone_pool,
        dense_layers: file.dense_layers,
    };
    genome.validate()?;
    Ok(genome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    pub(crate) fn genome_with(conv: usize, dense: usize, seed: u64) -> Genome {
        let mut r = rng::from_seed(seed);
        let mut g = random_genome(&mut r);
        while g.conv_blocks.len() > conv {
            g.conv_blocks.pop();
        }
        while g.conv_blocks.len() < conv {
            g.conv_blocks.push(random_conv_block(&mut r));
        }
        if conv > 0 {
            g.lone_pool = None;
        }
        let dense = dense.max(1);
        while g.dense_layers.len() > dense {
            g.dense_layers.pop();
        }
        while g.dense_layers.len() < dense {
            g.dense_layers.push(random_dense_gene(&mut r));
        }
        g.validate().unwrap();
        g
    }

    #[test]
    fn random_genomes_satisfy_invariants_and_bounds() {
        let mut r = rng::from_seed(1);
        let mut filters_min = usize::MAX;
        let mut filters_max = 0;
        for _ in 0..10_000 {
            let g = random_genome(&mut r);
            g.validate().unwrap();
            for b in &g.conv_blocks {
                filters_min = filters_min.min(b.n_filters);
                filters_max = filters_max.max(b.n_filters);
            }
        }
        assert!(filters_min >= bounds::N_FILTERS_MIN);
        assert!(filters_max <= bounds::N_FILTERS_MAX);
    }

    #[test]
    fn conv_block_count_is_uniform() {
        let mut r = rng::from_seed(2);
        let n = 10_000usize;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[random_genome(&mut r).conv_blocks.len()] += 1;
        }
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for (k, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - p).abs() < 3.0 * se,
                "count {k}: frequency {freq} vs expected {p} (3se = {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn express_minimal_genome() {
        let g = Genome {
            conv_blocks: vec![],
            lone_pool: None,
            dense_layers: vec![DenseGene { n_neurons: 10 }],
        };
        let specs = express(&g, 700).unwrap();
        assert_eq!(
            specs,
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { n_neurons: 10 },
                LayerSpec::Activation(ActivationKind::Selu),
                LayerSpec::SoftmaxOutput { n_classes: 256 },
            ]
        );
    }

    #[test]
    fn express_two_block_genome_structure() {
        let pool = PoolGene { kind: PoolKind::Max, size: 2, stride: 2 };
        let g = Genome {
            conv_blocks: vec![
                ConvBlockGene { n_filters: 8, filter_size: 3, batch_norm: true, pool },
                ConvBlockGene { n_filters: 4, filter_size: 5, batch_norm: false, pool },
            ],
            lone_pool: None,
            dense_layers: vec![DenseGene { n_neurons: 10 }, DenseGene { n_neurons: 4 }],
        };
        let specs = express(&g, 100).unwrap();
        let kinds: Vec<&str> = specs
            .iter()
            .map(|s| match s {
                LayerSpec::Conv1D { .. } => "conv",
                LayerSpec::BatchNorm => "bn",
                LayerSpec::Activation(_) => "act",
                LayerSpec::Pool { .. } => "pool",
                LayerSpec::Flatten => "flatten",
                LayerSpec::Dense { .. } => "dense",
                LayerSpec::SoftmaxOutput { .. } => "softmax",
            })
            .collect();
        assert_eq!(
            kinds,
            vec![
                "conv", "bn", "act", "pool", "conv", "act", "pool", "flatten", "dense", "act",
                "dense", "act", "softmax"
            ]
        );
    }

    #[test]
    fn express_rejects_collapsing_pool_chain() {
        let pool = PoolGene { kind: PoolKind::Average, size: 50, stride: 50 };
        let g = Genome {
            conv_blocks: vec![
                ConvBlockGene { n_filters: 4, filter_size: 3, batch_norm: false, pool },
                ConvBlockGene { n_filters: 4, filter_size: 3, batch_norm: false, pool },
            ],
            lone_pool: None,
            dense_layers: vec![DenseGene { n_neurons: 5 }],
        };
        // 700 -> (700-50)/50+1 = 14 -> second pool needs length >= 50
        let err = express(&g, 700).unwrap_err();
        assert_eq!(err.kind, "Pool");
        assert!(err.detail.contains("14"), "detail: {}", err.detail);
    }

    #[test]
    fn one_point_boundary_cuts_reproduce_parents() {
        let a = genome_with(3, 2, 10);
        let b = genome_with(2, 4, 11);
        let (c1, c2) = one_point_crossover_with_cuts(
            &a,
            &b,
            a.conv_blocks.len(),
            b.conv_blocks.len(),
            a.dense_layers.len(),
            b.dense_layers.len(),
        );
        assert_eq!(c1, a);
        assert_eq!(c2, b);
    }

    #[test]
    fn one_point_figure_style_example() {
        // a: conv [A1,A2,A3], b: conv [B1,B2], cuts (1,1)
        // -> child1 conv [A1,B2], child2 conv [B1,A2,A3]
        let a = genome_with(3, 1, 20);
        let b = genome_with(2, 1, 21);
        let (c1, c2) = one_point_crossover_with_cuts(&a, &b, 1, 1, 1, 1);
        assert_eq!(c1.conv_blocks, vec![a.conv_blocks[0], b.conv_blocks[1]]);
        assert_eq!(
            c2.conv_blocks,
            vec![b.conv_blocks[0], a.conv_blocks[1], a.conv_blocks[2]]
        );
    }

    #[test]
    fn one_point_preserves_gene_multiset_without_repair() {
        let mut r = rng::from_seed(30);
        for trial in 0..200 {
            let a = random_genome(&mut r);
            let b = random_genome(&mut r);
            let (c1, c2) = one_point_crossover(&a, &b, &mut r);
            c1.validate().unwrap();
            c2.validate().unwrap();
            let mut parent_dense: Vec<usize> = a
                .dense_layers
                .iter()
                .chain(&b.dense_layers)
                .map(|d| d.n_neurons)
                .collect();
            let mut child_dense: Vec<usize> = c1
                .dense_layers
                .iter()
                .chain(&c2.dense_layers)
                .map(|d| d.n_neurons)
                .collect();
            parent_dense.sort_unstable();
            child_dense.sort_unstable();
            // Conservation holds whenever the repair path did not fire; the
            // repair path changes the total count but never the bounds.
            if parent_dense.len() == child_dense.len() {
                assert_eq!(parent_dense, child_dense, "trial {trial}");
            }
        }
    }

    #[test]
    fn parameterwise_identical_parents_yield_identical_children() {
        let a = genome_with(2, 3, 40);
        let mut r = rng::from_seed(41);
        let (c1, c2) = parameterwise_crossover(&a, &a, &mut r);
        assert_eq!(c1, a);
        assert_eq!(c2, a);
    }

    #[test]
    fn parameterwise_children_are_complementary() {
        let a = genome_with(3, 4, 50);
        let b = genome_with(3, 4, 51);
        let mut r = rng::from_seed(52);
        let (c1, c2) = parameterwise_crossover(&a, &b, &mut r);
        for i in 0..3 {
            let (ga, gb) = (a.conv_blocks[i], b.conv_blocks[i]);
            let (x, y) = (c1.conv_blocks[i], c2.conv_blocks[i]);
            let scalars = [
                (x.n_filters, y.n_filters, ga.n_filters, gb.n_filters),
                (x.filter_size, y.filter_size, ga.filter_size, gb.filter_size),
                (x.pool.size, y.pool.size, ga.pool.size, gb.pool.size),
                (x.pool.stride, y.pool.stride, ga.pool.stride, gb.pool.stride),
            ];
            for (xv, yv, av, bv) in scalars {
                assert!(
                    (xv == av && yv == bv) || (xv == bv && yv == av),
                    "child genes must be complementary picks of the parents'"
                );
            }
        }
        for i in 0..4 {
            let (xv, yv) = (c1.dense_layers[i].n_neurons, c2.dense_layers[i].n_neurons);
            let (av, bv) = (a.dense_layers[i].n_neurons, b.dense_layers[i].n_neurons);
            assert!((xv == av && yv == bv) || (xv == bv && yv == av));
        }
    }

    #[test]
    fn parameterwise_excess_units_go_to_first_child() {
        let a = genome_with(3, 2, 60);
        let b = genome_with(1, 2, 61);
        let mut r = rng::from_seed(62);
        let (c1, c2) = parameterwise_crossover(&a, &b, &mut r);
        assert_eq!(c1.conv_blocks.len(), 3);
        assert_eq!(c2.conv_blocks.len(), 1);
        assert_eq!(c1.conv_blocks[1], a.conv_blocks[1]);
        assert_eq!(c1.conv_blocks[2], a.conv_blocks[2]);
    }

    #[test]
    fn polynomial_scalar_fixed_point_and_limits() {
        for eta in [20.0, 40.0] {
            assert_eq!(polynomial_mutate_scalar(64.0, 2.0, 128.0, eta, 0.5), 64.0);
            assert_eq!(polynomial_mutate_scalar(64.0, 2.0, 128.0, eta, 0.0), 2.0);
            assert_eq!(polynomial_mutate_scalar(64.0, 2.0, 128.0, eta, 1.0), 128.0);
        }
    }

    #[test]
    fn polynomial_mutation_stays_in_bounds_and_spread_shrinks_with_eta() {
        let mut r = rng::from_seed(70);
        let mut variance = |eta: f64, r: &mut rand_chacha::ChaCha8Rng| {
            let n = 10_000;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let v =
                    polynomial_mutate_int(64, bounds::N_FILTERS_MIN, bounds::N_FILTERS_MAX, eta, r);
                assert!((bounds::N_FILTERS_MIN..=bounds::N_FILTERS_MAX).contains(&v));
                values.push(v as f64);
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
        };
        let var20 = variance(20.0, &mut r);
        let var40 = variance(40.0, &mut r);
        assert!(
            var40 < var20,
            "eta 40 variance {var40} should be below eta 20 variance {var20}"
        );
    }

    #[test]
    fn mutate_changes_layer_counts_by_at_most_one_in_one_list() {
        let mut r = rng::from_seed(80);
        for _ in 0..2000 {
            let g = random_genome(&mut r);
            let m = mutate(&g, 20.0, &mut r);
            m.validate().unwrap();
            let dc = g.conv_blocks.len().abs_diff(m.conv_blocks.len());
            let dd = g.dense_layers.len().abs_diff(m.dense_layers.len());
            assert!(dc + dd <= 1, "conv delta {dc}, dense delta {dd}");
        }
    }

    #[test]
    fn mutate_falls_through_when_structure_is_saturated() {
        // Max counts: the add branch must still perturb via polynomial.
        let g = genome_with(5, 5, 90);
        let mut r = rng::from_seed(91);
        for _ in 0..200 {
            let m = mutate(&g, 20.0, &mut r);
            m.validate().unwrap();
        }
        // Minimal structure: nothing removable, output must stay valid.
        let g = Genome {
            conv_blocks: vec![],
            lone_pool: None,
            dense_layers: vec![DenseGene { n_neurons: 3 }],
        };
        for _ in 0..200 {
            let m = mutate(&g, 20.0, &mut r);
            m.validate().unwrap();
            assert!(!m.dense_layers.is_empty());
        }
    }

    #[test]
    fn serialization_round_trips() {
        let mut r = rng::from_seed(100);
        for _ in 0..100 {
            let g = random_genome(&mut r);
            let text = serialize_genome(&g);
            let back = parse_genome(&text).unwrap();
            assert_eq!(back, g);
            assert_eq!(serialize_genome(&back), text);
        }
    }

    #[test]
    fn parse_rejects_out_of_bounds_fields_with_bounds_in_message() {
        let g = genome_with(1, 1, 110);
        let text = serialize_genome(&g).replace(
            &format!("\"n_filters\":{}", g.conv_blocks[0].n_filters),
            "\"n_filters\":200",
        );
        match parse_genome(&text) {
            Err(GenomeError::OutOfBounds { field, value, lo, hi }) => {
                assert_eq!(field, "n_filters");
                assert_eq!(value, 200);
                assert_eq!((lo, hi), (2, 128));
            }
            other => panic!("expected OutOfBounds, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_structural_violations() {
        let block = serde_json::to_string(&ConvBlockGene {
            n_filters: 4,
            filter_size: 3,
            batch_norm: false,
            pool: PoolGene { kind: PoolKind::Max, size: 2, stride: 2 },
        })
        .unwrap();
        let six = vec![block; 6].join(",");
        let text = format!(
            "{{\"version\":1,\"conv_blocks\":[{six}],\"lone_pool\":null,\"dense_layers\":[{{\"n_neurons\":5}}]}}"
        );
        match parse_genome(&text) {
            Err(GenomeError::BadCount { list, count, hi, .. }) => {
                assert_eq!(list, "conv_blocks");
                assert_eq!(count, 6);
                assert_eq!(hi, 5);
            }
            other => panic!("expected BadCount, got {other:?}"),
        }

        let text = "{\"version\":99,\"conv_blocks\":[],\"lone_pool\":null,\"dense_layers\":[{\"n_neurons\":5}]}";
        assert!(matches!(parse_genome(text), Err(GenomeError::UnsupportedVersion(99))));
    }

    #[test]
    fn crossover_and_mutation_closure_fuzz() {
        let mut r = rng::from_seed(120);
        for i in 0..2000 {
            let a = random_genome(&mut r);
            let b = random_genome(&mut r);
            let (c1, c2) = if i % 2 == 0 {
                one_point_crossover(&a, &b, &mut r)
            } else {
                parameterwise_crossover(&a, &b, &mut r)
            };
            let m1 = mutate(&c1, 20.0, &mut r);
            let m2 = mutate(&c2, 40.0, &mut r);
            for g in [&c1, &c2, &m1, &m2] {
                g.validate().unwrap();
            }
        }
    }
}
