//! Attack-phase scoring of trained networks.
//!
//! For each key candidate the per-trace probabilities assigned to the
//! hypothesized S-box output `SBOX(p XOR k')` are log-accumulated; the key
//! rank is the number of candidates scoring strictly higher than the true
//! key. Guessing entropy averages the incremental key rank over seeded
//! attack folds and summarizes it as the mean incremental key rank: the
//! average rank over all trace counts 1..N and all folds.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural_engine::{NetError, TrainedNetwork, PROB_CLAMP};
use crate::rng::{self, tag};
use crate::trace_model::{sbox, TraceSet};

pub const N_CANDIDATES: usize = 256;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attack needs {requested} traces per fold, set has {available}")]
    TooFewTraces { requested: usize, available: usize },
    #[error("probability rows ({probs}) and plaintexts ({plaintexts}) disagree")]
    LengthMismatch { probs: usize, plaintexts: usize },
    #[error("probability rows must have 256 columns, got {0}")]
    WrongClassCount(usize),
    #[error("attack set mixes key bytes; a single fixed key is required")]
    MixedKeys,
    #[error("attack needs at least one trace and one fold")]
    EmptyAttack,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Guessing-entropy curve and summary statistics over attack folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    /// Mean key rank after 1..=N accumulated traces, averaged over folds.
    pub ge_curve: Vec<f64>,
    /// Smallest trace count from which the mean key rank is 0 and stays 0.
    pub traces_to_rank0: Option<usize>,
    /// Mean of the key rank over all incremental trace counts and folds.
    pub mean_incremental_key_rank: f64,
    pub folds: usize,
    pub n_traces: usize,
    pub seed: u64,
}

/// Accumulated log-probability per key candidate: for each candidate `k'`,
/// sums `log P_i(SBOX(p_i XOR k'))` over all traces, with probabilities
/// clamped below at 1e-12.
pub fn log_prob_vector(
    probs: &Array2<f64>,
    plaintexts: &[u8],
) -> Result<[f64; N_CANDIDATES], AttackError> {
    if probs.nrows() != plaintexts.len() {
        return Err(AttackError::LengthMismatch {
            probs: probs.nrows(),
            plaintexts: plaintexts.len(),
        });
    }
    if probs.ncols() != N_CANDIDATES {
        return Err(AttackError::WrongClassCount(probs.ncols()));
    }
    let mut acc = [0.0f64; N_CANDIDATES];
    for (row, &p) in probs.rows().into_iter().zip(plaintexts.iter()) {
        for (candidate, slot) in acc.iter_mut().enumerate() {
            let label = sbox(p ^ candidate as u8) as usize;
            *slot += row[label].max(PROB_CLAMP).ln();
        }
    }
    Ok(acc)
}

/// Number of candidates with strictly higher accumulated log-probability
/// than the true key; ties do not increase the rank.
pub fn key_rank(log_probs: &[f64; N_CANDIDATES], true_key: u8) -> u32 {
    let reference = log_probs[true_key as usize];
    log_probs.iter().filter(|&&v| v > reference).count() as u32
}

/// Fold evaluation on precomputed probability rows. Each fold draws
/// `n_traces` rows without replacement (seeded per fold), accumulates
/// log-probabilities one trace at a time, and records the key rank after
/// every count. The curve is the per-count mean over folds.
pub fn guessing_entropy_from_probs(
    probs: &Array2<f64>,
    plaintexts: &[u8],
    true_key: u8,
    n_traces: usize,
    folds: usize,
    seed: u64,
) -> Result<AttackReport, AttackError> {
    if probs.nrows() != plaintexts.len() {
        return Err(AttackError::LengthMismatch {
            probs: probs.nrows(),
            plaintexts: plaintexts.len(),
        });
    }
    if probs.ncols() != N_CANDIDATES {
        return Err(AttackError::WrongClassCount(probs.ncols()));
    }
    if n_traces == 0 || folds == 0 {
        return Err(AttackError::EmptyAttack);
    }
    let available = probs.nrows();
    if n_traces > available {
        return Err(AttackError::TooFewTraces { requested: n_traces, available });
    }

    // log once, accumulate many times
    let log_probs = probs.mapv(|p| p.max(PROB_CLAMP).ln());

    let fold_ranks: Vec<Vec<u32>> = (0..folds as u64)
        .into_par_iter()
        .map(|fold| {
            let mut fold_rng = rng::stream(seed, tag::ATTACK_FOLD, fold);
            let mut indices: Vec<usize> = (0..available).collect();
            for i in 0..n_traces.min(available - 1) {
                let j = fold_rng.random_range(i..available);
                indices.swap(i, j);
            }
            let mut acc = [0.0f64; N_CANDIDATES];
            let mut ranks = Vec::with_capacity(n_traces);
            for &idx in indices.iter().take(n_traces) {
                let row = log_probs.row(idx);
                let p = plaintexts[idx];
                for (candidate, slot) in acc.iter_mut().enumerate() {
                    *slot += row[sbox(p ^ candidate as u8) as usize];
                }
                ranks.push(key_rank(&acc, true_key));
            }
            ranks
        })
        .collect();

    let mut ge_curve = vec![0.0f64; n_traces];
    let mut mikr = 0.0;
    for ranks in &fold_ranks {
        let mut fold_sum = 0.0;
        for (i, &r) in ranks.iter().enumerate() {
            ge_curve[i] += r as f64;
            fold_sum += r as f64;
        }
        mikr += fold_sum / n_traces as f64;
    }
    for v in ge_curve.iter_mut() {
        *v /= folds as f64;
    }
    mikr /= folds as f64;

    let mut traces_to_rank0 = None;
    for i in (0..n_traces).rev() {
        if ge_curve[i] == 0.0 {
            traces_to_rank0 = Some(i + 1);
        } else {
            break;
        }
    }

    Ok(AttackReport {
        ge_curve,
        traces_to_rank0,
        mean_incremental_key_rank: mikr,
        folds,
        n_traces,
        seed,
    })
}

/// Runs the profiling attack: network probabilities for the whole attack
/// set are computed once, then folds are drawn as in
/// [`guessing_entropy_from_probs`]. The attack set must carry one fixed
/// key byte.
pub fn guessing_entropy(
    net: &TrainedNetwork,
    attack_set: &TraceSet,
    n_traces: usize,
    folds: usize,
    seed: u64,
) -> Result<AttackReport, AttackError> {
    if attack_set.n_traces() == 0 {
        return Err(AttackError::EmptyAttack);
    }
    let true_key = attack_set.keys()[0];
    if attack_set.keys().iter().any(|&k| k != true_key) {
        return Err(AttackError::MixedKeys);
    }
    let matrix = attack_set.to_matrix();
    let probs = net.forward(&matrix)?;
    guessing_entropy_from_probs(
        &probs,
        attack_set.plaintexts(),
        true_key,
        n_traces,
        folds,
        seed,
    )
}
