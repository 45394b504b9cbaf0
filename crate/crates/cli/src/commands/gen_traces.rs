//! `gen-traces`: synthesizes the three splits of an experiment.
//!
//! Train and validation splits are class-balanced and normalized with
//! scaling fitted on the training split; the attack split shares the key
//! and normalization but keeps its natural label distribution.
//! Desynchronization, when requested, applies to every split before
//! balancing and normalization.

use std::path::Path;

use nascty_core::rng::{self, tag};
use nascty_core::trace_model::{
    apply_normalization, desynchronize, generate, normalize, sample_balanced, TraceError,
    TraceParams, TraceSet,
};
use nascty_core::trace_store::write_traceset;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::util::ensure_out_dir;
use crate::GenTracesArgs;

const SPLIT_TRAIN: u64 = 0;
const SPLIT_VAL: u64 = 1;
const SPLIT_ATTACK: u64 = 2;

/// Pool size that makes a balanced draw of `n_per_class` succeed with
/// overwhelming probability under uniform labels.
fn pool_per_class(n_per_class: usize) -> usize {
    n_per_class + 4 * (n_per_class as f64).sqrt().ceil() as usize + 16
}

/// Generates, optionally desynchronizes, and balance-samples one split,
/// doubling the candidate pool on a deficient class (fresh derived seed
/// per attempt, so the whole procedure stays deterministic).
fn balanced_split(
    params: &TraceParams,
    n_per_class: usize,
    desync_level: usize,
    split: u64,
    master_seed: u64,
) -> CliResult<TraceSet> {
    let mut per_class_pool = pool_per_class(n_per_class);
    for attempt in 0..4u64 {
        let mut p = params.clone();
        p.seed = rng::mix(&[master_seed, tag::GEN_TRACES, split, attempt]);
        let mut pool = generate(&p, per_class_pool * 256)?;
        if desync_level > 0 {
            pool = desynchronize(
                &pool,
                desync_level,
                rng::mix(&[master_seed, tag::DESYNC, split, attempt]),
            )?;
        }
        match sample_balanced(&pool, n_per_class, rng::mix(&[master_seed, tag::BALANCE, split, attempt])) {
            Ok(ts) => return Ok(ts),
            Err(TraceError::DeficientLabel { .. }) => {
                per_class_pool *= 2;
                continue;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(CliError::Internal(
        "balanced sampling failed after four pool enlargements".into(),
    ))
}

pub fn run(args: GenTracesArgs) -> CliResult<()> {
    let leak_point = args.leak_point.unwrap_or(args.n_samples / 2);
    let params = TraceParams {
        n_samples_per_trace: args.n_samples,
        leak_point_value: leak_point,
        leak_point_mask: args.mask_point,
        noise_sigma: args.noise_sigma,
        max_desync: args.desync_level,
        masking_enabled: args.masking,
        key_byte: args.key_byte,
        seed: 0, // per-split seeds are derived below
    };
    params.validate()?;
    if args.train_per_class == 0 || args.val_per_class == 0 || args.attack_count == 0 {
        return Err(CliError::Validation(
            "train-per-class, val-per-class, and attack-count must be positive".into(),
        ));
    }
    ensure_out_dir(&args.out)?;

    let train = balanced_split(&params, args.train_per_class, args.desync_level, SPLIT_TRAIN, args.seed)?;
    let val = balanced_split(&params, args.val_per_class, args.desync_level, SPLIT_VAL, args.seed)?;

    let mut attack_params = params.clone();
    attack_params.seed = rng::mix(&[args.seed, tag::GEN_TRACES, SPLIT_ATTACK, 0]);
    let mut attack = generate(&attack_params, args.attack_count)?;
    if args.desync_level > 0 {
        attack = desynchronize(
            &attack,
            args.desync_level,
            rng::mix(&[args.seed, tag::DESYNC, SPLIT_ATTACK, 0]),
        )?;
    }

    let (train, norm) = normalize(&train)?;
    let val = apply_normalization(&val, &norm);
    let attack = apply_normalization(&attack, &norm);

    let mut manifest = RunManifest::new(
        "gen-traces",
        json!({
            "n_samples": args.n_samples,
            "leak_point": leak_point,
            "mask_point": args.mask_point,
            "noise_sigma": args.noise_sigma,
            "masking": args.masking,
            "desync_level": args.desync_level,
            "key_byte": args.key_byte,
            "seed": args.seed,
            "train_per_class": args.train_per_class,
            "val_per_class": args.val_per_class,
            "attack_count": args.attack_count,
        }),
    );

    for (name, ts) in [("train.traces", &train), ("val.traces", &val), ("attack.traces", &attack)] {
        let path = args.out.join(name);
        write_split(ts, &path)?;
        manifest.add_artifact(&path)?;
        println!("{}: {} traces x {} samples", path.display(), ts.n_traces(), ts.n_samples());
    }
    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}

fn write_split(ts: &TraceSet, path: &Path) -> CliResult<()> {
    write_traceset(ts, path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
