//! `attack`: scores a previously trained and saved network against an
//! attack trace file.

use nascty_core::attack_eval;
use nascty_core::neural_engine::TrainedNetwork;
use serde_json::json;

use crate::commands::eval_genome::write_ge_curve_csv;
use crate::error::CliResult;
use crate::manifest::RunManifest;
use crate::util::{ensure_out_dir, load_traceset};
use crate::AttackArgs;

pub fn run(args: AttackArgs) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    let net = TrainedNetwork::load(&args.network)?;
    let attack = load_traceset(&args.attack)?;
    let report =
        attack_eval::guessing_entropy(&net, &attack, args.attack_traces, args.folds, args.seed)?;

    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    let curve_path = args.out.join("ge_curve.csv");
    write_ge_curve_csv(&report, &curve_path)?;

    let mut manifest = RunManifest::new(
        "attack",
        json!({
            "folds": args.folds,
            "attack_traces": args.attack_traces,
            "seed": args.seed,
        }),
    );
    manifest.add_input(&args.network)?;
    manifest.add_input(&args.attack)?;
    manifest.add_artifact(&report_path)?;
    manifest.add_artifact(&curve_path)?;
    manifest.write(&args.out.join("manifest.json"))?;

    println!(
        "mean key rank at {} traces: {:.3}; traces to rank 0: {}; mean incremental key rank: {:.5}",
        report.n_traces,
        report.ge_curve.last().copied().unwrap_or(f64::NAN),
        report.traces_to_rank0.map_or("not reached".to_string(), |t| t.to_string()),
        report.mean_incremental_key_rank
    );
    Ok(())
}
