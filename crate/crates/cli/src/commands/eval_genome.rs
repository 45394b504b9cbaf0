//! `eval-genome`: trains a genome's network on the profiling split and
//! scores it as an attack, emitting the report, the guessing-entropy
//! curve, a layer-by-layer architecture summary, and the trained network.

use std::path::Path;

use nascty_core::attack_eval::{self, AttackReport};
use nascty_core::genome::{self, Genome};
use nascty_core::neural_engine::{init_parameters, LayerSummary, TrainedNetwork};
use nascty_core::trace_model::TraceSet;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::util::{ensure_out_dir, load_profiling_split, load_traceset};
use crate::EvalGenomeArgs;

pub fn write_ge_curve_csv(report: &AttackReport, path: &Path) -> CliResult<()> {
    let mut text = String::from("n_traces,mean_key_rank\n");
    for (i, v) in report.ge_curve.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, v));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn architecture_summary_markdown(
    genome: &Genome,
    net: &TrainedNetwork,
    report: Option<&AttackReport>,
) -> String {
    let mut md = String::from("# Architecture summary\n\n");
    md.push_str(&format!(
        "Genome: {} convolutional block(s), lone pool: {}, {} dense layer(s)\n\n",
        genome.conv_blocks.len(),
        if genome.lone_pool.is_some() { "yes" } else { "no" },
        genome.dense_layers.len()
    ));
    md.push_str("| # | layer | detail | output shape | trainable params |\n");
    md.push_str("|---|-------|--------|--------------|------------------|\n");
    let summary: Vec<LayerSummary> = net.summary();
    for (i, layer) in summary.iter().enumerate() {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            i, layer.kind, layer.detail, layer.output_shape, layer.parameters
        ));
    }
    md.push_str(&format!("\nTotal trainable parameters: {}\n", net.param_count()));
    if let Some(r) = report {
        md.push_str(&format!(
            "\n## Attack result\n\n\
             - mean key rank at {} traces: {}\n\
             - traces to rank 0: {}\n\
             - mean incremental key rank: {}\n\
             - folds: {}\n",
            r.n_traces,
            r.ge_curve.last().copied().unwrap_or(f64::NAN),
            r.traces_to_rank0.map_or("not reached".to_string(), |t| t.to_string()),
            r.mean_incremental_key_rank,
            r.folds
        ));
    }
    md
}

pub struct EvalOutcome {
    pub report: AttackReport,
    pub net: TrainedNetwork,
}

/// Shared by `eval-genome` and `grid-search`: train the genome's network
/// and score it against the attack split.
pub fn train_and_attack(
    genome: &Genome,
    train: &TraceSet,
    attack: &TraceSet,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    folds: usize,
    attack_traces: usize,
    seed: u64,
) -> CliResult<EvalOutcome> {
    let specs = genome::express(genome, train.n_samples())?;
    let mut net = init_parameters(specs, train.n_samples(), seed)?;
    net.train(
        &train.to_matrix(),
        train.labels(),
        epochs,
        batch_size,
        learning_rate,
        seed,
    )?;
    let report = attack_eval::guessing_entropy(&net, attack, attack_traces, folds, seed)?;
    Ok(EvalOutcome { report, net })
}

pub fn run(args: EvalGenomeArgs) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    let text = std::fs::read_to_string(&args.genome)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.genome.display())))?;
    let genome = genome::parse_genome(text.trim())?;

    let train = load_profiling_split(&args.train, "training")?;
    let attack = load_traceset(&args.attack)?;
    if train.n_samples() != attack.n_samples() {
        return Err(CliError::Validation(format!(
            "training traces have {} samples but attack traces have {}",
            train.n_samples(),
            attack.n_samples()
        )));
    }

    let outcome = train_and_attack(
        &genome,
        &train,
        &attack,
        args.epochs,
        args.batch_size,
        args.learning_rate,
        args.folds,
        args.attack_traces,
        args.seed,
    )?;

    let report_path = args.out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&outcome.report)? + "\n")?;
    let curve_path = args.out.join("ge_curve.csv");
    write_ge_curve_csv(&outcome.report, &curve_path)?;
    let summary_path = args.out.join("summary.md");
    std::fs::write(
        &summary_path,
        architecture_summary_markdown(&genome, &outcome.net, Some(&outcome.report)),
    )?;
    let net_path = args.out.join("network.bin");
    outcome.net.save(&net_path)?;

    let mut manifest = RunManifest::new(
        "eval-genome",
        json!({
            "epochs": args.epochs,
            "folds": args.folds,
            "attack_traces": args.attack_traces,
            "batch_size": args.batch_size,
            "learning_rate": args.learning_rate,
            "seed": args.seed,
        }),
    );
    manifest.add_input(&args.genome)?;
    manifest.add_input(&args.train)?;
    manifest.add_input(&args.attack)?;
    for artifact in [&report_path, &curve_path, &summary_path, &net_path] {
        manifest.add_artifact(artifact)?;
    }
    manifest.write(&args.out.join("manifest.json"))?;

    println!(
        "mean key rank at {} traces: {:.3}; traces to rank 0: {}; mean incremental key rank: {:.5}",
        outcome.report.n_traces,
        outcome.report.ge_curve.last().copied().unwrap_or(f64::NAN),
        outcome
            .report
            .traces_to_rank0
            .map_or("not reached".to_string(), |t| t.to_string()),
        outcome.report.mean_incremental_key_rank
    );
    Ok(())
}
