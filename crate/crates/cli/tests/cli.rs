//! Command-level integration tests: flag surfaces, exit-code classes,
//! artifact layout, and cross-command pipelines at toy scale.

mod common;

use std::fs;

use common::{exit_code, gen_tiny_data, nascty, run, run_ok};
use nascty_core::trace_store::read_traceset;

#[test]
fn usage_errors_exit_with_code_two() {
    let out = run(&["gen-traces", "--no-such-flag"]);
    assert_eq!(exit_code(&out), 2);
    let out = run(&["definitely-not-a-command"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn validation_errors_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny_data(dir.path(), 12, 1, 5);
    let out = run(&[
        "evolve",
        "--train",
        dir.path().join("train.traces").to_str().unwrap(),
        "--val",
        dir.path().join("val.traces").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--population",
        "7", // odd population is rejected
    ]);
    assert_eq!(exit_code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("population_size"));
}

#[test]
fn data_errors_exit_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "evolve",
        "--train",
        dir.path().join("missing.traces").to_str().unwrap(),
        "--val",
        dir.path().join("missing.traces").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 4);

    let out = run(&["report", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(exit_code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no logs found"));
}

#[test]
fn gen_traces_writes_all_splits_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny_data(dir.path(), 12, 2, 9);
    let train = read_traceset(&dir.path().join("train.traces")).unwrap();
    assert_eq!(train.n_traces(), 512);
    assert!(train.is_normalized());
    assert!(train.label_histogram().iter().all(|&c| c == 2));
    let val = read_traceset(&dir.path().join("val.traces")).unwrap();
    assert_eq!(val.n_traces(), 256);
    let attack = read_traceset(&dir.path().join("attack.traces")).unwrap();
    assert_eq!(attack.n_traces(), 64);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "gen-traces");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
}

#[test]
fn gen_traces_is_deterministic_and_desync_zero_is_identity() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen_tiny_data(a.path(), 10, 1, 77);
    // explicit --desync-level 0 must produce the identical pre-desync bytes
    run_ok(&[
        "gen-traces",
        "--out",
        b.path().to_str().unwrap(),
        "--n-samples",
        "10",
        "--noise-sigma",
        "0.3",
        "--train-per-class",
        "1",
        "--val-per-class",
        "1",
        "--attack-count",
        "64",
        "--seed",
        "77",
        "--desync-level",
        "0",
    ]);
    for name in ["train.traces", "val.traces", "attack.traces"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn gen_traces_desync_level_shifts_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, level) in [(&a, "0"), (&b, "4")] {
        run_ok(&[
            "gen-traces",
            "--out",
            dir.path().to_str().unwrap(),
            "--n-samples",
            "16",
            "--noise-sigma",
            "0.2",
            "--train-per-class",
            "1",
            "--val-per-class",
            "1",
            "--attack-count",
            "32",
            "--seed",
            "3",
            "--desync-level",
            level,
        ]);
    }
    assert_ne!(
        fs::read(a.path().join("attack.traces")).unwrap(),
        fs::read(b.path().join("attack.traces")).unwrap()
    );
}

#[test]
fn evolve_runs_and_resume_reproduces_the_log() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny_data(dir.path(), 12, 2, 21);
    let train = dir.path().join("train.traces");
    let val = dir.path().join("val.traces");
    let full = dir.path().join("full");
    let partial = dir.path().join("partial");

    let base = |out: &std::path::Path, gens: &str| {
        vec![
            "evolve".to_string(),
            "--train".into(),
            train.to_str().unwrap().into(),
            "--val".into(),
            val.to_str().unwrap().into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--population".into(),
            "4".into(),
            "--generations".into(),
            gens.into(),
            "--tournament-size".into(),
            "2".into(),
            "--epochs".into(),
            "1".into(),
            "--batch-size".into(),
            "128".into(),
            "--seed".into(),
            "13".into(),
            "--workers".into(),
            "2".into(),
        ]
    };

    let args: Vec<String> = base(&full, "3");
    run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let args: Vec<String> = base(&partial, "2");
    run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let mut resume_args: Vec<String> = base(&partial, "3");
    resume_args.push("--resume".into());
    resume_args.push(partial.join("checkpoint.ckpt").to_str().unwrap().into());
    run_ok(&resume_args.iter().map(String::as_str).collect::<Vec<_>>());

    assert_eq!(
        fs::read(full.join("generations.csv")).unwrap(),
        fs::read(partial.join("generations.csv")).unwrap()
    );
    assert!(full.join("champion.json").exists());
    assert!(full.join("manifest.json").exists());
}

#[test]
fn eval_genome_then_attack_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny_data(dir.path(), 12, 2, 31);
    let genome_path = dir.path().join("g.json");
    fs::write(
        &genome_path,
        "{\"version\":1,\"conv_blocks\":[],\"lone_pool\":null,\"dense_layers\":[{\"n_neurons\":8}]}\n",
    )
    .unwrap();
    let out = dir.path().join("eval");
    run_ok(&[
        "eval-genome",
        "--genome",
        genome_path.to_str().unwrap(),
        "--train",
        dir.path().join("train.traces").to_str().unwrap(),
        "--attack",
        dir.path().join("attack.traces").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "1",
        "--folds",
        "3",
        "--attack-traces",
        "10",
        "--seed",
        "4",
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"], 3);
    assert_eq!(report["ge_curve"].as_array().unwrap().len(), 10);
    let summary = fs::read_to_string(out.join("summary.md")).unwrap();
    // Flatten(12) -> Dense(8): 12*8+8 = 104; softmax 8->256: 8*256+256 = 2304
    assert!(summary.contains("Total trainable parameters: 2408"), "{summary}");
    let curve = fs::read_to_string(out.join("ge_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 11);

    let attack_out = dir.path().join("attack-out");
    run_ok(&[
        "attack",
        "--network",
        out.join("network.bin").to_str().unwrap(),
        "--attack",
        dir.path().join("attack.traces").to_str().unwrap(),
        "--out",
        attack_out.to_str().unwrap(),
        "--folds",
        "3",
        "--attack-traces",
        "10",
        "--seed",
        "4",
    ]);
    let report2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(attack_out.join("report.json")).unwrap()).unwrap();
    // same network, same attack parameters, same seed: identical curves
    assert_eq!(report["ge_curve"], report2["ge_curve"]);
}

#[test]
fn eval_genome_rejects_out_of_bounds_genome_with_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny_data(dir.path(), 12, 1, 41);
    let genome_path = dir.path().join("bad.json");
    fs::write(
        &genome_path,
        "{\"version\":1,\"conv_blocks\":[],\"lone_pool\":null,\"dense_layers\":[{\"n_neurons\":200}]}",
    )
    .unwrap();
    let out = run(&[
        "eval-genome",
        "--genome",
        genome_path.to_str().unwrap(),
        "--train",
        dir.path().join("train.traces").to_str().unwrap(),
        "--attack",
        dir.path().join("attack.traces").to_str().unwrap(),
        "--out",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_neurons"));
}

#[test]
fn grid_search_tabulates_cells() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny_data(dir.path(), 50, 1, 51);
    let out = dir.path().join("grid");
    run_ok(&[
        "grid-search",
        "--train",
        dir.path().join("train.traces").to_str().unwrap(),
        "--val",
        dir.path().join("val.traces").to_str().unwrap(),
        "--attack",
        dir.path().join("attack.traces").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--etas",
        "20",
        "--truncations",
        "1.0",
        "--repeats",
        "1",
        "--population",
        "8",
        "--generations",
        "1",
        "--epochs",
        "1",
        "--batch-size",
        "128",
        "--eval-epochs",
        "1",
        "--folds",
        "2",
        "--attack-traces",
        "8",
        "--seed",
        "6",
        "--workers",
        "2",
    ]);
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    // header + one row per cell (1 eta x 2 crossovers x 1 truncation)
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("eta,crossover,truncation,repeats,best_fitness"));
    assert!(lines[0].contains("mean_incremental_key_rank"));
    assert!(lines[1].starts_with("20,one-point,1,1,"));
    assert!(lines[2].starts_with("20,parameter-wise,1,1,"));
    assert!(out.join("cell-0-champion.json").exists());
    assert!(out.join("cell-1-champion.json").exists());
}

#[test]
fn report_renders_plots_idempotently() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("generations.csv"),
        "generation,best_fitness,mean_fitness,diversity\n0,5.5,5.6,2.0\n1,5.2,5.5,1.5\n2,5.0,5.4,1.0\n",
    )
    .unwrap();
    fs::write(
        dir.path().join("ge_curve.csv"),
        "n_traces,mean_key_rank\n1,120\n2,80\n3,10\n4,0\n5,0\n",
    )
    .unwrap();
    run_ok(&["report", "--run", dir.path().to_str().unwrap()]);

    let fitness_svg = fs::read_to_string(dir.path().join("fitness_vs_generation.svg")).unwrap();
    let rank_svg = fs::read_to_string(dir.path().join("key_rank_vs_traces.svg")).unwrap();
    // one polyline vertex per CSV row
    let best_points = fitness_svg
        .lines()
        .find(|l| l.starts_with("<polyline"))
        .and_then(|l| l.split("points=\"").nth(1))
        .and_then(|l| l.split('"').next())
        .unwrap();
    assert_eq!(best_points.split(' ').count(), 3);
    let rank_points = rank_svg
        .lines()
        .find(|l| l.starts_with("<polyline"))
        .and_then(|l| l.split("points=\"").nth(1))
        .and_then(|l| l.split('"').next())
        .unwrap();
    assert_eq!(rank_points.split(' ').count(), 5);

    let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("traces to rank 0: 4"), "{md}");

    // regeneration over existing outputs is byte-identical
    run_ok(&["report", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(
        fs::read_to_string(dir.path().join("fitness_vs_generation.svg")).unwrap(),
        fitness_svg
    );
    assert_eq!(fs::read_to_string(dir.path().join("key_rank_vs_traces.svg")).unwrap(), rank_svg);
}

#[test]
fn large_population_and_generation_flags_are_accepted() {
    // the paper-scale configuration parses and validates; the run itself
    // is out of desk-scale budget, so only config assembly is exercised
    let out = run(&["evolve", "--help"]);
    assert_eq!(exit_code(&out), 0);
    let help = String::from_utf8_lossy(&out.stdout).to_string();
    for flag in ["--population", "--generations", "--truncation", "--crossover", "--eta"] {
        assert!(help.contains(flag), "missing {flag} in help");
    }
}

#[test]
fn invalid_workers_env_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny_data(dir.path(), 12, 1, 61);
    let out = nascty()
        .args([
            "evolve",
            "--train",
            dir.path().join("train.traces").to_str().unwrap(),
            "--val",
            dir.path().join("val.traces").to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
        ])
        .env("NASCTY_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("NASCTY_WORKERS"));
}
