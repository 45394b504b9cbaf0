use std::path::Path;
use std::process::{Command, Output};

pub fn nascty() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nascty"))
}

pub fn run(args: &[&str]) -> Output {
    nascty().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[allow(dead_code)] // used by the cli test target only
pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Generates a small synchronized plain dataset for pipeline tests.
pub fn gen_tiny_data(dir: &Path, n_samples: usize, train_per_class: usize, seed: u64) {
    run_ok(&[
        "gen-traces",
        "--out",
        dir.to_str().unwrap(),
        "--n-samples",
        &n_samples.to_string(),
        "--noise-sigma",
        "0.3",
        "--train-per-class",
        &train_per_class.to_string(),
        "--val-per-class",
        "1",
        "--attack-count",
        "64",
        "--seed",
        &seed.to_string(),
    ]);
}
