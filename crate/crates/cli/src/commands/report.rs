//! `report`: renders SVG plots and a markdown summary from the CSV logs in
//! a run directory. Pure function of the CSV bytes; regenerating over
//! existing outputs is byte-identical.

use std::path::Path;

use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::plot::{line_chart, Series};
use crate::util::{ensure_out_dir, parse_f64, read_csv};
use crate::ReportArgs;

pub const FITNESS_SVG: &str = "fitness_vs_generation.svg";
pub const KEYRANK_SVG: &str = "key_rank_vs_traces.svg";
pub const SUMMARY_MD: &str = "report.md";

struct FitnessLog {
    generations: Vec<f64>,
    best: Vec<f64>,
    mean: Vec<f64>,
}

fn load_fitness_log(path: &Path) -> CliResult<FitnessLog> {
    let (header, rows) = read_csv(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{}: missing column {name}", path.display())))
    };
    let (gi, bi, mi) = (col("generation")?, col("best_fitness")?, col("mean_fitness")?);
    let mut log = FitnessLog { generations: Vec::new(), best: Vec::new(), mean: Vec::new() };
    for row in rows {
        log.generations.push(parse_f64(path, "generation", &row[gi])?);
        log.best.push(parse_f64(path, "best_fitness", &row[bi])?);
        log.mean.push(parse_f64(path, "mean_fitness", &row[mi])?);
    }
    Ok(log)
}

fn load_ge_curve(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let (header, rows) = read_csv(path)?;
    if header != ["n_traces", "mean_key_rank"] {
        return Err(CliError::Data(format!(
            "{}: unexpected columns {header:?}",
            path.display()
        )));
    }
    rows.iter()
        .map(|row| {
            Ok((
                parse_f64(path, "n_traces", &row[0])?,
                parse_f64(path, "mean_key_rank", &row[1])?,
            ))
        })
        .collect()
}

pub fn run(args: ReportArgs) -> CliResult<()> {
    let out_dir = args.out.clone().unwrap_or_else(|| args.run.clone());
    let fitness_csv = args.run.join(super::evolve::GENERATIONS_CSV);
    let curve_csv = args.run.join("ge_curve.csv");

    let fitness_log = fitness_csv.exists().then(|| load_fitness_log(&fitness_csv)).transpose()?;
    let ge_curve = curve_csv.exists().then(|| load_ge_curve(&curve_csv)).transpose()?;
    if fitness_log.is_none() && ge_curve.is_none() {
        return Err(CliError::Data(format!(
            "no logs found in {}: expected {} and/or ge_curve.csv",
            args.run.display(),
            super::evolve::GENERATIONS_CSV,
        )));
    }
    ensure_out_dir(&out_dir)?;

    let mut manifest = RunManifest::new("report", json!({ "run": args.run.display().to_string() }));
    let mut md = String::from("# Run report\n");

    if let Some(log) = &fitness_log {
        manifest.add_input(&fitness_csv)?;
        let svg = line_chart(
            "Fitness vs generation",
            "generation",
            "validation cross-entropy",
            &[
                Series {
                    label: "best".into(),
                    points: log.generations.iter().copied().zip(log.best.iter().copied()).collect(),
                },
                Series {
                    label: "mean".into(),
                    points: log.generations.iter().copied().zip(log.mean.iter().copied()).collect(),
                },
            ],
        );
        let path = out_dir.join(FITNESS_SVG);
        std::fs::write(&path, &svg)?;
        manifest.add_artifact(&path)?;

        let best_final = log.best.last().copied().unwrap_or(f64::NAN);
        let best_ever = log.best.iter().copied().fold(f64::INFINITY, f64::min);
        md.push_str(&format!(
            "\n## Evolution\n\n\
             - generations: {}\n\
             - final best fitness: {best_final}\n\
             - best fitness ever: {best_ever}\n\
             - plot: {FITNESS_SVG}\n",
            log.generations.len()
        ));
    }

    if let Some(curve) = &ge_curve {
        manifest.add_input(&curve_csv)?;
        let svg = line_chart(
            "Key rank vs attack traces",
            "attack traces",
            "mean key rank",
            &[Series { label: "guessing entropy".into(), points: curve.clone() }],
        );
        let path = out_dir.join(KEYRANK_SVG);
        std::fs::write(&path, &svg)?;
        manifest.add_artifact(&path)?;

        let final_ge = curve.last().map(|(_, y)| *y).unwrap_or(f64::NAN);
        let reached = curve
            .iter()
            .rev()
            .take_while(|(_, y)| *y == 0.0)
            .last()
            .map(|(x, _)| *x);
        md.push_str(&format!(
            "\n## Attack\n\n\
             - attack traces: {}\n\
             - final mean key rank: {final_ge}\n\
             - traces to rank 0: {}\n\
             - plot: {KEYRANK_SVG}\n",
            curve.len(),
            reached.map_or("not reached".to_string(), |x| format!("{x}")),
        ));
    }

    let md_path = out_dir.join(SUMMARY_MD);
    std::fs::write(&md_path, &md)?;
    manifest.add_artifact(&md_path)?;
    manifest.write(&out_dir.join("report-manifest.json"))?;
    println!("report written to {}", out_dir.display());
    Ok(())
}
