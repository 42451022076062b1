//! The five single-subject methods over repeated simulated datasets, each
//! tuned by nested cross-validation, summarised as mean over seeds.
//!
//! cargo run --release --example table1 -- [seeds]

use groupsvm::cli::format_report;
use groupsvm::evaluation::selection_frequency;
use groupsvm::protocol::{simulated_study, summarize, EvalRow, Method, StudyConfig};

fn main() -> groupsvm::Result<()> {
    let n: u64 = std::env::args().nth(1).map_or(10, |s| s.parse().expect("seed count"));
    let config = StudyConfig {
        seeds: (0..n).collect(),
        ..Default::default()
    };
    let study = simulated_study(&config)?;
    let rows: Vec<EvalRow> = study.records.iter().map(EvalRow::from).collect();
    print!("{}", format_report(&summarize(&rows, "svm")?));

    let layout = config.sim.layout()?;
    let gsvm_a: Vec<_> = study
        .records
        .iter()
        .zip(&study.models)
        .filter(|(r, _)| r.method == Method::GsvmA)
        .map(|(_, m)| m.clone())
        .collect();
    println!("gsvm-a selection counts per sensor: {:?}", selection_frequency(&gsvm_a, &layout)?);
    Ok(())
}
