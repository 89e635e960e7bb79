//! A small sweep over spuriosity rates, rendered as a markdown grid and CSV.
//!
//!     SPURBENCH_THREADS=2 cargo run --release --example spuriosity_sweep

use spurbench::harness::{self, ExperimentConfig, ReportFormat};
use spurbench::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        spuriosity_list: vec![0.7, 0.9, 0.99],
        methods: vec![Method::Erm, Method::Lfr, Method::Cfr, Method::DfrOracle],
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    };
    let report = harness::sweep(&cfg)?;
    print!("{}", harness::render_report(&report, ReportFormat::Markdown)?);
    println!();
    print!("{}", harness::render_report(&report, ReportFormat::Csv)?);
    Ok(())
}
