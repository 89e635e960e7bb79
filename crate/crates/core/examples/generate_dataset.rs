//! Draw a synthetic spurious-correlation dataset and build the benchmark splits.
//!
//!     cargo run --example generate_dataset -- 0.95

use spurbench::dataspec::{self, group_counts, BenchmarkLayout};
use spurbench::{GroupId, SpuriosityConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rho: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.95);
    let config = SpuriosityConfig::default();
    println!("config: {}", serde_json::to_string(&config.with_rho(rho))?);

    let data = dataspec::generate(&config.with_rho(rho), 7)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let counts = group_counts(&data, &all)?;
    for g in GroupId::all(2) {
        println!("{:<14} {:>5}", g.key(), counts.get(g));
    }
    println!("empirical spuriosity per class: {:?}", (0..2).map(|c| counts.spuriosity(c)).collect::<Vec<_>>());

    let (bench, split) = dataspec::build_benchmark(&config, rho, &BenchmarkLayout::default(), 7)?;
    for (name, part) in [("tr", &split.tr), ("llr", &split.llr), ("val", &split.val), ("te", &split.te)] {
        println!("{name:>4}: {:?}", group_counts(&bench, part)?.as_vec());
    }
    Ok(())
}
