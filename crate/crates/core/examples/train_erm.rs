//! Train the ERM model on a high-spuriosity benchmark, look at its group
//! accuracies, and round-trip it through a checkpoint.

use spurbench::dataspec::{self, BenchmarkLayout};
use spurbench::evalmetrics;
use spurbench::nnopt::{self, Model, TrainConfig, Trainable};
use spurbench::SpuriosityConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (data, split) = dataspec::build_benchmark(&SpuriosityConfig::default(), 0.95, &BenchmarkLayout::default(), 0)?;
    let init = Model::mlp(data.samples().dim(), &[32, 16], 2, 1)?;
    let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let model = nnopt::train(&init, data.samples(), &split.tr, &cfg, Trainable::All, None)?;

    let test = evalmetrics::group_accuracies(&model, &data, &split.te)?;
    for (g, stat) in &test.per_group {
        println!("{:<14} {:.3} (n = {})", g.key(), stat.accuracy, stat.size);
    }
    println!("worst group {:.3}, mean group {:.3}", test.wga, test.mean_group);

    let mut bytes = Vec::new();
    nnopt::write_checkpoint(&model, &mut bytes)?;
    let restored = nnopt::read_checkpoint(bytes.as_slice())?;
    println!("checkpoint: {} bytes, identical = {}", bytes.len(), restored == model);
    Ok(())
}
