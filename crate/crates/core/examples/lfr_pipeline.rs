//! The full loss-based re-weighting pipeline on one benchmark cell, step by step.

use spurbench::dataspec::{self, BenchmarkLayout};
use spurbench::evalmetrics;
use spurbench::grouping::{self, SelectionStrategy};
use spurbench::nnopt::{self, Model, TrainConfig, Trainable};
use spurbench::retrain::{self, RetrainConfig};
use spurbench::SpuriosityConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (data, split) = dataspec::build_benchmark(&SpuriosityConfig::default(), 0.95, &BenchmarkLayout::default(), 2)?;
    let samples = data.samples();
    let init = Model::mlp(samples.dim(), &[32, 16], 2, 5)?;
    let erm = nnopt::train(&init, samples, &split.tr, &TrainConfig { epochs: 10, ..Default::default() }, Trainable::All, None)?;

    // Proxy groups: correct vs. misclassified per class on the held-out split.
    let partition = grouping::infer_partition(&erm, samples, &split.llr)?;
    for (group, size) in partition.sizes() {
        println!("{group}: {size}");
    }
    let s = grouping::default_s(&partition);
    let losses = nnopt::per_sample_losses(&erm, samples, &split.llr)?;
    let selection = grouping::select(&partition, &losses, s, SelectionStrategy::LFR, 0)?;
    println!("s = {s}, selected {} samples", selection.positions.len());

    let cfg = RetrainConfig { weight_decay: 0.1, learning_rate: 1e-3, seed: 9, ..Default::default() };
    let lfr = retrain::retrain_selected(&erm, samples, &split.llr, &cfg, "lfr")?;
    let before = evalmetrics::group_accuracies(&erm, &data, &split.te)?;
    let after = evalmetrics::group_accuracies(&lfr.model, &data, &split.te)?;
    println!("worst-group accuracy: erm {:.3} -> lfr {:.3}", before.wga, after.wga);
    println!("mean-group accuracy:  erm {:.3} -> lfr {:.3}", before.mean_group, after.mean_group);
    println!("retrained on {:?}, warnings {:?}", lfr.provenance.group_sizes, lfr.provenance.warnings);
    Ok(())
}
