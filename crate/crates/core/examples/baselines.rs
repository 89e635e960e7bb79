//! Group-oracle retraining and confidence-weighted retraining next to ERM.

use spurbench::harness::{self, ExperimentConfig};
use spurbench::retrain::{self, AfrConfig, RetrainConfig};
use spurbench::{evalmetrics, nnopt};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let (data, split) = harness::cell_data(&cfg, Some(0.95), 0)?;
    let erm = harness::train_erm(&cfg, &data, &split, Some(0.95), 0)?;
    let score = |m: &spurbench::Model| -> Result<String, evalmetrics::MetricsError> {
        let g = evalmetrics::group_accuracies(m, &data, &split.te)?;
        Ok(format!("wga {:.3}  mean {:.3}", g.wga, g.mean_group))
    };
    println!("erm         {}", score(&erm)?);

    let rc = RetrainConfig { learning_rate: 1e-3, weight_decay: 0.1, seed: 1, ..Default::default() };
    let dfr = retrain::retrain_dfr_oracle(&erm, &data, &split.llr, &rc)?;
    println!("dfr_oracle  {}  ({} per true group)", score(&dfr.model)?, dfr.provenance.resolved_s.unwrap_or(0));

    let p_true = nnopt::true_label_probs(&erm, data.samples(), &split.llr)?;
    let labels: Vec<usize> = split.llr.iter().map(|&i| data.samples().label(i)).collect();
    for gamma in [0.0, 2.0, 8.0] {
        let w = retrain::afr_weights(&p_true, gamma, &labels)?;
        let max = w.iter().cloned().fold(0.0, f64::max);
        let afr = retrain::retrain_afr(&erm, data.samples(), &split.llr, &AfrConfig { gamma, retrain: rc.clone() })?;
        println!("afr g={gamma:<4} {}  (largest weight {max:.2})", score(&afr.model)?);
    }
    Ok(())
}
