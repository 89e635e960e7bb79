//! Validation-based hyperparameter selection over the default grid.

use spurbench::evalmetrics;
use spurbench::harness::{self, ExperimentConfig};
use spurbench::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::default();
    let (data, split) = harness::cell_data(&cfg, Some(0.9), 1)?;
    let erm = harness::train_erm(&cfg, &data, &split, Some(0.9), 1)?;
    let grid = cfg.grid(Method::Lfr);
    let hp = evalmetrics::select_hp(&erm, &data, &split.llr, &split.val, Method::Lfr, &grid, 4)?;
    for (k, (point, score)) in grid.iter().zip(&hp.scores).enumerate() {
        let mark = if k == hp.best_index { "*" } else { " " };
        let score = score.map_or("failed".to_string(), |s| format!("{s:.3}"));
        println!("{mark} lr {:<6} wd {:<5} s {:<9} val wga {score}", point.learning_rate, point.weight_decay, point.s.to_string());
    }
    let test = evalmetrics::group_accuracies(&hp.retrained.model, &data, &split.te)?;
    println!("chosen point {} -> test wga {:.3}", hp.best_index, test.wga);
    Ok(())
}
