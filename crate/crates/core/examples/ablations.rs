//! Selection-rule ablations at one grid point: loss-ordered vs. random picks
//! in the correct and misclassified groups.

use spurbench::evalmetrics::{self, GridSpec};
use spurbench::harness::{self, ExperimentConfig};
use spurbench::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rho = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.95);
    let cfg = ExperimentConfig::default();
    let point = GridSpec { learning_rates: vec![1e-3], weight_decays: vec![0.1], ..GridSpec::default() }.points(Method::Lfr)[0].clone();
    println!("rho {rho}, lr {}, wd {}, s = {}", point.learning_rate, point.weight_decay, point.s);
    println!("{:<14}{}", "method", (0..3).map(|s| format!("seed {s}  ")).collect::<String>());
    for method in [Method::Lfr, Method::Cfr, Method::CrMl, Method::ClMr, Method::LfrReversed] {
        let mut line = format!("{:<14}", method.name());
        for seed in 0..3 {
            let (data, split) = harness::cell_data(&cfg, Some(rho), seed)?;
            let erm = harness::train_erm(&cfg, &data, &split, Some(rho), seed)?;
            let out = evalmetrics::run_method(method, &erm, &data, &split.llr, &point, seed)?;
            line.push_str(&format!("{:<8.3}", evalmetrics::group_accuracies(&out.model, &data, &split.te)?.wga));
        }
        println!("{line}");
    }
    Ok(())
}
