//! Compare backprop gradients with central finite differences.

use rand::Rng;
use spurbench::nnopt::{self, Batch, Model};
use spurbench::seeding;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = seeding::rng(3);
    let model = Model::mlp(4, &[8, 6], 3, 11)?;
    let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    let ys: Vec<usize> = (0..10).map(|_| rng.random_range(0..3)).collect();
    let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let batch = Batch::new(&rows, &ys);
    let wd = 1e-3;

    let analytic = nnopt::grad(&model, &batch, wd)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (li, layer) in model.layers().iter().enumerate() {
        for p in 0..layer.weights.len() {
            let shifted = |delta: f64| -> Result<f64, nnopt::NnError> {
                let mut layers = model.layers().to_vec();
                layers[li].weights[p] += delta;
                nnopt::objective(&Model::new(layers)?, &batch, wd)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            let g = analytic.layers[li].weights[p];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-7));
        }
    }
    println!("{} parameters, gradient norm {:.4}", model.num_params(), analytic.norm());
    println!("worst relative weight-gradient error: {worst:.2e}");
    Ok(())
}
