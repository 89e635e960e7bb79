//! Reference implementations used as test oracles.
#![allow(dead_code)]

use spurbench::nnopt::{Activation, Layer, Model};

/// Plain forward pass written independently of the library.
pub fn oracle_logits(layers: &[Layer], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for l in layers {
        let mut z = vec![0.0; l.outputs];
        for o in 0..l.outputs {
            let mut acc = l.biases[o];
            for i in 0..l.inputs {
                acc += l.weights[o * l.inputs + i] * a[i];
            }
            z[o] = match l.activation {
                Activation::Relu => acc.max(0.0),
                Activation::Identity => acc,
            };
        }
        a = z;
    }
    a
}

/// Weighted mean cross-entropy (log-sum-exp form) plus `wd/2 * sum(W^2)`.
pub fn oracle_objective(layers: &[Layer], xs: &[Vec<f64>], ys: &[usize], w: Option<&[f64]>, wd: f64) -> f64 {
    let mut total = 0.0;
    let mut mass = 0.0;
    for (k, (x, &y)) in xs.iter().zip(ys).enumerate() {
        let z = oracle_logits(layers, x);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let wk = w.map_or(1.0, |w| w[k]);
        total += wk * (lse - z[y]);
        mass += wk;
    }
    let reg: f64 = layers.iter().flat_map(|l| &l.weights).map(|v| v * v).sum();
    total / mass + 0.5 * wd * reg
}

pub fn oracle_accuracy(model: &Model, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| {
            let z = oracle_logits(model.layers(), x);
            let best = (0..z.len()).fold(0, |b, k| if z[k] > z[b] { k } else { b });
            best == y
        })
        .count();
    hits as f64 / xs.len() as f64
}

fn param(layers: &mut [Layer], li: usize, is_bias: bool, p: usize) -> &mut f64 {
    if is_bias {
        &mut layers[li].biases[p]
    } else {
        &mut layers[li].weights[p]
    }
}

/// Finite-difference check of `spurbench::nnopt::grad` against the oracle
/// objective. Returns the largest relative error over all parameters.
pub fn max_grad_error(model: &Model, xs: &[Vec<f64>], ys: &[usize], w: Option<&[f64]>, wd: f64) -> f64 {
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let batch = match w {
        Some(w) => spurbench::nnopt::Batch::weighted(&refs, ys, w),
        None => spurbench::nnopt::Batch::new(&refs, ys),
    };
    let analytic = spurbench::nnopt::grad(model, &batch, wd).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut layers = model.layers().to_vec();
    for li in 0..layers.len() {
        for (is_bias, count) in [(false, layers[li].weights.len()), (true, layers[li].biases.len())] {
            for p in 0..count {
                let orig = *param(&mut layers, li, is_bias, p);
                *param(&mut layers, li, is_bias, p) = orig + h;
                let up = oracle_objective(&layers, xs, ys, w, wd);
                *param(&mut layers, li, is_bias, p) = orig - h;
                let down = oracle_objective(&layers, xs, ys, w, wd);
                *param(&mut layers, li, is_bias, p) = orig;
                let fd = (up - down) / (2.0 * h);
                let g = &analytic.layers[li];
                let an = if is_bias { g.biases[p] } else { g.weights[p] };
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

/// Perceptron that stops after an error-free pass; `true` certifies linear separability.
pub fn perceptron_separates(xs: &[Vec<f64>], ys: &[usize], max_epochs: usize) -> bool {
    let d = xs[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for (x, &y) in xs.iter().zip(ys) {
            let t = if y == 1 { 1.0 } else { -1.0 };
            let s: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            if t * s <= 0.0 {
                mistakes += 1;
                for j in 0..d {
                    w[j] += t * x[j];
                }
                w[d] += t;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

pub mod selection;
