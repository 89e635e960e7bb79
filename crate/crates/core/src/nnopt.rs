//! MLP classifier `softmax(h ∘ g)`, cross-entropy, backprop and SGD training.
//!
//! The last layer is the linear head `h`; every layer before it belongs to the
//! feature extractor `g`. All arithmetic is `f64`.

use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataspec::{DataError, Samples};
use crate::seeding;

/// Probability floor used by [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite logits")]
    NonFinite,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("class {0} has no samples to balance against")]
    EmptyClass(usize),
    #[error("batch size must be positive")]
    ZeroBatchSize,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid sample weights: {0}")]
    BadWeights(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    fn as_byte(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Dense layer `act(W x + b)`; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self, NnError> {
        if inputs == 0 || outputs == 0 {
            return Err(NnError::InvalidModel("layer with zero width".into()));
        }
        if weights.len() != inputs * outputs || biases.len() != outputs {
            return Err(NnError::InvalidModel(format!(
                "{}x{} layer given {} weights and {} biases",
                outputs,
                inputs,
                weights.len(),
                biases.len()
            )));
        }
        Ok(Self { inputs, outputs, weights, biases, activation })
    }

    fn uniform(inputs: usize, outputs: usize, bound: f64, activation: Activation, rng: &mut impl Rng) -> Self {
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let biases = (0..outputs).map(|_| draw()).collect();
        Self { inputs, outputs, weights, biases, activation }
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.biases)) {
            let z = row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi);
            *o = self.activation.apply(z);
        }
    }
}

/// Classifier `softmax(h ∘ g)`. The last layer is the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        let head = layers.last().ok_or_else(|| NnError::InvalidModel("no layers".into()))?;
        if head.activation != Activation::Identity {
            return Err(NnError::InvalidModel("head must be linear".into()));
        }
        if head.outputs < 2 {
            return Err(NnError::InvalidModel("need at least two classes".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(NnError::InvalidModel(format!(
                    "layer widths do not chain: {} then {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// ReLU MLP `d_in → hidden… → classes`. Hidden layers use He-uniform
    /// init, the head uniform `±1/√fan_in`.
    pub fn mlp(d_in: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self, NnError> {
        let mut rng = seeding::rng(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = d_in;
        for &width in hidden {
            let bound = (6.0 / fan_in as f64).sqrt();
            layers.push(Layer::uniform(fan_in, width, bound, Activation::Relu, &mut rng));
            fan_in = width;
        }
        layers.push(Layer::uniform(fan_in, classes, 1.0 / (fan_in as f64).sqrt(), Activation::Identity, &mut rng));
        if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
            return Err(NnError::InvalidModel("zero-width layer".into()));
        }
        Model::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layers of `g`.
    pub fn feature_extractor(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn head(&self) -> &Layer {
        self.layers.last().expect("model has a head")
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn d_feat(&self) -> usize {
        self.head().inputs
    }

    pub fn num_classes(&self) -> usize {
        self.head().outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.d_in() {
            return Err(NnError::DimensionMismatch { expected: self.d_in(), found: x.len() });
        }
        Ok(())
    }

    /// `g(x)`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        Ok(run_layers(self.feature_extractor(), x))
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(forward(self, x)?.1)
    }

    /// Argmax of the logits, ties to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize, NnError> {
        Ok(argmax(&self.logits(x)?))
    }
}

fn run_layers(layers: &[Layer], x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for layer in layers {
        let mut next = vec![0.0; layer.outputs];
        layer.forward_into(&cur, &mut next);
        cur = next;
    }
    cur
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, NnError> {
    if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
        return Err(NnError::NonFinite);
    }
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln p_y` with `p_y` floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], y: usize) -> Result<f64, NnError> {
    let p = probs.get(y).ok_or(NnError::LabelOutOfRange { label: y, classes: probs.len() })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Returns `(g(x), h(g(x)))`.
pub fn forward(model: &Model, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    model.check_input(x)?;
    let features = run_layers(model.feature_extractor(), x);
    let logits = run_layers(std::slice::from_ref(model.head()), &features);
    Ok((features, logits))
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<LayerGrad>,
}

impl Gradient {
    fn zeros(layers: &[Layer]) -> Self {
        Self {
            layers: layers
                .iter()
                .map(|l| LayerGrad { weights: vec![0.0; l.weights.len()], biases: vec![0.0; l.outputs] })
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.biases))
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// A borrowed minibatch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [&'a [f64]],
    pub labels: &'a [usize],
    pub weights: Option<&'a [f64]>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [&'a [f64]], labels: &'a [usize]) -> Self {
        Self { inputs, labels, weights: None }
    }

    pub fn weighted(inputs: &'a [&'a [f64]], labels: &'a [usize], weights: &'a [f64]) -> Self {
        Self { inputs, labels, weights: Some(weights) }
    }
}

fn check_batch(layers: &[Layer], batch: &Batch<'_>) -> Result<(), NnError> {
    if batch.inputs.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if batch.labels.len() != batch.inputs.len() {
        return Err(NnError::DimensionMismatch { expected: batch.inputs.len(), found: batch.labels.len() });
    }
    if let Some(w) = batch.weights {
        if w.len() != batch.inputs.len() {
            return Err(NnError::DimensionMismatch { expected: batch.inputs.len(), found: w.len() });
        }
    }
    let d_in = layers[0].inputs;
    if let Some(x) = batch.inputs.iter().find(|x| x.len() != d_in) {
        return Err(NnError::DimensionMismatch { expected: d_in, found: x.len() });
    }
    let k = layers.last().expect("nonempty").outputs;
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= k) {
        return Err(NnError::LabelOutOfRange { label: y, classes: k });
    }
    Ok(())
}

/// Per-sample loss multipliers: `w_i / mean(w)`, or all ones.
fn batch_scale(batch: &Batch<'_>) -> Option<Vec<f64>> {
    let n = batch.inputs.len();
    match batch.weights {
        None => Some(vec![1.0; n]),
        Some(w) => {
            let sum: f64 = w.iter().sum();
            (sum > 0.0).then(|| w.iter().map(|x| x * n as f64 / sum).collect())
        }
    }
}

/// Objective value: weighted mean cross-entropy plus `(wd/2)·Σ‖W‖²` over
/// weight matrices (biases are not decayed).
pub fn objective(model: &Model, batch: &Batch<'_>, weight_decay: f64) -> Result<f64, NnError> {
    objective_layers(&model.layers, batch, weight_decay)
}

fn objective_layers(layers: &[Layer], batch: &Batch<'_>, weight_decay: f64) -> Result<f64, NnError> {
    check_batch(layers, batch)?;
    let mut data = 0.0;
    if let Some(scale) = batch_scale(batch) {
        for ((x, &y), s) in batch.inputs.iter().zip(batch.labels).zip(&scale) {
            let probs = softmax_unchecked(&run_layers(layers, x));
            data += s * -probs[y].max(PROB_FLOOR).ln();
        }
        data /= batch.inputs.len() as f64;
    }
    Ok(data + 0.5 * weight_decay * weight_sq(layers))
}

fn weight_sq(layers: &[Layer]) -> f64 {
    layers.iter().flat_map(|l| &l.weights).map(|w| w * w).sum()
}

/// Gradient of [`objective`] with respect to every parameter.
pub fn grad(model: &Model, batch: &Batch<'_>, weight_decay: f64) -> Result<Gradient, NnError> {
    check_batch(&model.layers, batch)?;
    let mut g = Gradient::zeros(&model.layers);
    accumulate_grad(&model.layers, batch, weight_decay, &mut g);
    Ok(g)
}

/// Reverse-mode pass over a validated batch. Overwrites `out`.
fn accumulate_grad(layers: &[Layer], batch: &Batch<'_>, weight_decay: f64, out: &mut Gradient) {
    for lg in &mut out.layers {
        lg.weights.iter_mut().for_each(|x| *x = 0.0);
        lg.biases.iter_mut().for_each(|x| *x = 0.0);
    }
    let n = batch.inputs.len() as f64;
    if let Some(scale) = batch_scale(batch) {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
        acts.push(Vec::new());
        for l in layers {
            acts.push(vec![0.0; l.outputs]);
        }
        for ((x, &y), s) in batch.inputs.iter().zip(batch.labels).zip(&scale) {
            if *s == 0.0 {
                continue;
            }
            acts[0].clear();
            acts[0].extend_from_slice(x);
            for (li, layer) in layers.iter().enumerate() {
                let (before, after) = acts.split_at_mut(li + 1);
                layer.forward_into(&before[li], &mut after[0]);
            }
            let mut delta = softmax_unchecked(&acts[layers.len()]);
            delta[y] -= 1.0;
            delta.iter_mut().for_each(|d| *d *= s / n);
            for li in (0..layers.len()).rev() {
                let layer = &layers[li];
                let input = &acts[li];
                let lg = &mut out.layers[li];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    lg.biases[o] += d;
                    let row = &mut lg.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(gw, xi)| *gw += d * xi);
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
                if layers[li - 1].activation == Activation::Relu {
                    prev.iter_mut().zip(input).for_each(|(p, a)| {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    });
                }
                delta = prev;
            }
        }
    }
    if weight_decay != 0.0 {
        for (lg, layer) in out.layers.iter_mut().zip(layers) {
            lg.weights.iter_mut().zip(&layer.weights).for_each(|(g, w)| *g += weight_decay * w);
        }
    }
}

/// Which parameters [`train`] updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    All,
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub class_balanced: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 1e-4,
            epochs: 20,
            batch_size: 64,
            momentum: 0.9,
            class_balanced: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::ZeroBatchSize);
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(NnError::InvalidConfig("weight_decay must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One epoch's visiting order, as positions into the split.
fn epoch_order(labels: &[usize], classes: usize, balanced: bool, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = if balanced {
        let mut by_class = vec![Vec::new(); classes];
        for (pos, &y) in labels.iter().enumerate() {
            by_class[y].push(pos);
        }
        let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
        by_class
            .iter()
            .flat_map(|members| {
                (0..target).map(|_| members[rng.random_range(0..members.len())]).collect::<Vec<_>>()
            })
            .collect()
    } else {
        (0..labels.len()).collect()
    };
    order.shuffle(rng);
    order
}

/// Minibatch SGD with momentum (`v ← μv + ∇`, `θ ← θ − lr·v`).
///
/// With [`Trainable::HeadOnly`], `g` is evaluated once on the split and only
/// the head is updated, so the feature extractor comes back bit-identical.
/// Class balancing resamples every class with replacement to the largest
/// class count each epoch. Sample weights scale per-sample losses after
/// renormalizing to mean one within each batch.
pub fn train(
    model: &Model,
    samples: &Samples,
    split: &[usize],
    config: &TrainConfig,
    trainable: Trainable,
    sample_weights: Option<&[f64]>,
) -> Result<Model, NnError> {
    config.validate()?;
    if split.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    samples.check_indices(split)?;
    if samples.dim() != model.d_in() {
        return Err(NnError::DimensionMismatch { expected: model.d_in(), found: samples.dim() });
    }
    if let Some(w) = sample_weights {
        if w.len() != split.len() {
            return Err(NnError::BadWeights(format!("{} weights for {} samples", w.len(), split.len())));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(NnError::BadWeights("weights must be finite and nonnegative".into()));
        }
    }
    let classes = model.num_classes();
    let labels: Vec<usize> = split.iter().map(|&i| samples.label(i)).collect();
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    if config.class_balanced {
        for c in 0..classes {
            if !labels.contains(&c) {
                return Err(NnError::EmptyClass(c));
            }
        }
    }

    let mut out = model.clone();
    if config.epochs == 0 {
        return Ok(out);
    }
    let features: Vec<Vec<f64>>;
    let (inputs, first_trained): (Vec<&[f64]>, usize) = match trainable {
        Trainable::All => (split.iter().map(|&i| samples.row(i)).collect(), 0),
        Trainable::HeadOnly => {
            features = split.iter().map(|&i| run_layers(model.feature_extractor(), samples.row(i))).collect();
            (features.iter().map(Vec::as_slice).collect(), out.layers.len() - 1)
        }
    };
    let params = &mut out.layers[first_trained..];
    let mut velocity = Gradient::zeros(params);
    let mut g = Gradient::zeros(params);
    let mut rng = seeding::rng(config.seed);
    let mut bx: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut by = Vec::with_capacity(config.batch_size);
    let mut bw = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        let order = epoch_order(&labels, classes, config.class_balanced, &mut rng);
        for chunk in order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            bw.clear();
            for &p in chunk {
                bx.push(inputs[p]);
                by.push(labels[p]);
                if let Some(w) = sample_weights {
                    bw.push(w[p]);
                }
            }
            let batch = Batch { inputs: &bx, labels: &by, weights: sample_weights.map(|_| bw.as_slice()) };
            accumulate_grad(params, &batch, config.weight_decay, &mut g);
            for ((layer, v), gl) in params.iter_mut().zip(&mut velocity.layers).zip(&g.layers) {
                step(&mut layer.weights, &mut v.weights, &gl.weights, config);
                step(&mut layer.biases, &mut v.biases, &gl.biases, config);
            }
        }
    }
    Ok(out)
}

fn step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], config: &TrainConfig) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = config.momentum * *v + g;
        *p -= config.learning_rate * *v;
    }
}

/// Cross-entropy of every split member, aligned with `split`.
pub fn per_sample_losses(model: &Model, samples: &Samples, split: &[usize]) -> Result<Vec<f64>, NnError> {
    samples.check_indices(split)?;
    split
        .iter()
        .map(|&i| {
            let (_, logits) = forward(model, samples.row(i))?;
            cross_entropy(&softmax(&logits)?, samples.label(i))
        })
        .collect()
}

/// Probability assigned to the true label, aligned with `split`.
pub fn true_label_probs(model: &Model, samples: &Samples, split: &[usize]) -> Result<Vec<f64>, NnError> {
    samples.check_indices(split)?;
    split
        .iter()
        .map(|&i| {
            let y = samples.label(i);
            let probs = softmax(&forward(model, samples.row(i))?.1)?;
            probs.get(y).copied().ok_or(NnError::LabelOutOfRange { label: y, classes: probs.len() })
        })
        .collect()
}

/// Argmax predictions aligned with `split`.
pub fn predictions(model: &Model, samples: &Samples, split: &[usize]) -> Result<Vec<usize>, NnError> {
    samples.check_indices(split)?;
    split.iter().map(|&i| model.predict(samples.row(i))).collect()
}

/// Fresh head drawn uniformly from `±1/√d_feat`; `g` is copied unchanged.
pub fn reinit_head(model: &Model, seed: u64) -> Model {
    let mut out = model.clone();
    let head = out.layers.last_mut().expect("model has a head");
    let bound = 1.0 / (head.inputs as f64).sqrt();
    *head = Layer::uniform(head.inputs, head.outputs, bound, Activation::Identity, &mut seeding::rng(seed));
    out
}

const CHECKPOINT_MAGIC: &[u8; 5] = b"LFRM1";

/// Checkpoint layout: `"LFRM1"`, u32 layer count, then per layer u32 rows
/// (outputs), u32 cols (inputs), activation byte (0 identity, 1 relu),
/// row-major f64 weights, f64 biases. Little-endian throughout.
pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let count = u32::try_from(model.layers.len()).map_err(|_| NnError::Checkpoint("too many layers".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for layer in &model.layers {
        for dim in [layer.outputs, layer.inputs] {
            let dim = u32::try_from(dim).map_err(|_| NnError::Checkpoint("layer too wide".into()))?;
            w.write_all(&dim.to_le_bytes())?;
        }
        w.write_all(&[layer.activation.as_byte()])?;
        for x in layer.weights.iter().chain(&layer.biases) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Model, NnError> {
    fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N], NnError> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => NnError::Checkpoint("truncated".into()),
            _ => NnError::Io(e),
        })?;
        Ok(buf)
    }
    if &take::<5>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let count = u32::from_le_bytes(take(&mut r)?);
    let mut layers = Vec::new();
    for _ in 0..count {
        let rows = u32::from_le_bytes(take(&mut r)?) as usize;
        let cols = u32::from_le_bytes(take(&mut r)?) as usize;
        let act = take::<1>(&mut r)?[0];
        let activation =
            Activation::from_byte(act).ok_or_else(|| NnError::Checkpoint(format!("bad activation byte {act}")))?;
        let mut read_vec = |len: usize| -> Result<Vec<f64>, NnError> {
            (0..len).map(|_| Ok(f64::from_le_bytes(take(&mut r)?))).collect()
        };
        let weights = read_vec(rows * cols)?;
        let biases = read_vec(rows)?;
        layers.push(Layer::new(cols, rows, weights, biases, activation)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Model::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model(d: usize) -> Model {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Model::new(vec![Layer::new(d, d, w, vec![0.0; d], Activation::Identity).unwrap()]).unwrap()
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for p in softmax(&[3.0, 3.0, 3.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        assert!(matches!(softmax(&[f64::NAN, 0.0]), Err(NnError::NonFinite)));
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let p = (-3.0f64).exp();
        assert!((cross_entropy(&[p, 1.0 - p], 0).unwrap() - 3.0).abs() < 1e-12);
        assert!((cross_entropy(&[0.0, 1.0], 0).unwrap() - 12.0 * std::f64::consts::LN_10).abs() < 1e-9);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(NnError::LabelOutOfRange { .. })));
    }

    #[test]
    fn forward_identity_and_bias() {
        let m = identity_model(3);
        let (feat, logits) = forward(&m, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(logits, vec![1.0, -2.0, 0.5]);
        assert_eq!(feat, vec![1.0, -2.0, 0.5]);
        let b = vec![0.3, -0.7];
        let m = Model::new(vec![Layer::new(4, 2, vec![0.0; 8], b.clone(), Activation::Identity).unwrap()]).unwrap();
        assert_eq!(forward(&m, &[5.0, 1.0, -9.0, 2.0]).unwrap().1, b);
        assert!(matches!(forward(&m, &[1.0]), Err(NnError::DimensionMismatch { expected: 4, found: 1 })));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn single_layer_closed_form_gradient() {
        let m = Model::new(vec![
            Layer::new(3, 2, vec![0.1, -0.2, 0.3, 0.4, 0.0, -0.5], vec![0.05, -0.05], Activation::Identity).unwrap(),
        ])
        .unwrap();
        let x = [1.0, 2.0, -1.0];
        let xs: [&[f64]; 1] = [&x];
        let g = grad(&m, &Batch::new(&xs, &[1]), 0.0).unwrap();
        let mut r = softmax(&m.logits(&x).unwrap()).unwrap();
        r[1] -= 1.0;
        for o in 0..2 {
            assert!((g.layers[0].biases[o] - r[o]).abs() < 1e-15);
            for j in 0..3 {
                assert!((g.layers[0].weights[o * 3 + j] - r[o] * x[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn confident_correct_batch_has_vanishing_gradient() {
        let m = Model::new(vec![
            Layer::new(1, 2, vec![-40.0, 40.0], vec![0.0, 0.0], Activation::Identity).unwrap(),
        ])
        .unwrap();
        let (a, b) = ([1.0], [-1.0]);
        let xs: [&[f64]; 2] = [&a, &b];
        assert!(grad(&m, &Batch::new(&xs, &[1, 0]), 0.0).unwrap().norm() < 1e-30);
    }

    #[test]
    fn zero_weight_batch_only_decays() {
        let m = Model::mlp(2, &[3], 2, 1).unwrap();
        let (a, b) = ([1.0, 0.0], [0.0, 1.0]);
        let xs: [&[f64]; 2] = [&a, &b];
        let g = grad(&m, &Batch::weighted(&xs, &[0, 1], &[0.0, 0.0]), 0.1).unwrap();
        for (lg, l) in g.layers.iter().zip(m.layers()) {
            assert!(lg.biases.iter().all(|&x| x == 0.0));
            assert!(lg.weights.iter().zip(&l.weights).all(|(g, w)| (g - 0.1 * w).abs() < 1e-15));
        }
    }

    #[test]
    fn weights_renormalize_to_mean_one() {
        let m = Model::mlp(2, &[4], 2, 2).unwrap();
        let (a, b) = ([0.3, -1.0], [1.2, 0.4]);
        let xs: [&[f64]; 2] = [&a, &b];
        let plain = objective(&m, &Batch::new(&xs, &[0, 1]), 0.0).unwrap();
        let scaled = objective(&m, &Batch::weighted(&xs, &[0, 1], &[5.0, 5.0]), 0.0).unwrap();
        assert!((plain - scaled).abs() < 1e-15);
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let samples = Samples::new(vec![0.0, 1.0, 2.0], 1, vec![0, 0, 0]).unwrap();
        let m = Model::mlp(1, &[], 2, 0).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&m, &samples, &[0, 1], &cfg, Trainable::All, None), Err(NnError::EmptyClass(1))));
        let cfg0 = TrainConfig { batch_size: 0, ..cfg.clone() };
        assert!(matches!(train(&m, &samples, &[0], &cfg0, Trainable::All, None), Err(NnError::ZeroBatchSize)));
        let nb = TrainConfig { class_balanced: false, ..cfg };
        assert!(matches!(
            train(&m, &samples, &[0, 1], &nb, Trainable::All, Some(&[1.0, -1.0])),
            Err(NnError::BadWeights(_))
        ));
        assert!(matches!(train(&m, &samples, &[], &nb, Trainable::All, None), Err(NnError::EmptyBatch)));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let samples = Samples::new(vec![0.0, 1.0], 1, vec![0, 1]).unwrap();
        let m = Model::mlp(1, &[4], 2, 3).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert_eq!(train(&m, &samples, &[0, 1], &cfg, Trainable::All, None).unwrap(), m);
    }

    #[test]
    fn reinit_head_contract() {
        let m = Model::mlp(5, &[6, 4], 2, 9).unwrap();
        let a = reinit_head(&m, 1);
        let b = reinit_head(&m, 1);
        let c = reinit_head(&m, 2);
        assert_eq!(a.feature_extractor(), m.feature_extractor());
        assert_eq!(a, b);
        assert_ne!(a.head(), c.head());
        assert_ne!(a.head(), m.head());
        let bound = 0.5;
        assert!(a.head().weights.iter().chain(&a.head().biases).all(|w| w.abs() <= bound));
    }

    #[test]
    fn uniform_output_losses_are_ln_k() {
        let m = Model::new(vec![Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Identity).unwrap()]).unwrap();
        let samples = Samples::new(vec![1.0, 2.0, 3.0, 4.0], 2, vec![0, 2]).unwrap();
        for l in per_sample_losses(&m, &samples, &[0, 1]).unwrap() {
            assert!((l - 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let m = Model::mlp(3, &[5, 4], 2, 4).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"LFRM1");
        let expected_len = 5 + 4 + (9 + 8 * (15 + 5)) + (9 + 8 * (20 + 4)) + (9 + 8 * (8 + 2));
        assert_eq!(buf.len(), expected_len);
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), m);
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 1]), Err(NnError::Checkpoint(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(NnError::Checkpoint(_))));
    }

    #[test]
    fn rejects_relu_head_and_broken_chain() {
        let relu = Layer::new(2, 2, vec![0.0; 4], vec![0.0; 2], Activation::Relu).unwrap();
        assert!(Model::new(vec![relu]).is_err());
        let a = Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let b = Layer::new(2, 2, vec![0.0; 4], vec![0.0; 2], Activation::Identity).unwrap();
        assert!(Model::new(vec![a, b]).is_err());
    }
}
