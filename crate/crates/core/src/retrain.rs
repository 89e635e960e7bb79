//! Last-layer retraining: loss-based selection (and its ablations), the
//! group-balanced oracle, and confidence-weighted retraining.
//!
//! Every method reinitializes the head and trains it on frozen features, so
//! the feature extractor of the returned model is bit-identical to the input.

use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataspec::{DataError, GroupId, GroupedDataset, Samples};
use crate::grouping::{self, GroupingError, SelectionStrategy};
use crate::nnopt::{self, Model, NnError, TrainConfig, Trainable};
use crate::seeding;

#[derive(Debug, Error)]
pub enum RetrainError {
    #[error("empty selection: no samples to retrain on")]
    EmptySelection,
    #[error("empty last-layer split")]
    EmptySplit,
    #[error("group {0} is empty in the last-layer split; cap its spuriosity (e.g. 0.95) so every group has members")]
    EmptyTrueGroup(GroupId),
    #[error("gamma must be finite and nonnegative, got {0}")]
    BadGamma(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-group selection count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSize {
    /// `ceil(factor * min_i |M_i|)`.
    Auto { factor: f64 },
    Fixed(usize),
}

impl SampleSize {
    pub const AUTO: SampleSize = SampleSize::Auto { factor: 1.0 };

    pub fn resolve(self, auto: usize) -> usize {
        match self {
            SampleSize::Auto { factor } => (factor * auto as f64).ceil().max(0.0) as usize,
            SampleSize::Fixed(s) => s,
        }
    }
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::Auto { factor } if *factor == 1.0 => f.write_str("auto"),
            SampleSize::Auto { factor } => write!(f, "{factor}*auto"),
            SampleSize::Fixed(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub momentum: f64,
    pub seed: u64,
    pub s: SampleSize,
    pub strategy: SelectionStrategy,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            epochs: 500,
            batch_size: None,
            momentum: 0.9,
            seed: 0,
            s: SampleSize::AUTO,
            strategy: SelectionStrategy::LFR,
        }
    }
}

impl RetrainConfig {
    fn train_config(&self, n: usize, class_balanced: bool) -> Result<TrainConfig, RetrainError> {
        if self.epochs == 0 {
            return Err(RetrainError::Invalid("retraining needs at least one epoch".into()));
        }
        Ok(TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size.unwrap_or(n.max(1)),
            momentum: self.momentum,
            class_balanced,
            seed: seeding::mix_str(self.seed, "train"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfrConfig {
    pub gamma: f64,
    pub retrain: RetrainConfig,
}

impl Default for AfrConfig {
    fn default() -> Self {
        Self { gamma: 4.0, retrain: RetrainConfig::default() }
    }
}

/// Audit record for one retraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub resolved_s: Option<usize>,
    /// Members used per group (`C0`/`M0`/... for proxy groups, `y0_majority`/...
    /// for true groups, or per class for weighted retraining).
    pub group_sizes: Vec<(String, usize)>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub gamma: Option<f64>,
    pub seed: u64,
    /// Dataset indices of the training subset (empty for weighted retraining,
    /// which uses the whole split).
    pub selected: Vec<usize>,
    pub warnings: Vec<String>,
}

impl Provenance {
    fn new(method: &str, config: &RetrainConfig) -> Self {
        Self {
            method: method.to_string(),
            resolved_s: None,
            group_sizes: Vec::new(),
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            epochs: config.epochs,
            gamma: None,
            seed: config.seed,
            selected: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("provenance serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Retrained {
    pub model: Model,
    pub provenance: Provenance,
}

fn retrain_head(
    model: &Model,
    samples: &Samples,
    subset: &[usize],
    config: &RetrainConfig,
    class_balanced: bool,
    weights: Option<&[f64]>,
) -> Result<Model, RetrainError> {
    let fresh = nnopt::reinit_head(model, seeding::mix_str(config.seed, "head"));
    let train_cfg = config.train_config(subset.len(), class_balanced)?;
    Ok(nnopt::train(&fresh, samples, subset, &train_cfg, Trainable::HeadOnly, weights)?)
}

/// Loss-based selection then head retraining.
///
/// Pipeline: per-sample losses on `llr` → correct/missed partition → resolve
/// `s` → select `s` per proxy group by `config.strategy` → fresh head trained
/// on the selection (no class balancing, the selection is balanced already).
pub fn retrain_selected(
    model: &Model,
    samples: &Samples,
    llr: &[usize],
    config: &RetrainConfig,
    method: &str,
) -> Result<Retrained, RetrainError> {
    if llr.is_empty() {
        return Err(RetrainError::EmptySplit);
    }
    let losses = nnopt::per_sample_losses(model, samples, llr)?;
    let partition = grouping::infer_partition(model, samples, llr)?;
    let s = config.s.resolve(grouping::default_s(&partition));
    let selection = grouping::select(&partition, &losses, s, config.strategy, seeding::mix_str(config.seed, "select"))?;
    if selection.is_empty() {
        return Err(RetrainError::EmptySelection);
    }
    let subset = selection.dataset_indices(llr);

    let mut provenance = Provenance::new(method, config);
    provenance.resolved_s = Some(s);
    provenance.group_sizes = selection.taken.iter().map(|(g, n)| (g.to_string(), *n)).collect();
    provenance.warnings = selection
        .short
        .iter()
        .map(|sg| format!("group {} has {} members, fewer than s = {}", sg.group, sg.available, sg.requested))
        .collect();
    for w in &provenance.warnings {
        log::info!("{method}: {w}");
    }
    let model = retrain_head(model, samples, &subset, config, false, None)?;
    provenance.selected = subset;
    Ok(Retrained { model, provenance })
}

/// Group-balanced head retraining using the true group annotations: the
/// smallest true group's size is drawn uniformly from every group. `config.s`
/// and `config.strategy` are ignored.
pub fn retrain_dfr_oracle(
    model: &Model,
    dataset: &GroupedDataset,
    llr: &[usize],
    config: &RetrainConfig,
) -> Result<Retrained, RetrainError> {
    if llr.is_empty() {
        return Err(RetrainError::EmptySplit);
    }
    let groups = dataset.require_groups()?;
    dataset.samples().check_indices(llr)?;
    let all = GroupId::all(model.num_classes());
    let mut members = vec![Vec::new(); all.len()];
    for &i in llr {
        let g = groups[i];
        if let Some(slot) = members.get_mut(g.slot()) {
            slot.push(i);
        }
    }
    if let Some(empty) = all.iter().find(|g| members[g.slot()].is_empty()) {
        return Err(RetrainError::EmptyTrueGroup(*empty));
    }
    let m = members.iter().map(Vec::len).min().expect("groups exist");
    let mut rng = seeding::rng(seeding::mix_str(config.seed, "dfr"));
    let mut subset = Vec::with_capacity(m * all.len());
    for list in &members {
        subset.extend(index::sample(&mut rng, list.len(), m).into_iter().map(|k| list[k]));
    }
    subset.sort_unstable();

    let mut provenance = Provenance::new("dfr_oracle", config);
    provenance.resolved_s = Some(m);
    provenance.group_sizes = all.iter().map(|g| (g.key(), m)).collect();
    let model = retrain_head(model, dataset.samples(), &subset, config, false, None)?;
    provenance.selected = subset;
    Ok(Retrained { model, provenance })
}

/// `w_i = exp(-gamma * p_true_i)`, rescaled to mean one within each class.
pub fn afr_weights(p_true: &[f64], gamma: f64, labels: &[usize]) -> Result<Vec<f64>, RetrainError> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(RetrainError::BadGamma(gamma));
    }
    if p_true.len() != labels.len() {
        return Err(RetrainError::Invalid(format!("{} probabilities for {} labels", p_true.len(), labels.len())));
    }
    if p_true.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(RetrainError::Invalid("probabilities must lie in [0, 1]".into()));
    }
    let mut weights: Vec<f64> = p_true.iter().map(|p| (-gamma * p).exp()).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for (w, &y) in weights.iter().zip(labels) {
        sums[y] += w;
        counts[y] += 1;
    }
    for (w, &y) in weights.iter_mut().zip(labels) {
        *w *= counts[y] as f64 / sums[y];
    }
    Ok(weights)
}

/// Confidence-weighted head retraining on the whole `llr` split, with class
/// balancing. Weights come from the input model's true-label probabilities.
pub fn retrain_afr(model: &Model, samples: &Samples, llr: &[usize], config: &AfrConfig) -> Result<Retrained, RetrainError> {
    if llr.is_empty() {
        return Err(RetrainError::EmptySplit);
    }
    let p_true = nnopt::true_label_probs(model, samples, llr)?;
    let labels: Vec<usize> = llr.iter().map(|&i| samples.label(i)).collect();
    let weights = afr_weights(&p_true, config.gamma, &labels)?;

    let mut provenance = Provenance::new("afr", &config.retrain);
    provenance.gamma = Some(config.gamma);
    provenance.group_sizes = (0..model.num_classes())
        .map(|c| (format!("y{c}"), labels.iter().filter(|&&y| y == c).count()))
        .collect();
    let model = retrain_head(model, samples, llr, &config.retrain, true, Some(&weights))?;
    Ok(Retrained { model, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_zero_gives_unit_weights() {
        let w = afr_weights(&[0.1, 0.9, 0.5], 0.0, &[0, 1, 1]).unwrap();
        assert_eq!(w, vec![1.0; 3]);
    }

    #[test]
    fn two_sample_closed_form() {
        let e = std::f64::consts::E;
        let w = afr_weights(&[0.0, 1.0], 1.0, &[0, 0]).unwrap();
        assert!((w[0] - 2.0 * e / (1.0 + e)).abs() < 1e-15);
        assert!((w[1] - 2.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] / w[1] - e).abs() < 1e-12);
    }

    #[test]
    fn afr_weight_errors() {
        assert!(matches!(afr_weights(&[0.5], -1.0, &[0]), Err(RetrainError::BadGamma(_))));
        assert!(afr_weights(&[1.5], 1.0, &[0]).is_err());
        assert!(afr_weights(&[0.5, 0.5], 1.0, &[0]).is_err());
    }

    #[test]
    fn sample_size_resolution() {
        assert_eq!(SampleSize::AUTO.resolve(11), 11);
        assert_eq!(SampleSize::Auto { factor: 0.5 }.resolve(11), 6);
        assert_eq!(SampleSize::Auto { factor: 2.0 }.resolve(11), 22);
        assert_eq!(SampleSize::Fixed(30).resolve(11), 30);
        assert_eq!(SampleSize::Auto { factor: 0.5 }.to_string(), "0.5*auto");
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = RetrainConfig { s: SampleSize::Fixed(7), strategy: SelectionStrategy::CL_MR, ..Default::default() };
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RetrainConfig>(&json).unwrap(), cfg);
    }
}
