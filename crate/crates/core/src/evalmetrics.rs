//! Group-wise accuracy, worst-group accuracy and validation-based
//! hyperparameter selection.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataspec::{DataError, GroupId, GroupedDataset};
use crate::grouping::SelectionStrategy;
use crate::nnopt::{self, Model, NnError};
use crate::retrain::{self, AfrConfig, RetrainConfig, RetrainError, Retrained, SampleSize};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("every evaluated group is empty")]
    AllGroupsEmpty,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("all {} grid points failed; first: {}", .0.len(), .0.first().map(|f| f.error.as_str()).unwrap_or(""))]
    AllFailed(Vec<GridFailure>),
    #[error("method {0} has nothing to select")]
    NotRetrainable(Method),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub accuracy: f64,
    pub size: usize,
}

/// Accuracy summary over (class, alignment) groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    /// Nonempty groups only.
    pub per_group: BTreeMap<GroupId, GroupStat>,
    pub empty_groups: Vec<GroupId>,
    pub wga: f64,
    pub mean_group: f64,
    pub overall: f64,
}

impl GroupMetrics {
    /// Aggregates per-group stats. Groups of size zero are excluded from the
    /// worst/mean figures and listed in `empty_groups`.
    pub fn from_stats(stats: impl IntoIterator<Item = (GroupId, GroupStat)>) -> Result<Self, MetricsError> {
        let mut per_group = BTreeMap::new();
        let mut empty_groups = Vec::new();
        for (g, s) in stats {
            if s.size == 0 {
                empty_groups.push(g);
            } else {
                per_group.insert(g, s);
            }
        }
        if per_group.is_empty() {
            return Err(MetricsError::AllGroupsEmpty);
        }
        let wga = per_group.values().map(|s| s.accuracy).fold(f64::INFINITY, f64::min);
        let mean_group = per_group.values().map(|s| s.accuracy).sum::<f64>() / per_group.len() as f64;
        let total: usize = per_group.values().map(|s| s.size).sum();
        let overall = per_group.values().map(|s| s.accuracy * s.size as f64).sum::<f64>() / total as f64;
        Ok(Self { per_group, empty_groups, wga, mean_group, overall })
    }

    pub fn accuracy(&self, g: GroupId) -> Option<f64> {
        self.per_group.get(&g).map(|s| s.accuracy)
    }
}

#[derive(Serialize, Deserialize)]
struct GroupMetricsRepr {
    accuracy: BTreeMap<String, f64>,
    size: BTreeMap<String, usize>,
    empty_groups: Vec<String>,
    wga: f64,
    mean_group: f64,
    overall: f64,
}

impl Serialize for GroupMetrics {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GroupMetricsRepr {
            accuracy: self.per_group.iter().map(|(g, s)| (g.key(), s.accuracy)).collect(),
            size: self.per_group.iter().map(|(g, s)| (g.key(), s.size)).collect(),
            empty_groups: self.empty_groups.iter().map(|g| g.key()).collect(),
            wga: self.wga,
            mean_group: self.mean_group,
            overall: self.overall,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GroupMetrics {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = GroupMetricsRepr::deserialize(deserializer)?;
        let key = |k: &str| GroupId::parse_key(k).ok_or_else(|| D::Error::custom(format!("bad group key {k:?}")));
        let mut per_group = BTreeMap::new();
        for (k, accuracy) in &repr.accuracy {
            let size = *repr.size.get(k).ok_or_else(|| D::Error::custom(format!("no size for {k}")))?;
            per_group.insert(key(k)?, GroupStat { accuracy: *accuracy, size });
        }
        let empty_groups = repr.empty_groups.iter().map(|k| key(k)).collect::<Result<_, _>>()?;
        Ok(Self { per_group, empty_groups, wga: repr.wga, mean_group: repr.mean_group, overall: repr.overall })
    }
}

/// Accuracy of `model` on every (class, alignment) group of `split`.
pub fn group_accuracies(model: &Model, dataset: &GroupedDataset, split: &[usize]) -> Result<GroupMetrics, MetricsError> {
    let groups = dataset.require_groups()?;
    let predictions = nnopt::predictions(model, dataset.samples(), split)?;
    let all = GroupId::all(model.num_classes().max(dataset.num_classes()));
    let mut hits = vec![0usize; all.len()];
    let mut sizes = vec![0usize; all.len()];
    for (&i, &pred) in split.iter().zip(&predictions) {
        let slot = groups[i].slot();
        sizes[slot] += 1;
        if pred == dataset.samples().label(i) {
            hits[slot] += 1;
        }
    }
    let metrics = GroupMetrics::from_stats(all.iter().map(|&g| {
        let (h, n) = (hits[g.slot()], sizes[g.slot()]);
        (g, GroupStat { accuracy: if n == 0 { 0.0 } else { h as f64 / n as f64 }, size: n })
    }))?;
    for g in &metrics.empty_groups {
        log::warn!("group {g} is empty in the evaluated split");
    }
    Ok(metrics)
}

/// Methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Lfr,
    Cfr,
    CrMl,
    ClMr,
    /// Highest-loss correct, lowest-loss missed.
    LfrReversed,
    DfrOracle,
    Afr,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Erm,
        Method::Lfr,
        Method::Cfr,
        Method::CrMl,
        Method::ClMr,
        Method::LfrReversed,
        Method::DfrOracle,
        Method::Afr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Lfr => "lfr",
            Method::Cfr => "cfr",
            Method::CrMl => "cr_ml",
            Method::ClMr => "cl_mr",
            Method::LfrReversed => "lfr_reversed",
            Method::DfrOracle => "dfr_oracle",
            Method::Afr => "afr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn strategy(self) -> Option<SelectionStrategy> {
        match self {
            Method::Lfr => Some(SelectionStrategy::LFR),
            Method::Cfr => Some(SelectionStrategy::CFR),
            Method::CrMl => Some(SelectionStrategy::CR_ML),
            Method::ClMr => Some(SelectionStrategy::CL_MR),
            Method::LfrReversed => Some(SelectionStrategy::REVERSED),
            _ => None,
        }
    }

    /// Whether the method reads group annotations.
    pub fn uses_groups(self) -> bool {
        self == Method::DfrOracle
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One grid point. Fields a method does not use are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub s: SampleSize,
    pub gamma: f64,
}

impl HyperParams {
    fn retrain_config(&self, seed: u64, strategy: SelectionStrategy) -> RetrainConfig {
        RetrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            s: self.s,
            strategy,
            ..RetrainConfig::default()
        }
    }
}

/// Axes of a retraining grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub s_values: Vec<SampleSize>,
    pub gammas: Vec<f64>,
    pub epochs: usize,
    pub batch_size: Option<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-3, 1e-2],
            weight_decays: vec![1e-2, 1e-1],
            s_values: vec![
                SampleSize::AUTO,
                SampleSize::Auto { factor: 0.5 },
                SampleSize::Auto { factor: 2.0 },
            ],
            gammas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            epochs: 500,
            batch_size: None,
        }
    }
}

impl GridSpec {
    /// Grid points for `method`, dropping axes it ignores (`s` for the oracle
    /// and weighted retraining, `gamma` for everything but weighted). ERM
    /// has no grid.
    pub fn points(&self, method: Method) -> Vec<HyperParams> {
        if method == Method::Erm {
            return Vec::new();
        }
        let s_axis: Vec<SampleSize> = match method {
            Method::DfrOracle | Method::Afr => vec![SampleSize::AUTO],
            _ => self.s_values.clone(),
        };
        let gamma_axis: Vec<f64> = if method == Method::Afr { self.gammas.clone() } else { vec![0.0] };
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &weight_decay in &self.weight_decays {
                for &s in &s_axis {
                    for &gamma in &gamma_axis {
                        out.push(HyperParams {
                            learning_rate,
                            weight_decay,
                            epochs: self.epochs,
                            batch_size: self.batch_size,
                            s,
                            gamma,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Runs one retraining method at one grid point.
pub fn run_method(
    method: Method,
    model: &Model,
    dataset: &GroupedDataset,
    llr: &[usize],
    hp: &HyperParams,
    seed: u64,
) -> Result<Retrained, RetrainError> {
    match method {
        Method::Erm => Err(RetrainError::Invalid("erm does not retrain".into())),
        Method::DfrOracle => {
            retrain::retrain_dfr_oracle(model, dataset, llr, &hp.retrain_config(seed, SelectionStrategy::CFR))
        }
        Method::Afr => {
            let cfg = AfrConfig { gamma: hp.gamma, retrain: hp.retrain_config(seed, SelectionStrategy::CFR) };
            retrain::retrain_afr(model, dataset.samples(), llr, &cfg)
        }
        selected => {
            let strategy = selected.strategy().expect("selection method");
            retrain::retrain_selected(model, dataset.samples(), llr, &hp.retrain_config(seed, strategy), selected.name())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct HpSelection {
    pub best_index: usize,
    pub best: HyperParams,
    pub retrained: Retrained,
    pub val_metrics: GroupMetrics,
    /// Validation WGA per grid point (`None` where the point failed).
    pub scores: Vec<Option<f64>>,
    pub failures: Vec<GridFailure>,
}

/// Runs `method` at every grid point and keeps the one with the highest
/// validation worst-group accuracy; the earliest point wins ties. Failing
/// points are recorded and skipped. Grid points run in parallel, but the
/// result depends only on grid order.
pub fn select_hp(
    model: &Model,
    dataset: &GroupedDataset,
    llr: &[usize],
    val: &[usize],
    method: Method,
    grid: &[HyperParams],
    seed: u64,
) -> Result<HpSelection, MetricsError> {
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    if method == Method::Erm {
        return Err(MetricsError::NotRetrainable(method));
    }
    dataset.require_groups()?;
    let results: Vec<Result<(Retrained, GroupMetrics), String>> = grid
        .par_iter()
        .map(|hp| {
            let r = run_method(method, model, dataset, llr, hp, seed).map_err(|e| e.to_string())?;
            let m = group_accuracies(&r.model, dataset, val).map_err(|e| e.to_string())?;
            Ok((r, m))
        })
        .collect();

    let mut best: Option<(usize, Retrained, GroupMetrics)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok((r, m)) => {
                scores.push(Some(m.wga));
                if best.as_ref().is_none_or(|(_, _, b)| m.wga > b.wga) {
                    best = Some((index, r, m));
                }
            }
            Err(error) => {
                scores.push(None);
                failures.push(GridFailure { index, error });
            }
        }
    }
    let (best_index, retrained, val_metrics) = best.ok_or_else(|| MetricsError::AllFailed(failures.clone()))?;
    Ok(HpSelection { best_index, best: grid[best_index].clone(), retrained, val_metrics, scores, failures })
}
