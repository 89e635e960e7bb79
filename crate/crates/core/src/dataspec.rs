//! Synthetic spurious-correlation data and the train / last-layer / validation /
//! test split protocol.
//!
//! Every sample belongs to a class `y` and, within its class, to either the
//! majority group (spurious attribute agrees with the class) or the minority
//! group (it disagrees). Features are laid out as `[core | spurious | noise]`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("index {index} out of range for dataset of {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dataset carries no group annotations")]
    MissingGroups,
    #[error("group {0} is empty but a group-balanced split needs it")]
    EmptyGroup(GroupId),
    #[error(
        "class {class} has no minority samples, so the last-layer split cannot be capped at spuriosity {cap}"
    )]
    CapUnattainable { class: usize, cap: f64 },
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Whether a sample's spurious attribute matches its class's dominant pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Majority,
    Minority,
}

impl Alignment {
    pub fn as_byte(self) -> u8 {
        match self {
            Alignment::Majority => 0,
            Alignment::Minority => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Alignment::Majority),
            1 => Some(Alignment::Minority),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Alignment::Majority => "majority",
            Alignment::Minority => "minority",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "majority" => Some(Alignment::Majority),
            "minority" => Some(Alignment::Minority),
            _ => None,
        }
    }
}

/// A (class, alignment) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupId {
    pub class: usize,
    pub alignment: Alignment,
}

impl GroupId {
    pub fn new(class: usize, alignment: Alignment) -> Self {
        Self { class, alignment }
    }

    /// All `2k` groups for `k` classes, majority before minority within a class.
    pub fn all(num_classes: usize) -> Vec<GroupId> {
        (0..num_classes)
            .flat_map(|c| {
                [
                    GroupId::new(c, Alignment::Majority),
                    GroupId::new(c, Alignment::Minority),
                ]
            })
            .collect()
    }

    /// Position in the order produced by [`GroupId::all`].
    pub fn slot(self) -> usize {
        2 * self.class + self.alignment.as_byte() as usize
    }

    /// The `y{i}_{majority|minority}` key used in reports.
    pub fn key(self) -> String {
        format!("y{}_{}", self.class, self.alignment.as_str())
    }

    pub fn parse_key(key: &str) -> Option<Self> {
        let rest = key.strip_prefix('y')?;
        let (class, align) = rest.split_once('_')?;
        Some(GroupId::new(class.parse().ok()?, Alignment::parse(align)?))
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Features and labels without any group information.
///
/// Annotation-free methods only ever see this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl Samples {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self, DataError> {
        if dim == 0 && !labels.is_empty() {
            return Err(DataError::Shape("feature dimension is zero".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(DataError::Shape(format!(
                "{} feature values for {} rows of dimension {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        Ok(Self { features, dim, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Number of classes, at least two.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(2, |m| (m + 1).max(2))
    }

    pub fn check_indices(&self, split: &[usize]) -> Result<(), DataError> {
        match split.iter().find(|&&i| i >= self.len()) {
            Some(&index) => Err(DataError::IndexOutOfRange { index, len: self.len() }),
            None => Ok(()),
        }
    }
}

/// Samples plus optional hidden group annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    samples: Samples,
    groups: Option<Vec<GroupId>>,
}

impl GroupedDataset {
    pub fn new(samples: Samples, groups: Option<Vec<GroupId>>) -> Result<Self, DataError> {
        if let Some(g) = &groups {
            if g.len() != samples.len() {
                return Err(DataError::Shape(format!(
                    "{} group ids for {} samples",
                    g.len(),
                    samples.len()
                )));
            }
        }
        Ok(Self { samples, groups })
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn groups(&self) -> Option<&[GroupId]> {
        self.groups.as_deref()
    }

    pub fn require_groups(&self) -> Result<&[GroupId], DataError> {
        self.groups().ok_or(DataError::MissingGroups)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        let from_groups = self
            .groups()
            .and_then(|g| g.iter().map(|g| g.class).max())
            .map_or(0, |m| m + 1);
        self.samples.num_classes().max(from_groups)
    }

    /// Drops the group annotations.
    pub fn without_groups(mut self) -> Self {
        self.groups = None;
        self
    }

    /// Concatenates two datasets with equal dimension. Groups survive only if
    /// both sides carry them.
    pub fn concat(&self, other: &GroupedDataset) -> Result<GroupedDataset, DataError> {
        if self.samples.dim != other.samples.dim {
            return Err(DataError::Shape(format!(
                "cannot concatenate dimension {} with {}",
                self.samples.dim, other.samples.dim
            )));
        }
        let mut features = self.samples.features.clone();
        features.extend_from_slice(&other.samples.features);
        let mut labels = self.samples.labels.clone();
        labels.extend_from_slice(&other.samples.labels);
        let groups = match (&self.groups, &other.groups) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        GroupedDataset::new(Samples::new(features, self.samples.dim, labels)?, groups)
    }
}

/// Generator parameters. Field names are also the JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpuriosityConfig {
    pub n_per_class: usize,
    pub rho: f64,
    pub d_core: usize,
    pub d_spur: usize,
    pub d_noise: usize,
    pub mu_core: f64,
    pub mu_spur: f64,
    pub sigma: f64,
    pub label_noise: f64,
}

impl Default for SpuriosityConfig {
    fn default() -> Self {
        Self {
            n_per_class: 4000,
            rho: 0.95,
            d_core: 2,
            d_spur: 2,
            d_noise: 16,
            mu_core: 1.0,
            mu_spur: 2.0,
            sigma: 1.0,
            label_noise: 0.0,
        }
    }
}

impl SpuriosityConfig {
    pub fn dim(&self) -> usize {
        self.d_core + self.d_spur + self.d_noise
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if self.d_core == 0 {
            return bad("d_core must be at least 1");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive and finite");
        }
        if !self.mu_core.is_finite() || !self.mu_spur.is_finite() {
            return bad("means must be finite");
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1)");
        }
        Ok(())
    }

    /// Majority count per class under the exact quota rule.
    pub fn majority_quota(&self) -> usize {
        (self.rho * self.n_per_class as f64).round() as usize
    }
}

/// Draws a binary dataset with exactly `n_per_class` samples per pre-flip class
/// and `round(rho * n_per_class)` of them in the majority group.
pub fn generate(config: &SpuriosityConfig, seed: u64) -> Result<GroupedDataset, DataError> {
    config.validate()?;
    let mut rng = seeding::rng(seed);
    let n_maj = config.majority_quota();
    let mut assignment = Vec::with_capacity(2 * config.n_per_class);
    for class in 0..2 {
        for k in 0..config.n_per_class {
            let alignment = if k < n_maj { Alignment::Majority } else { Alignment::Minority };
            assignment.push(GroupId::new(class, alignment));
        }
    }
    assignment.shuffle(&mut rng);

    let noise = Normal::new(0.0, config.sigma).expect("sigma validated");
    let dim = config.dim();
    let mut features = Vec::with_capacity(assignment.len() * dim);
    let mut labels = Vec::with_capacity(assignment.len());
    for g in &assignment {
        let class_sign = if g.class == 1 { 1.0 } else { -1.0 };
        let spur_sign = match g.alignment {
            Alignment::Majority => class_sign,
            Alignment::Minority => -class_sign,
        };
        for _ in 0..config.d_core {
            features.push(config.mu_core * class_sign + noise.sample(&mut rng));
        }
        for _ in 0..config.d_spur {
            features.push(config.mu_spur * spur_sign + noise.sample(&mut rng));
        }
        for _ in 0..config.d_noise {
            features.push(noise.sample(&mut rng));
        }
        let flip = config.label_noise > 0.0 && rng.random::<f64>() < config.label_noise;
        labels.push(if flip { 1 - g.class } else { g.class });
    }
    GroupedDataset::new(Samples::new(features, dim, labels)?, Some(assignment))
}

/// Relative split sizes. They must be nonnegative and sum to at most one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub tr: f64,
    pub llr: f64,
    pub val: f64,
    pub te: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { tr: 0.6, llr: 0.15, val: 0.1, te: 0.15 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DataError> {
        let parts = [self.tr, self.llr, self.val, self.te];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(DataError::InvalidFractions("fractions must be nonnegative".into()));
        }
        if parts.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(DataError::InvalidFractions("fractions sum above 1".into()));
        }
        Ok(())
    }
}

/// Index lists into one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSet {
    pub tr: Vec<usize>,
    pub llr: Vec<usize>,
    pub val: Vec<usize>,
    pub te: Vec<usize>,
}

/// Per-class (majority, minority) counts of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    counts: Vec<[usize; 2]>,
}

impl GroupCounts {
    pub fn get(&self, g: GroupId) -> usize {
        self.counts.get(g.class).map_or(0, |c| c[g.alignment.as_byte() as usize])
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }

    pub fn class_total(&self, class: usize) -> usize {
        self.counts.get(class).map_or(0, |c| c[0] + c[1])
    }

    /// Majority fraction within one class; `None` when the class is absent.
    pub fn spuriosity(&self, class: usize) -> Option<f64> {
        let total = self.class_total(class);
        (total > 0).then(|| self.get(GroupId::new(class, Alignment::Majority)) as f64 / total as f64)
    }

    /// Counts in [`GroupId::all`] order.
    pub fn as_vec(&self) -> Vec<usize> {
        self.counts.iter().flat_map(|c| c.iter().copied()).collect()
    }
}

pub fn group_counts(dataset: &GroupedDataset, split: &[usize]) -> Result<GroupCounts, DataError> {
    let groups = dataset.require_groups()?;
    dataset.samples().check_indices(split)?;
    let mut counts = vec![[0usize; 2]; dataset.num_classes()];
    for &i in split {
        let g = groups[i];
        counts[g.class][g.alignment.as_byte() as usize] += 1;
    }
    Ok(GroupCounts { counts })
}

/// Members of each group in [`GroupId::all`] order, each list shuffled.
fn shuffled_groups(groups: &[GroupId], num_classes: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut by_group = vec![Vec::new(); 2 * num_classes];
    for (i, g) in groups.iter().enumerate() {
        by_group[g.slot()].push(i);
    }
    for members in &mut by_group {
        members.shuffle(rng);
    }
    by_group
}

fn round_count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

/// Drops majority members of `llr` until each class's majority fraction is at
/// most `cap`. `llr_by_group` holds the shuffled members per group slot.
fn cap_llr(llr_by_group: &mut [Vec<usize>], cap: f64) -> Result<(), DataError> {
    if cap >= 1.0 {
        return Ok(());
    }
    for class in 0..llr_by_group.len() / 2 {
        let n_maj = llr_by_group[2 * class].len();
        let n_min = llr_by_group[2 * class + 1].len();
        if n_maj + n_min == 0 || (n_maj as f64) <= cap * (n_maj + n_min) as f64 {
            continue;
        }
        if n_min == 0 {
            return Err(DataError::CapUnattainable { class, cap });
        }
        let keep = round_count(n_min as f64 * cap / (1.0 - cap)).min(n_maj);
        llr_by_group[2 * class].truncate(keep);
    }
    Ok(())
}

/// Random disjoint four-way split of one dataset.
///
/// Validation and test take the same number of samples from every group
/// (`round(fraction * smallest group)`). The rest of each group is divided
/// between `tr` and `llr` in the ratio of their fractions. Finally the `llr`
/// split is thinned so that no class exceeds `llr_rho_cap` spuriosity; the
/// dropped majority samples are left unused.
pub fn make_splits(
    dataset: &GroupedDataset,
    fractions: SplitFractions,
    llr_rho_cap: f64,
    seed: u64,
) -> Result<SplitSet, DataError> {
    fractions.validate()?;
    if !(0.0..=1.0).contains(&llr_rho_cap) || llr_rho_cap == 0.0 {
        return Err(DataError::InvalidFractions("llr_rho_cap must lie in (0, 1]".into()));
    }
    if dataset.is_empty() {
        return Err(DataError::Shape("dataset is empty".into()));
    }
    let groups = dataset.require_groups()?;
    let num_classes = dataset.num_classes();
    let mut rng = seeding::rng(seed);
    let by_group = shuffled_groups(groups, num_classes, &mut rng);

    let smallest = by_group.iter().map(Vec::len).min().unwrap_or(0);
    let balanced = |frac: f64| -> Result<usize, DataError> {
        if frac == 0.0 {
            return Ok(0);
        }
        let per_group = round_count(frac * smallest as f64);
        if per_group == 0 {
            let empty = (0..by_group.len())
                .min_by_key(|&s| by_group[s].len())
                .map(|s| GroupId::all(num_classes)[s])
                .expect("at least one group");
            return Err(DataError::EmptyGroup(empty));
        }
        Ok(per_group)
    };
    let n_val = balanced(fractions.val)?;
    let n_te = balanced(fractions.te)?;

    let trllr = fractions.tr + fractions.llr;
    let mut split = SplitSet::default();
    let mut llr_by_group = Vec::with_capacity(by_group.len());
    for members in &by_group {
        split.val.extend_from_slice(&members[..n_val]);
        split.te.extend_from_slice(&members[n_val..n_val + n_te]);
        let rest = &members[n_val + n_te..];
        let take = if trllr > 0.0 {
            round_count(trllr * members.len() as f64).min(rest.len())
        } else {
            0
        };
        let n_llr = if trllr > 0.0 { round_count(take as f64 * fractions.llr / trllr) } else { 0 };
        llr_by_group.push(rest[..n_llr].to_vec());
        split.tr.extend_from_slice(&rest[n_llr..take]);
    }
    cap_llr(&mut llr_by_group, llr_rho_cap)?;
    split.llr = llr_by_group.into_iter().flatten().collect();
    for list in [&mut split.tr, &mut split.llr, &mut split.val, &mut split.te] {
        list.sort_unstable();
    }
    Ok(split)
}

/// Layout of the synthetic benchmark used by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkLayout {
    /// Share of the training pool that goes to the last-layer split.
    pub llr_fraction: f64,
    /// Validation and test samples per group.
    pub eval_per_group: usize,
    pub llr_rho_cap: f64,
}

impl Default for BenchmarkLayout {
    fn default() -> Self {
        Self { llr_fraction: 0.2, eval_per_group: 250, llr_rho_cap: 0.95 }
    }
}

/// Builds a synthetic benchmark at spuriosity `rho`.
///
/// A training pool of `2 * n_per_class` samples is drawn at spuriosity
/// `min(rho, cap)` and split per group into `tr` and `llr`. When `rho` exceeds
/// the cap, minority samples are removed from `tr` until its spuriosity is
/// `rho`, so `llr` keeps spuriosity `cap` while `tr` reaches `rho` (down to
/// zero minority samples at `rho = 1`). Validation and test come from a
/// separate group-balanced pool.
pub fn build_benchmark(
    config: &SpuriosityConfig,
    rho: f64,
    layout: &BenchmarkLayout,
    seed: u64,
) -> Result<(GroupedDataset, SplitSet), DataError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(DataError::InvalidConfig("rho must lie in [0, 1]".into()));
    }
    if !(0.0..1.0).contains(&layout.llr_fraction) || layout.llr_fraction == 0.0 {
        return Err(DataError::InvalidFractions("llr_fraction must lie in (0, 1)".into()));
    }
    if layout.eval_per_group == 0 {
        return Err(DataError::InvalidConfig("eval_per_group must be positive".into()));
    }
    let pool_rho = rho.min(layout.llr_rho_cap);
    let pool = generate(&config.with_rho(pool_rho), seeding::mix_str(seed, "pool"))?;
    let eval_cfg = SpuriosityConfig {
        n_per_class: 4 * layout.eval_per_group,
        rho: 0.5,
        ..config.clone()
    };
    let eval = generate(&eval_cfg, seeding::mix_str(seed, "eval"))?;

    let mut rng = seeding::rng(seeding::mix_str(seed, "split"));
    let pool_groups = shuffled_groups(pool.require_groups()?, 2, &mut rng);
    let mut split = SplitSet::default();
    let mut tr_by_group = Vec::with_capacity(4);
    for members in &pool_groups {
        let n_llr = round_count(layout.llr_fraction * members.len() as f64);
        split.llr.extend_from_slice(&members[..n_llr]);
        tr_by_group.push(members[n_llr..].to_vec());
    }
    if rho > pool_rho {
        for class in 0..2 {
            let n_maj = tr_by_group[2 * class].len() as f64;
            let keep = round_count(n_maj * (1.0 - rho) / rho);
            tr_by_group[2 * class + 1].truncate(keep);
        }
    }
    split.tr = tr_by_group.into_iter().flatten().collect();

    let offset = pool.len();
    let eval_groups = shuffled_groups(eval.require_groups()?, 2, &mut rng);
    for members in &eval_groups {
        let (val, rest) = members.split_at(layout.eval_per_group);
        split.val.extend(val.iter().map(|i| i + offset));
        split.te.extend(rest[..layout.eval_per_group].iter().map(|i| i + offset));
    }
    for list in [&mut split.tr, &mut split.llr, &mut split.val, &mut split.te] {
        list.sort_unstable();
    }
    Ok((pool.concat(&eval)?, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn cfg(n: usize, rho: f64) -> SpuriosityConfig {
        SpuriosityConfig { n_per_class: n, rho, ..Default::default() }
    }

    fn disjoint(s: &SplitSet) -> bool {
        let mut seen = HashSet::new();
        [&s.tr, &s.llr, &s.val, &s.te].iter().all(|l| l.iter().all(|i| seen.insert(*i)))
    }

    #[test]
    fn rho_one_has_no_minority() {
        let d = generate(&cfg(500, 1.0), 1).unwrap();
        let all: Vec<usize> = (0..d.len()).collect();
        let c = group_counts(&d, &all).unwrap();
        assert_eq!(c.as_vec(), vec![500, 0, 500, 0]);
    }

    #[test]
    fn rho_half_is_balanced() {
        let d = generate(&cfg(400, 0.5), 2).unwrap();
        let all: Vec<usize> = (0..d.len()).collect();
        assert_eq!(group_counts(&d, &all).unwrap().as_vec(), vec![200; 4]);
    }

    #[test]
    fn quota_counts_by_scan() {
        let d = generate(&cfg(1000, 0.9), 3).unwrap();
        let mut brute = [0usize; 4];
        for g in d.groups().unwrap() {
            brute[g.slot()] += 1;
        }
        assert_eq!(brute, [900, 100, 900, 100]);
        let all: Vec<usize> = (0..d.len()).collect();
        assert_eq!(group_counts(&d, &all).unwrap().as_vec(), brute.to_vec());
    }

    #[test]
    fn labels_follow_classes_without_noise() {
        let d = generate(&cfg(100, 0.8), 4).unwrap();
        let groups = d.groups().unwrap();
        assert!((0..d.len()).all(|i| d.samples().label(i) == groups[i].class));
    }

    #[test]
    fn label_noise_keeps_group_class() {
        let c = SpuriosityConfig { label_noise: 0.2, ..cfg(2000, 0.9) };
        let d = generate(&c, 5).unwrap();
        let groups = d.groups().unwrap();
        let flipped = (0..d.len()).filter(|&i| d.samples().label(i) != groups[i].class).count();
        let rate = flipped as f64 / d.len() as f64;
        assert!((rate - 0.2).abs() < 0.03, "flip rate {rate}");
        let per_class = groups.iter().filter(|g| g.class == 0).count();
        assert_eq!(per_class, 2000);
    }

    #[test]
    fn spurious_sign_matches_alignment() {
        let c = SpuriosityConfig { mu_spur: 50.0, ..cfg(200, 0.7) };
        let d = generate(&c, 6).unwrap();
        for (i, g) in d.groups().unwrap().iter().enumerate() {
            let spur = d.samples().row(i)[c.d_core];
            let class_sign = if g.class == 1 { 1.0 } else { -1.0 };
            let expected = match g.alignment {
                Alignment::Majority => class_sign,
                Alignment::Minority => -class_sign,
            };
            assert_eq!(spur.signum(), expected);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate(&cfg(0, 0.5), 0).is_err());
        assert!(generate(&cfg(10, 1.5), 0).is_err());
        assert!(generate(&SpuriosityConfig { d_core: 0, ..cfg(10, 0.5) }, 0).is_err());
        assert!(generate(&SpuriosityConfig { sigma: 0.0, ..cfg(10, 0.5) }, 0).is_err());
        assert!(generate(&SpuriosityConfig { label_noise: 1.0, ..cfg(10, 0.5) }, 0).is_err());
    }

    #[test]
    fn config_json_uses_field_names() {
        let json = r#"{"n_per_class": 10, "rho": 0.7, "d_core": 1, "d_spur": 1, "d_noise": 0,
            "mu_core": 1.0, "mu_spur": 3.0, "sigma": 0.5, "label_noise": 0.0}"#;
        let c: SpuriosityConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.dim(), 2);
        assert!(serde_json::from_str::<SpuriosityConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn exact_fractions_on_round_numbers() {
        let d = generate(&cfg(50, 0.5), 7).unwrap();
        let f = SplitFractions { tr: 0.8, llr: 0.2, val: 0.0, te: 0.0 };
        let s = make_splits(&d, f, 0.95, 1).unwrap();
        assert_eq!((s.tr.len(), s.llr.len()), (80, 20));
        assert!(s.val.is_empty() && s.te.is_empty());
        assert!(disjoint(&s));
    }

    #[test]
    fn cap_brings_llr_to_95() {
        let d = generate(&cfg(1000, 0.99), 8).unwrap();
        let s = make_splits(&d, SplitFractions::default(), 0.95, 2).unwrap();
        let c = group_counts(&d, &s.llr).unwrap();
        for class in 0..2 {
            let sp = c.spuriosity(class).unwrap();
            assert!((sp - 0.95).abs() < 0.02, "class {class} spuriosity {sp}");
        }
        assert!(disjoint(&s));
    }

    #[test]
    fn cap_inactive_below_threshold() {
        let d = generate(&cfg(1000, 0.8), 9).unwrap();
        let s = make_splits(&d, SplitFractions::default(), 0.95, 3).unwrap();
        let c = group_counts(&d, &s.llr).unwrap();
        let tc = group_counts(&d, &s.tr).unwrap();
        for class in 0..2 {
            // val/te take equal counts from every group, which pushes the
            // remaining pool a little above rho.
            assert!((c.spuriosity(class).unwrap() - 0.8).abs() < 0.03);
            assert!((c.spuriosity(class).unwrap() - tc.spuriosity(class).unwrap()).abs() < 0.01);
        }
    }

    #[test]
    fn balanced_eval_and_llr_ratio() {
        let d = generate(&cfg(1000, 0.9), 10).unwrap();
        let s = make_splits(&d, SplitFractions::default(), 1.0, 4).unwrap();
        let v = group_counts(&d, &s.val).unwrap().as_vec();
        assert!(v.iter().all(|&x| x == v[0] && x > 0));
        let tr = group_counts(&d, &s.tr).unwrap().as_vec();
        let llr = group_counts(&d, &s.llr).unwrap().as_vec();
        for (t, l) in tr.iter().zip(&llr) {
            assert!((*t as f64 / 4.0 - *l as f64).abs() <= 1.0, "tr {t} llr {l}");
        }
    }

    #[test]
    fn empty_group_errors() {
        let d = generate(&cfg(100, 1.0), 11).unwrap();
        let err = make_splits(&d, SplitFractions::default(), 0.95, 0).unwrap_err();
        assert!(matches!(err, DataError::EmptyGroup(_)));
        let f = SplitFractions { tr: 0.8, llr: 0.2, val: 0.0, te: 0.0 };
        assert!(matches!(make_splits(&d, f, 0.95, 0), Err(DataError::CapUnattainable { .. })));
        assert!(make_splits(&d, f, 1.0, 0).is_ok());
    }

    #[test]
    fn splits_reproducible() {
        let d = generate(&cfg(300, 0.9), 12).unwrap();
        let a = make_splits(&d, SplitFractions::default(), 0.95, 5).unwrap();
        let b = make_splits(&d, SplitFractions::default(), 0.95, 5).unwrap();
        let c = make_splits(&d, SplitFractions::default(), 0.95, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn group_counts_edge_cases() {
        let d = generate(&cfg(10, 0.5), 13).unwrap();
        assert_eq!(group_counts(&d, &[]).unwrap().as_vec(), vec![0; 4]);
        assert!(matches!(group_counts(&d, &[20]), Err(DataError::IndexOutOfRange { .. })));
        let bare = d.without_groups();
        assert_eq!(group_counts(&bare, &[0]), Err(DataError::MissingGroups));
    }

    #[test]
    fn benchmark_matches_protocol() {
        let c = cfg(2000, 0.5);
        let layout = BenchmarkLayout::default();
        for rho in [0.7, 0.95, 0.99, 1.0] {
            let (d, s) = build_benchmark(&c, rho, &layout, 21).unwrap();
            assert!(disjoint(&s));
            let tr = group_counts(&d, &s.tr).unwrap();
            let llr = group_counts(&d, &s.llr).unwrap();
            for class in 0..2 {
                assert!((tr.spuriosity(class).unwrap() - rho).abs() < 0.005, "rho {rho}");
                let expect = rho.min(0.95);
                assert!((llr.spuriosity(class).unwrap() - expect).abs() < 0.005);
            }
            assert_eq!(group_counts(&d, &s.val).unwrap().as_vec(), vec![250; 4]);
            assert_eq!(group_counts(&d, &s.te).unwrap().as_vec(), vec![250; 4]);
        }
    }

    #[test]
    fn group_key_round_trip() {
        for g in GroupId::all(3) {
            assert_eq!(GroupId::parse_key(&g.key()), Some(g));
        }
        assert_eq!(GroupId::new(1, Alignment::Minority).key(), "y1_minority");
    }
}
