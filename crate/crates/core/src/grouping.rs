//! Proxy groups from model correctness and loss-ordered balanced selection.
//!
//! Nothing here reads group annotations: inputs are [`Samples`], a model and
//! a split.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataspec::Samples;
use crate::nnopt::{self, Model, NnError};
use crate::seeding;

#[derive(Debug, Error)]
pub enum GroupingError {
    #[error("empty split")]
    EmptySplit,
    #[error("{losses} losses for a partition over {split} samples")]
    LossLength { losses: usize, split: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Correct (`C_i`) and missed (`M_i`) members of one class, as positions into
/// the split the partition was inferred on.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassPartition {
    pub correct: Vec<usize>,
    pub missed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub classes: Vec<ClassPartition>,
}

/// Branch of a [`GroupPartition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Correct,
    Missed,
}

/// One proxy group: a class and a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProxyGroup {
    pub class: usize,
    pub branch: Branch,
}

impl fmt::Display for ProxyGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.branch {
            Branch::Correct => "C",
            Branch::Missed => "M",
        };
        write!(f, "{tag}{}", self.class)
    }
}

impl GroupPartition {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Total number of positions covered.
    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.correct.len() + c.missed.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `2k` proxy groups with their members, correct before missed.
    pub fn groups(&self) -> impl Iterator<Item = (ProxyGroup, &[usize])> {
        self.classes.iter().enumerate().flat_map(|(class, p)| {
            [
                (ProxyGroup { class, branch: Branch::Correct }, p.correct.as_slice()),
                (ProxyGroup { class, branch: Branch::Missed }, p.missed.as_slice()),
            ]
        })
    }

    pub fn sizes(&self) -> Vec<(ProxyGroup, usize)> {
        self.groups().map(|(g, m)| (g, m.len())).collect()
    }
}

/// Splits the members of `split` by class and by whether the model's argmax
/// (ties to the lowest class) equals the label.
pub fn infer_partition(model: &Model, samples: &Samples, split: &[usize]) -> Result<GroupPartition, GroupingError> {
    if split.is_empty() {
        return Err(GroupingError::EmptySplit);
    }
    let predictions = nnopt::predictions(model, samples, split)?;
    partition_from_predictions(samples, split, &predictions, model.num_classes())
}

pub(crate) fn partition_from_predictions(
    samples: &Samples,
    split: &[usize],
    predictions: &[usize],
    classes: usize,
) -> Result<GroupPartition, GroupingError> {
    let mut parts = vec![ClassPartition::default(); classes];
    for (pos, (&i, &pred)) in split.iter().zip(predictions).enumerate() {
        let y = samples.label(i);
        let part = parts.get_mut(y).ok_or(NnError::LabelOutOfRange { label: y, classes })?;
        if pred == y {
            part.correct.push(pos);
        } else {
            part.missed.push(pos);
        }
    }
    Ok(GroupPartition { classes: parts })
}

/// `min_i |M_i|`.
pub fn default_s(partition: &GroupPartition) -> usize {
    partition.classes.iter().map(|c| c.missed.len()).min().unwrap_or(0)
}

/// How members of one proxy group are picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    LossLow,
    LossHigh,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub correct_rule: SelectionRule,
    pub missed_rule: SelectionRule,
}

impl SelectionStrategy {
    /// Lowest-loss correct, highest-loss missed.
    pub const LFR: Self = Self { correct_rule: SelectionRule::LossLow, missed_rule: SelectionRule::LossHigh };
    /// Random in both branches.
    pub const CFR: Self = Self { correct_rule: SelectionRule::Random, missed_rule: SelectionRule::Random };
    /// Random correct, highest-loss missed.
    pub const CR_ML: Self = Self { correct_rule: SelectionRule::Random, missed_rule: SelectionRule::LossHigh };
    /// Lowest-loss correct, random missed.
    pub const CL_MR: Self = Self { correct_rule: SelectionRule::LossLow, missed_rule: SelectionRule::Random };
    /// Highest-loss correct, lowest-loss missed.
    pub const REVERSED: Self = Self { correct_rule: SelectionRule::LossHigh, missed_rule: SelectionRule::LossLow };

    pub fn rule(&self, branch: Branch) -> SelectionRule {
        match branch {
            Branch::Correct => self.correct_rule,
            Branch::Missed => self.missed_rule,
        }
    }
}

/// A proxy group that had fewer than `s` members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortGroup {
    pub group: ProxyGroup,
    pub available: usize,
    pub requested: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected split positions, ascending.
    pub positions: Vec<usize>,
    /// Number taken from each proxy group.
    pub taken: Vec<(ProxyGroup, usize)>,
    pub short: Vec<ShortGroup>,
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Maps positions back to dataset indices through `split`.
    pub fn dataset_indices(&self, split: &[usize]) -> Vec<usize> {
        self.positions.iter().map(|&p| split[p]).collect()
    }
}

fn by_loss(losses: &[f64], a: usize, b: usize) -> Ordering {
    losses[a].total_cmp(&losses[b]).then(a.cmp(&b))
}

fn pick(members: &[usize], losses: &[f64], take: usize, rule: SelectionRule, seed: u64) -> Vec<usize> {
    match rule {
        SelectionRule::LossLow => {
            let mut sorted = members.to_vec();
            sorted.sort_by(|&a, &b| by_loss(losses, a, b));
            sorted.truncate(take);
            sorted
        }
        SelectionRule::LossHigh => {
            let mut sorted = members.to_vec();
            sorted.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
            sorted.truncate(take);
            sorted
        }
        SelectionRule::Random => {
            let mut rng = seeding::rng(seed);
            index::sample(&mut rng, members.len(), take).into_iter().map(|k| members[k]).collect()
        }
    }
}

/// Takes `min(s, |group|)` members from every proxy group.
///
/// Loss ties go to the lower position. Random draws are seeded per group from
/// `seed`, so the result is reproducible. Groups smaller than `s` are
/// reported in [`Selection::short`].
pub fn select(
    partition: &GroupPartition,
    losses: &[f64],
    s: usize,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<Selection, GroupingError> {
    let covered = partition.groups().flat_map(|(_, m)| m.iter()).copied().max().map_or(0, |m| m + 1);
    if losses.len() < covered {
        return Err(GroupingError::LossLength { losses: losses.len(), split: covered });
    }
    let mut positions = Vec::new();
    let mut taken = Vec::new();
    let mut short = Vec::new();
    for (slot, (group, members)) in partition.groups().enumerate() {
        let take = s.min(members.len());
        if members.len() < s {
            short.push(ShortGroup { group, available: members.len(), requested: s });
        }
        let group_seed = seeding::mix_u64(seed, slot as u64);
        positions.extend(pick(members, losses, take, strategy.rule(group.branch), group_seed));
        taken.push((group, take));
    }
    positions.sort_unstable();
    Ok(Selection { positions, taken, short })
}
