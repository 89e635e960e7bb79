//! Property checks for proxy-group selection.

use std::collections::BTreeSet;

use proptest::prelude::*;
use spurbench::dataspec::Samples;
use spurbench::grouping::{self, Branch, ClassPartition, GroupPartition, SelectionRule, SelectionStrategy};
use spurbench::nnopt::{Activation, Layer, Model};

pub const PRESETS: [SelectionStrategy; 5] = [
    SelectionStrategy::LFR,
    SelectionStrategy::CFR,
    SelectionStrategy::CR_ML,
    SelectionStrategy::CL_MR,
    SelectionStrategy::REVERSED,
];

#[derive(Debug, Clone)]
pub struct Case {
    pub partition: GroupPartition,
    pub losses: Vec<f64>,
    pub s: usize,
    pub strategy: SelectionStrategy,
    pub seed: u64,
}

/// Random partitions of `0..n` into the four proxy groups, with losses drawn
/// from a small set of values so ties are common.
pub fn cases() -> impl Strategy<Value = Case> {
    (1usize..80)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0usize..4, n),
                prop::collection::vec(0u8..6, n),
                0usize..25,
                0usize..PRESETS.len(),
                any::<u64>(),
            )
        })
        .prop_map(|(slots, levels, s, preset, seed)| {
            let mut classes = vec![ClassPartition::default(), ClassPartition::default()];
            for (pos, slot) in slots.iter().enumerate() {
                let c = &mut classes[slot / 2];
                if slot % 2 == 0 { c.correct.push(pos) } else { c.missed.push(pos) }
            }
            Case {
                partition: GroupPartition { classes },
                losses: levels.iter().map(|&l| l as f64 * 0.25).collect(),
                s,
                strategy: PRESETS[preset],
                seed,
            }
        })
}

fn ordered(members: &[usize], losses: &[f64], high_first: bool) -> Vec<usize> {
    let mut v = members.to_vec();
    v.sort_by(|&a, &b| {
        let key = if high_first { losses[b].total_cmp(&losses[a]) } else { losses[a].total_cmp(&losses[b]) };
        key.then(a.cmp(&b))
    });
    v
}

pub fn check(case: &Case) -> Result<(), TestCaseError> {
    let sel = grouping::select(&case.partition, &case.losses, case.s, case.strategy, case.seed)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;

    let chosen: BTreeSet<usize> = sel.positions.iter().copied().collect();
    prop_assert_eq!(chosen.len(), sel.positions.len(), "duplicate positions");
    prop_assert!(sel.positions.windows(2).all(|w| w[0] < w[1]), "positions not sorted");

    let mut total = 0;
    for (group, members) in case.partition.groups() {
        let want = case.s.min(members.len());
        let picked: BTreeSet<usize> = members.iter().copied().filter(|p| chosen.contains(p)).collect();
        // Balance: exactly s per group when the group is large enough.
        prop_assert_eq!(picked.len(), want, "group {}", group);
        prop_assert_eq!(sel.short.iter().any(|g| g.group == group), members.len() < case.s);
        total += want;
        // Polarity and tie-break: loss-ordered picks equal the oracle prefix.
        let expected: Option<BTreeSet<usize>> = match case.strategy.rule(group.branch) {
            SelectionRule::LossLow => Some(ordered(members, &case.losses, false)[..want].iter().copied().collect()),
            SelectionRule::LossHigh => Some(ordered(members, &case.losses, true)[..want].iter().copied().collect()),
            SelectionRule::Random => None,
        };
        if let Some(expected) = expected {
            prop_assert_eq!(&picked, &expected, "group {}", group);
        }
    }
    prop_assert_eq!(total, sel.positions.len());

    // Reproducibility, and random branches actually depend on the seed only.
    let again = grouping::select(&case.partition, &case.losses, case.s, case.strategy, case.seed).unwrap();
    prop_assert_eq!(&again.positions, &sel.positions);
    Ok(())
}

/// LFR takes the lowest-loss correct and the highest-loss missed samples.
pub fn check_lfr_polarity(case: &Case) -> Result<(), TestCaseError> {
    let sel = grouping::select(&case.partition, &case.losses, case.s, SelectionStrategy::LFR, case.seed).unwrap();
    let chosen: BTreeSet<usize> = sel.positions.iter().copied().collect();
    for (group, members) in case.partition.groups() {
        let (inside, outside): (Vec<usize>, Vec<usize>) = members.iter().partition(|p| chosen.contains(p));
        for &a in &inside {
            for &b in &outside {
                match group.branch {
                    Branch::Correct => prop_assert!(case.losses[a] <= case.losses[b]),
                    Branch::Missed => prop_assert!(case.losses[a] >= case.losses[b]),
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TotalityCase {
    pub weights: Vec<f64>,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub split: Vec<usize>,
}

pub fn totality_cases() -> impl Strategy<Value = TotalityCase> {
    (2usize..40)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0f64..2.0, 6),
                prop::collection::vec(-3.0f64..3.0, n * 2),
                prop::collection::vec(0usize..2, n),
                prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n),
            )
        })
        .prop_map(|(weights, features, labels, split)| TotalityCase { weights, features, labels, split })
}

/// Every split position lands in exactly one proxy group, in its own class,
/// and the correct/missed side agrees with the model's prediction.
pub fn check_totality(case: &TotalityCase) -> Result<(), TestCaseError> {
    let head = Layer::new(2, 2, case.weights[..4].to_vec(), case.weights[4..].to_vec(), Activation::Identity).unwrap();
    let model = Model::new(vec![head]).unwrap();
    let samples = Samples::new(case.features.clone(), 2, case.labels.clone()).unwrap();
    let part = grouping::infer_partition(&model, &samples, &case.split).unwrap();
    let mut seen = vec![0usize; case.split.len()];
    for (group, members) in part.groups() {
        for &pos in members {
            seen[pos] += 1;
            let idx = case.split[pos];
            prop_assert_eq!(samples.label(idx), group.class);
            let predicted = model.predict(samples.row(idx)).unwrap();
            prop_assert_eq!(predicted == group.class, group.branch == Branch::Correct);
        }
    }
    prop_assert!(seen.iter().all(|&c| c == 1), "coverage {:?}", seen);
    prop_assert_eq!(part.len(), case.split.len());
    Ok(())
}
