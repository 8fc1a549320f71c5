//! Cross-validation fold construction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tensor::SeededRng;

const SPLIT_STREAM: u64 = 0x5EED_0001;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Scheme {
    /// Frame-level k-fold: consecutive frames of a recording may land on
    /// both sides of a split.
    Kfold { k: usize },
    /// Whole recordings are assigned to folds, which
    /// measures generalisation to unseen recordings.
    SequenceKfold { k: usize },
    /// Leave one subject out.
    Loso,
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme::Kfold { k: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Human-readable name of what the fold holds out.
    pub held_out: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scheme: Scheme,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Sizes of `k` contiguous parts of `n` items, larger parts last.
fn part_sizes(n: usize, k: usize) -> Vec<usize> {
    let (base, extra) = (n / k, n % k);
    (0..k).map(|i| base + usize::from(i >= k - extra)).collect()
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let held: BTreeSet<usize> = test.iter().copied().collect();
    (0..n).filter(|i| !held.contains(i)).collect()
}

/// Seeded shuffle of `0..n`, then `k` contiguous, size-balanced test sets.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return config_err(format!("k-fold needs k >= 2, got {k}"));
    }
    if n < k {
        return config_err(format!("{n} samples cannot fill {k} folds"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::derive(seed, SPLIT_STREAM).shuffle(&mut order);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for (i, size) in part_sizes(n, k).into_iter().enumerate() {
        let mut test = order[start..start + size].to_vec();
        test.sort_unstable();
        start += size;
        folds.push(Fold {
            train: complement(n, &test),
            test,
            held_out: format!("part {}", i + 1),
        });
    }
    Ok(FoldPlan {
        scheme: Scheme::Kfold { k },
        seed,
        folds,
    })
}

/// k-fold over groups: every sample of a group lands in the same test set.
pub fn group_kfold_split(groups: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    let ids: Vec<usize> = groups
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let group_plan = kfold_split(ids.len(), k, seed)?;
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(*g).or_default().push(i);
    }
    let folds = group_plan
        .folds
        .into_iter()
        .map(|f| {
            let mut test: Vec<usize> = f
                .test
                .iter()
                .flat_map(|&gi| members[&ids[gi]].iter().copied())
                .collect();
            test.sort_unstable();
            Fold {
                train: complement(groups.len(), &test),
                test,
                held_out: f.held_out,
            }
        })
        .collect();
    Ok(FoldPlan {
        scheme: Scheme::SequenceKfold { k },
        seed,
        folds,
    })
}

/// One fold per subject id (ascending), holding out all of its samples.
pub fn loso_split(subjects: &[usize]) -> Result<FoldPlan> {
    let ids: BTreeSet<usize> = subjects.iter().copied().collect();
    if ids.len() < 2 {
        return config_err(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            ids.len()
        ));
    }
    let folds = ids
        .into_iter()
        .map(|s| {
            let test: Vec<usize> = (0..subjects.len()).filter(|&i| subjects[i] == s).collect();
            Fold {
                train: complement(subjects.len(), &test),
                test,
                held_out: format!("subject {s}"),
            }
        })
        .collect();
    Ok(FoldPlan {
        scheme: Scheme::Loso,
        seed: 0,
        folds,
    })
}

/// Builds the plan for `scheme` over samples with the given subject and
/// recording ids.
pub fn make_plan(
    scheme: Scheme,
    subjects: &[usize],
    sequences: &[usize],
    seed: u64,
) -> Result<FoldPlan> {
    match scheme {
        Scheme::Kfold { k } => kfold_split(subjects.len(), k, seed),
        Scheme::SequenceKfold { k } => group_kfold_split(sequences, k, seed),
        Scheme::Loso => loso_split(subjects),
    }
}

impl FoldPlan {
    /// Test sets are pairwise disjoint, cover `0..n`, and each train set is
    /// exactly the complement of its test set.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("invalid fold plan: {m}")));
        let mut seen = vec![false; n];
        for (i, f) in self.folds.iter().enumerate() {
            if f.test.is_empty() {
                return fail(format!("fold {i} has an empty test set"));
            }
            for &t in &f.test {
                if t >= n {
                    return fail(format!("fold {i} tests index {t} >= {n}"));
                }
                if std::mem::replace(&mut seen[t], true) {
                    return fail(format!("index {t} is tested twice"));
                }
            }
            if f.train != complement(n, &f.test) {
                return fail(format!(
                    "fold {i} train set is not the complement of its test set"
                ));
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return fail(format!("index {missing} is never tested"));
        }
        Ok(())
    }

    /// Test-set sizes differ by at most one.
    pub fn check_balanced(&self) -> Result<()> {
        let sizes: Vec<usize> = self.folds.iter().map(|f| f.test.len()).collect();
        let (lo, hi) = (sizes.iter().min(), sizes.iter().max());
        match (lo, hi) {
            (Some(lo), Some(hi)) if hi - lo <= 1 => Ok(()),
            _ => Err(Error::Config(format!("unbalanced folds: {sizes:?}"))),
        }
    }

    /// No training index shares a group id with any test index of its fold.
    pub fn check_group_exclusion(&self, groups: &[usize]) -> Result<()> {
        for (i, f) in self.folds.iter().enumerate() {
            let held: BTreeSet<usize> = f.test.iter().map(|&t| groups[t]).collect();
            if let Some(&leak) = f.train.iter().find(|&&t| held.contains(&groups[t])) {
                return Err(Error::Config(format!(
                    "fold {i}: training index {leak} belongs to held-out group {}",
                    groups[leak]
                )));
            }
        }
        Ok(())
    }
}
