//! Training-subset selection against a target label composition.
//!
//! Per-label counts come from largest-remainder apportionment of the budget
//! (exact mode) or from a max-min fill that respects supply (best-effort
//! mode). Within a label, records are taken as a prefix of a seeded
//! permutation, so a smaller request for the same label under the same seed
//! always selects a subset of a larger one.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::labels::{Label, PerceivedAxis};
use crate::num::{count_ratio, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum BalanceError {
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("label `{label}` is short by {shortfall} records ({requested} requested, {available} available)")]
    Shortfall { label: Label, shortfall: u64, requested: u64, available: u64 },
    #[error("record `{0}` is not in the pool")]
    UnknownRecord(String),
    #[error("record `{0}` appears more than once")]
    DuplicateRecord(String),
    #[error("record `{id}` has label `{label}`, which is not on axis {axis}")]
    WrongAxis { id: String, axis: PerceivedAxis, label: Label },
    #[error("pool has no records with a substantive label")]
    EmptyPool,
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    #[default]
    Exact,
    BestEffort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionTarget<S = f64> {
    pub axis: PerceivedAxis,
    /// Labels missing from the map have zero weight.
    pub target: BTreeMap<Label, S>,
    pub budget: u64,
    pub mode: BalanceMode,
}

#[derive(Deserialize)]
struct TargetFile<S> {
    axis: PerceivedAxis,
    target: BTreeMap<Label, S>,
}

impl<S: Scalar> CompositionTarget<S> {
    pub fn new(
        axis: PerceivedAxis,
        target: BTreeMap<Label, S>,
        budget: u64,
        mode: BalanceMode,
    ) -> Result<Self, BalanceError> {
        let t = CompositionTarget { axis, target, budget, mode };
        t.validate()?;
        Ok(t)
    }

    /// Equal weight on every substantive label of `axis`.
    pub fn uniform(axis: PerceivedAxis, budget: u64, mode: BalanceMode) -> Result<Self, BalanceError> {
        let labels = axis.substantive_labels();
        let w = count_ratio::<S>(1, labels.len() as u64).expect("axes have labels");
        Self::new(axis, labels.iter().map(|&l| (l, w)).collect(), budget, mode)
    }

    /// All weight on `label`.
    pub fn only(label: Label, budget: u64, mode: BalanceMode) -> Result<Self, BalanceError> {
        let axis = axis_of(label)
            .ok_or_else(|| BalanceError::InvalidTarget(format!("`{label}` is not a group label")))?;
        Self::new(axis, BTreeMap::from([(label, S::one())]), budget, mode)
    }

    pub fn validate(&self) -> Result<(), BalanceError> {
        if self.budget == 0 {
            return Err(BalanceError::ZeroBudget);
        }
        if self.target.is_empty() {
            return Err(BalanceError::InvalidTarget("no labels".into()));
        }
        let mut sum = S::zero();
        for (&label, &w) in &self.target {
            if !self.axis.substantive_labels().contains(&label) {
                return Err(BalanceError::InvalidTarget(format!("`{label}` is not a group of {}", self.axis)));
            }
            if w < S::zero() {
                return Err(BalanceError::InvalidTarget(format!("negative weight for `{label}`")));
            }
            sum = sum + w;
        }
        if !sum.approx_eq(S::one()) {
            return Err(BalanceError::InvalidTarget(format!("weights sum to {}, not 1", sum.to_f64())));
        }
        Ok(())
    }

    pub fn weight(&self, label: Label) -> S {
        self.target.get(&label).copied().unwrap_or_else(S::zero)
    }
}

impl CompositionTarget<f64> {
    /// Parse `{"axis": ..., "target": {label: weight}}`.
    pub fn from_json(text: &str, budget: u64, mode: BalanceMode) -> Result<Self, BalanceError> {
        let file: TargetFile<f64> =
            serde_json::from_str(text).map_err(|e| BalanceError::InvalidTarget(e.to_string()))?;
        Self::new(file.axis, file.target, budget, mode)
    }
}

/// The axis on which `label` is a group.
pub fn axis_of(label: Label) -> Option<PerceivedAxis> {
    PerceivedAxis::ALL.into_iter().find(|a| a.substantive_labels().contains(&label))
}

/// Largest-remainder (Hamilton) apportionment of `budget` over `target`.
///
/// Remainders equal within [`Scalar::tolerance`] go to the label that sorts
/// first. Every label in `target` gets an entry, zero-weight ones included.
pub fn apportion<S: Scalar>(budget: u64, target: &BTreeMap<Label, S>) -> BTreeMap<Label, u64> {
    let b = S::from_count(budget);
    let mut rows: Vec<(Label, u64, S)> = target
        .iter()
        .map(|(&label, &w)| {
            let quota = b * w;
            let base = quota.snapped_floor();
            (label, base.to_count(), quota - base)
        })
        .collect();
    let mut assigned: u64 = rows.iter().map(|r| r.1).sum();
    // Rounding can only overshoot by a unit or two; take it back from the
    // labels that were snapped up the most.
    while assigned > budget {
        let i = (0..rows.len())
            .filter(|&i| rows[i].1 > 0)
            .min_by(|&a, &b| rows[a].2.partial_cmp(&rows[b].2).expect("finite"))
            .expect("overshoot implies a positive count");
        rows[i].1 -= 1;
        rows[i].2 = rows[i].2 + S::one();
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rows[a].2, rows[b].2);
        if ra.approx_eq(rb) {
            a.cmp(&b)
        } else {
            rb.partial_cmp(&ra).expect("finite")
        }
    });
    let leftover = (budget - assigned) as usize;
    for &i in order.iter().cycle().take(leftover) {
        rows[i].1 += 1;
    }
    rows.into_iter().map(|(l, n, _)| (l, n)).collect()
}

/// Counts that lexicographically maximize the sorted `count / weight`
/// vector under `supply`, spending at most `budget`.
///
/// Units are handed out one at a time to the label currently furthest below
/// its share; labels with zero weight or no supply left are skipped.
pub fn max_min_fill<S: Scalar>(
    budget: u64,
    target: &BTreeMap<Label, S>,
    supply: &BTreeMap<Label, u64>,
) -> BTreeMap<Label, u64> {
    let mut counts: BTreeMap<Label, u64> = target.keys().map(|&l| (l, 0)).collect();
    let live: Vec<(Label, S)> = target.iter().filter(|(_, &w)| w > S::zero()).map(|(&l, &w)| (l, w)).collect();
    let cap = |l: Label| supply.get(&l).copied().unwrap_or(0);
    // a/w < b/v  <=>  a*v < b*w for positive weights
    let less = |a: (u64, S), b: (u64, S)| S::from_count(a.0) * b.1 < S::from_count(b.0) * a.1;
    for _ in 0..budget {
        let mut best: Option<(Label, S)> = None;
        for &(l, w) in &live {
            let n = counts[&l];
            if n >= cap(l) {
                continue;
            }
            best = match best {
                None => Some((l, w)),
                Some((bl, bw)) => {
                    let bn = counts[&bl];
                    let lhs = S::from_count(n) * bw;
                    let rhs = S::from_count(bn) * w;
                    let pick = if lhs.approx_eq(rhs) {
                        // equal shortfall: lifting the lighter label moves the
                        // sorted ratio vector further
                        less((bn + 1, bw), (n + 1, w))
                    } else {
                        less((n, w), (bn, bw))
                    };
                    if pick { Some((l, w)) } else { Some((bl, bw)) }
                }
            };
        }
        match best {
            Some((l, _)) => *counts.get_mut(&l).expect("seeded above") += 1,
            None => break,
        }
    }
    counts
}

/// Per-label record counts `balance_subset` would select.
pub fn plan_counts<S: Scalar>(
    target: &CompositionTarget<S>,
    supply: &BTreeMap<Label, u64>,
) -> Result<BTreeMap<Label, u64>, BalanceError> {
    target.validate()?;
    match target.mode {
        BalanceMode::Exact => {
            let counts = apportion(target.budget, &target.target);
            for (&label, &requested) in &counts {
                let available = supply.get(&label).copied().unwrap_or(0);
                if requested > available {
                    return Err(BalanceError::Shortfall {
                        label,
                        shortfall: requested - available,
                        requested,
                        available,
                    });
                }
            }
            Ok(counts)
        }
        BalanceMode::BestEffort => Ok(max_min_fill(target.budget, &target.target, supply)),
    }
}

fn strata(pool: &[(String, Label)], axis: PerceivedAxis) -> Result<BTreeMap<Label, Vec<&str>>, BalanceError> {
    let mut seen = HashSet::new();
    let mut by_label: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for (id, label) in pool {
        if !seen.insert(id.as_str()) {
            return Err(BalanceError::DuplicateRecord(id.clone()));
        }
        if !axis.accepts(*label) {
            return Err(BalanceError::WrongAxis { id: id.clone(), axis, label: *label });
        }
        if !label.is_sink() {
            by_label.entry(*label).or_default().push(id);
        }
    }
    for ids in by_label.values_mut() {
        ids.sort_unstable();
    }
    Ok(by_label)
}

/// Supply per substantive label of `axis`.
pub fn supply(pool: &[(String, Label)], axis: PerceivedAxis) -> Result<BTreeMap<Label, u64>, BalanceError> {
    let by_label = strata(pool, axis)?;
    Ok(axis
        .substantive_labels()
        .iter()
        .map(|l| (*l, by_label.get(l).map_or(0, |v| v.len() as u64)))
        .collect())
}

/// Budget for a uniform target: one full copy of the smallest stratum per label.
pub fn default_uniform_budget(pool: &[(String, Label)], axis: PerceivedAxis) -> Result<u64, BalanceError> {
    let s = supply(pool, axis)?;
    let min = s.values().copied().min().unwrap_or(0);
    if min == 0 {
        return Err(BalanceError::EmptyPool);
    }
    Ok(min * s.len() as u64)
}

fn label_permutation(mut ids: Vec<&str>, label: Label, seed: u64) -> Vec<&str> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    ids.shuffle(&mut rng);
    ids
}

/// Record ids whose label composition follows `target`, grouped by label.
///
/// Records with a sink label are never selected. Pool order does not matter.
pub fn balance_subset<S: Scalar>(
    pool: &[(String, Label)],
    target: &CompositionTarget<S>,
    seed: u64,
) -> Result<Vec<String>, BalanceError> {
    let by_label = strata(pool, target.axis)?;
    let supply: BTreeMap<Label, u64> = by_label.iter().map(|(l, v)| (*l, v.len() as u64)).collect();
    let counts = plan_counts(target, &supply)?;
    let mut out = Vec::new();
    for (label, n) in counts {
        if n == 0 {
            continue;
        }
        let ids = by_label.get(&label).cloned().unwrap_or_default();
        let perm = label_permutation(ids, label, seed);
        out.extend(perm.into_iter().take(n as usize).map(str::to_string));
    }
    Ok(out)
}

/// Subset drawing only from `label`. Same machinery as [`balance_subset`].
pub fn single_group_subset(
    pool: &[(String, Label)],
    label: Label,
    budget: u64,
    mode: BalanceMode,
    seed: u64,
) -> Result<Vec<String>, BalanceError> {
    balance_subset(pool, &CompositionTarget::<f64>::only(label, budget, mode)?, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub axis: PerceivedAxis,
    pub total: u64,
    pub counts: BTreeMap<Label, u64>,
    /// Empty when the subset is empty.
    pub ratios: BTreeMap<Label, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<BTreeMap<Label, f64>>,
}

/// Achieved histogram of `subset`, looked up in `pool`.
pub fn composition_report<S: Scalar>(
    subset: &[String],
    pool: &[(String, Label)],
    axis: PerceivedAxis,
    target: Option<&CompositionTarget<S>>,
) -> Result<CompositionReport, BalanceError> {
    let index: HashMap<&str, Label> = pool.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let mut counts: BTreeMap<Label, u64> = axis.substantive_labels().iter().map(|l| (*l, 0)).collect();
    let mut seen = BTreeSet::new();
    for id in subset {
        let label = *index.get(id.as_str()).ok_or_else(|| BalanceError::UnknownRecord(id.clone()))?;
        if !seen.insert(id.as_str()) {
            return Err(BalanceError::DuplicateRecord(id.clone()));
        }
        *counts.entry(label).or_insert(0) += 1;
    }
    let total = subset.len() as u64;
    let ratios = if total == 0 {
        BTreeMap::new()
    } else {
        counts.iter().map(|(l, c)| (*l, *c as f64 / total as f64)).collect()
    };
    let target = target.map(|t| t.target.iter().map(|(l, w)| (*l, w.to_f64())).collect());
    Ok(CompositionReport { axis, total, counts, ratios, target })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetHeader {
    pub target: CompositionTarget,
    pub achieved: CompositionReport,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SubsetLine<'a> {
    #[serde(borrow)]
    record_id: std::borrow::Cow<'a, str>,
}

/// Header line, then one `{"record_id": ...}` line per selected record.
pub fn write_subset(path: &Path, header: &SubsetHeader, ids: &[String]) -> Result<(), BalanceError> {
    let mut text = serde_json::to_string(header).map_err(JsonlError::from)?;
    text.push('\n');
    let lines: Vec<SubsetLine> = ids.iter().map(|id| SubsetLine { record_id: id.as_str().into() }).collect();
    text.push_str(&jsonl::to_string(&lines)?);
    Ok(jsonl::write_atomic(path, text.as_bytes())?)
}

pub fn read_subset(path: &Path) -> Result<(SubsetHeader, Vec<String>), BalanceError> {
    let file = std::fs::File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or(JsonlError::Parse { line: 1, message: "missing header".into() })?
        .map_err(|e| JsonlError::io(path, e))?;
    let header: SubsetHeader =
        serde_json::from_str(&first).map_err(|e| JsonlError::Parse { line: 1, message: e.to_string() })?;
    let mut ids = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: SubsetLine =
            serde_json::from_str(&line).map_err(|e| JsonlError::Parse { line: i + 2, message: e.to_string() })?;
        ids.push(row.record_id.into_owned());
    }
    Ok((header, ids))
}
