//! Decision-threshold policies.
//!
//! The "optimal" policies match historical base rates: the threshold is
//! chosen so that the fraction predicted retained equals the retention rate
//! the institution (or group) saw in its own earlier cohorts. No label of the
//! evaluated cohort is ever read.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::GroupKey;
use crate::error::{Error, Result};
use crate::metrics::Thresholds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Default,
    OverallOptimal,
    GroupOptimal,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::Default,
        PolicyKind::OverallOptimal,
        PolicyKind::GroupOptimal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Default => "default",
            PolicyKind::OverallOptimal => "overall_optimal",
            PolicyKind::GroupOptimal => "group_optimal",
        }
    }
}

/// Retention rates of an institution's own training cohorts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoricalRates {
    pub overall: f64,
    pub groups: BTreeMap<GroupKey, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub kind: PolicyKind,
    pub thresholds: Thresholds,
    /// Rates the thresholds were derived from.
    pub rates: BTreeMap<String, f64>,
    /// Groups that had no usable history and used the overall rate.
    pub fallback_groups: Vec<GroupKey>,
}

pub fn default_policy() -> ThresholdPolicy {
    ThresholdPolicy {
        kind: PolicyKind::Default,
        thresholds: Thresholds::Single(0.5),
        rates: BTreeMap::new(),
        fallback_groups: Vec::new(),
    }
}

/// Threshold giving `round(r * n)` (at least one) predicted positives:
/// the `k`-th largest score. Predicted positive iff score ≥ t.
pub fn base_rate_threshold(scores: &[f64], r: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("no scores to threshold".into()));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Threshold(format!(
            "historical rate {r} outside (0, 1)"
        )));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let k = ((r * n as f64).round() as usize).clamp(1, n);
    Ok(v[n - k])
}

pub fn overall_optimal_policy(scores: &[f64], r: f64) -> Result<ThresholdPolicy> {
    let t = base_rate_threshold(scores, r)?;
    Ok(ThresholdPolicy {
        kind: PolicyKind::OverallOptimal,
        thresholds: Thresholds::Single(t),
        rates: [("overall".to_string(), r)].into_iter().collect(),
        fallback_groups: Vec::new(),
    })
}

/// Per-group base-rate thresholds. Groups whose history is missing or
/// degenerate (rate 0 or 1) fall back to the overall rate and are flagged.
pub fn group_optimal_policy(
    scores: &[f64],
    groups: &[GroupKey],
    history: &HistoricalRates,
) -> Result<ThresholdPolicy> {
    if scores.len() != groups.len() {
        return Err(Error::Shape("scores and groups differ in length".into()));
    }
    let mut by_group: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for (s, g) in scores.iter().zip(groups) {
        by_group.entry(*g).or_default().push(*s);
    }
    let mut map = BTreeMap::new();
    let mut rates = BTreeMap::new();
    let mut fallback_groups = Vec::new();
    rates.insert("overall".to_string(), history.overall);
    for (g, s) in &by_group {
        let r = match history.groups.get(g) {
            Some(&r) if r > 0.0 && r < 1.0 => r,
            _ => {
                fallback_groups.push(*g);
                history.overall
            }
        };
        map.insert(*g, base_rate_threshold(s, r)?);
        rates.insert(g.to_string(), r);
    }
    Ok(ThresholdPolicy {
        kind: PolicyKind::GroupOptimal,
        thresholds: Thresholds::PerGroup(map),
        rates,
        fallback_groups,
    })
}
