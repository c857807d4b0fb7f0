//! Performance, fairness and distribution-difference metrics.
//!
//! Positive class is "retained", so at-risk students sit in the negative
//! class and specificity measures how well they are caught.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{partition_keys, Gender, GroupKey, DEFAULT_GROUP_FLOOR};
use crate::error::{Error, Result};
use crate::thresholds::ThresholdPolicy;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPredictions {
    scores: Vec<f64>,
    labels: Vec<u8>,
    groups: Vec<GroupKey>,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, groups: Vec<GroupKey>) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != groups.len() {
            return Err(Error::Shape(format!(
                "scores ({}), labels ({}) and groups ({}) differ in length",
                scores.len(),
                labels.len(),
                groups.len()
            )));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Shape("scores must lie in [0, 1]".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Shape("labels must be 0 or 1".into()));
        }
        Ok(Self {
            scores,
            labels,
            groups,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn groups(&self) -> &[GroupKey] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> (Vec<f64>, Vec<u8>) {
        (
            idx.iter().map(|&i| self.scores[i]).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Mann-Whitney AUC from average ranks; ties between a positive and a
/// negative count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Shape("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric {
            metric: "auc",
            reason: format!("{n_pos} positives and {n_neg} negatives"),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are 1-based; tied blocks share their average rank. Twice the rank
    // is an integer, so the sum is exact.
    let mut twice_rank_sum_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                twice_rank_sum_pos += twice_avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u64;
    let twice_u = twice_rank_sum_pos - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// AUC(T) − AUC(T′). The AUC drop of a transfer scheme is `delta_auc(local, scheme)`.
pub fn delta_auc(auc_t: f64, auc_t2: f64) -> f64 {
    auc_t - auc_t2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    pub gap: f64,
    /// Groups with the highest and lowest AUC, in that order.
    pub worst_pair: (GroupKey, GroupKey),
    pub per_group: BTreeMap<GroupKey, f64>,
    /// Groups dropped because AUC is undefined on them.
    pub excluded: Vec<GroupKey>,
}

/// Maximum pairwise difference of per-group AUC over `eligible` groups.
pub fn auc_gap(preds: &ScoredPredictions, eligible: &BTreeSet<GroupKey>) -> Result<GapResult> {
    let partition = partition_keys(&preds.groups, 0);
    let mut per_group = BTreeMap::new();
    let mut excluded = Vec::new();
    for key in eligible {
        let Some(info) = partition.groups.get(key) else {
            excluded.push(*key);
            continue;
        };
        let (s, y) = preds.subset(&info.indices);
        match auc(&s, &y) {
            Ok(a) => {
                per_group.insert(*key, a);
            }
            Err(_) => excluded.push(*key),
        }
    }
    if per_group.len() < 2 {
        return Err(Error::GapUndefined(format!(
            "{} eligible group(s) with both classes",
            per_group.len()
        )));
    }
    // Iteration order is the key order, so ties resolve independently of the
    // caller's ordering.
    let (hi_key, hi) = per_group
        .iter()
        .fold((None, f64::NEG_INFINITY), |acc, (k, &v)| {
            if v > acc.1 {
                (Some(*k), v)
            } else {
                acc
            }
        });
    let (lo_key, lo) = per_group
        .iter()
        .fold((None, f64::INFINITY), |acc, (k, &v)| {
            if v < acc.1 {
                (Some(*k), v)
            } else {
                acc
            }
        });
    Ok(GapResult {
        gap: hi - lo,
        worst_pair: (hi_key.unwrap(), lo_key.unwrap()),
        per_group,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn tpr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    pub fn tnr(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }
}

/// A single cut-off or one per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Single(f64),
    PerGroup(BTreeMap<GroupKey, f64>),
}

impl Thresholds {
    pub fn for_group(&self, g: GroupKey) -> Result<f64> {
        match self {
            Thresholds::Single(t) => Ok(*t),
            Thresholds::PerGroup(m) => m
                .get(&g)
                .copied()
                .ok_or_else(|| Error::Threshold(format!("no threshold for group {g}"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |t: &f64| (0.0..=1.0).contains(t);
        let valid = match self {
            Thresholds::Single(t) => ok(t),
            Thresholds::PerGroup(m) => m.values().all(ok),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::Threshold("thresholds must lie in [0, 1]".into()))
        }
    }
}

/// Predicted positive iff score ≥ the applicable threshold.
pub fn confusion(
    preds: &ScoredPredictions,
    thresholds: &Thresholds,
) -> Result<(ConfusionCounts, BTreeMap<GroupKey, ConfusionCounts>)> {
    thresholds.validate()?;
    let mut total = ConfusionCounts::default();
    let mut per_group: BTreeMap<GroupKey, ConfusionCounts> = BTreeMap::new();
    for i in 0..preds.len() {
        let g = preds.groups[i];
        let predicted = preds.scores[i] >= thresholds.for_group(g)?;
        let actual = preds.labels[i] == 1;
        total.add(predicted, actual);
        per_group.entry(g).or_default().add(predicted, actual);
    }
    Ok((total, per_group))
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    ((tp * tn - fp * fn_) / denom.sqrt()).clamp(-1.0, 1.0)
}

pub fn specificity(c: &ConfusionCounts) -> Result<f64> {
    c.tnr().ok_or_else(|| Error::UndefinedMetric {
        metric: "specificity",
        reason: "no actual negatives".into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectedAttribute {
    /// Female vs male; other/unknown is left out of the comparison.
    Gender,
    /// URM vs non-URM.
    Urm,
}

/// (|ΔTPR| + |ΔTNR|) / 2 between the two sides of `attribute`.
pub fn equalized_odds(
    preds: &ScoredPredictions,
    thresholds: &Thresholds,
    attribute: ProtectedAttribute,
) -> Result<f64> {
    let (_, per_group) = confusion(preds, thresholds)?;
    let side = |g: &GroupKey| -> Option<usize> {
        match attribute {
            ProtectedAttribute::Gender => match g.gender {
                Gender::Female => Some(0),
                Gender::Male => Some(1),
                Gender::Other => None,
            },
            ProtectedAttribute::Urm => Some(if g.urm { 0 } else { 1 }),
        }
    };
    let mut sides = [ConfusionCounts::default(); 2];
    for (g, c) in &per_group {
        if let Some(s) = side(g) {
            sides[s].tp += c.tp;
            sides[s].fp += c.fp;
            sides[s].tn += c.tn;
            sides[s].fn_ += c.fn_;
        }
    }
    let names = match attribute {
        ProtectedAttribute::Gender => ["female", "male"],
        ProtectedAttribute::Urm => ["urm", "non_urm"],
    };
    let mut rates = [(0.0, 0.0); 2];
    for s in 0..2 {
        let (tpr, tnr) = match (sides[s].tpr(), sides[s].tnr()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::EoUndefined {
                    group: names[s].into(),
                    reason: "group lacks one of the two classes".into(),
                })
            }
        };
        rates[s] = (tpr, tnr);
    }
    Ok(((rates[0].0 - rates[1].0).abs() + (rates[0].1 - rates[1].1).abs()) / 2.0)
}

/// Exact ∫|F_P − F_Q| dx for the empirical CDFs.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty(
            "Wasserstein distance needs two nonempty samples".into(),
        ));
    }
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::Shape("samples must be finite".into()));
    }
    let mut a = p.to_vec();
    let mut b = q.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<f64> = a.iter().chain(&b).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    for w in all.windows(2) {
        while i < a.len() && a[i] <= w[0] {
            i += 1;
        }
        while j < b.len() && b[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// No notable difference.
    Pass,
    Fail,
}

/// Pass iff `distance < 0.05 * range`; a zero distance over a zero range passes.
pub fn wtndd(distance: f64, range: f64) -> Result<Verdict> {
    if !(distance >= 0.0) || !(range >= 0.0) {
        return Err(Error::Shape(
            "distance and range must be nonnegative".into(),
        ));
    }
    let pass = distance < 0.05 * range || (range == 0.0 && distance == 0.0);
    Ok(if pass { Verdict::Pass } else { Verdict::Fail })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionComparison {
    pub distance: f64,
    pub range: f64,
    pub verdict: Verdict,
}

/// Wasserstein distance and WTNDD verdict, with the range taken over the
/// union of both samples.
pub fn compare_distributions(p: &[f64], q: &[f64]) -> Result<DistributionComparison> {
    let distance = wasserstein_1d(p, q)?;
    let (lo, hi) = p
        .iter()
        .chain(q)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    Ok(DistributionComparison {
        distance,
        range,
        verdict: wtndd(distance, range)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupBreakdown {
    pub n: usize,
    pub auc: Option<f64>,
    pub confusion: ConfusionCounts,
    pub excluded_from_gap: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub gap: f64,
    pub pair: (GroupKey, GroupKey),
}

/// Everything measured in one evaluation. Metrics that are undefined on the
/// evaluated cohort are `None` and the reason is listed in `exclusions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub auc: f64,
    pub auc_gap: Option<GapSummary>,
    pub mcc: f64,
    pub specificity: Option<f64>,
    pub eo_gender: Option<f64>,
    pub eo_urm: Option<f64>,
    pub policy: ThresholdPolicy,
    pub confusion: ConfusionCounts,
    pub groups: BTreeMap<GroupKey, GroupBreakdown>,
    pub exclusions: Vec<String>,
}

pub fn evaluate(preds: &ScoredPredictions, policy: &ThresholdPolicy) -> Result<MetricReport> {
    evaluate_with_floor(preds, policy, DEFAULT_GROUP_FLOOR)
}

pub fn evaluate_with_floor(
    preds: &ScoredPredictions,
    policy: &ThresholdPolicy,
    floor: usize,
) -> Result<MetricReport> {
    let overall_auc = auc(&preds.scores, &preds.labels)?;
    let mut exclusions = Vec::new();
    let partition = partition_keys(&preds.groups, floor);
    let eligible: BTreeSet<GroupKey> = partition.eligible().collect();
    let gap = match auc_gap(preds, &eligible) {
        Ok(g) => {
            for k in &g.excluded {
                exclusions.push(format!("auc_gap: group {k} lacks one class"));
            }
            Some(GapSummary {
                gap: g.gap,
                pair: g.worst_pair,
            })
        }
        Err(e) => {
            exclusions.push(format!("auc_gap: {e}"));
            None
        }
    };
    let (total, per_group) = confusion(preds, &policy.thresholds)?;
    let spec = match specificity(&total) {
        Ok(s) => Some(s),
        Err(e) => {
            exclusions.push(e.to_string());
            None
        }
    };
    let mut eo = |attr: ProtectedAttribute| match equalized_odds(preds, &policy.thresholds, attr) {
        Ok(v) => Some(v),
        Err(e) => {
            exclusions.push(e.to_string());
            None
        }
    };
    let eo_gender = eo(ProtectedAttribute::Gender);
    let eo_urm = eo(ProtectedAttribute::Urm);
    let groups = partition
        .groups
        .iter()
        .map(|(k, info)| {
            let (s, y) = preds.subset(&info.indices);
            (
                *k,
                GroupBreakdown {
                    n: info.indices.len(),
                    auc: auc(&s, &y).ok(),
                    confusion: per_group.get(k).copied().unwrap_or_default(),
                    excluded_from_gap: info.excluded_from_gap,
                },
            )
        })
        .collect();
    Ok(MetricReport {
        n: preds.len(),
        auc: overall_auc,
        auc_gap: gap,
        mcc: mcc(&total),
        specificity: spec,
        eo_gender,
        eo_urm,
        policy: policy.clone(),
        confusion: total,
        groups,
        exclusions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(gender: Gender, urm: bool) -> GroupKey {
        GroupKey::new(gender, urm)
    }

    fn preds(scores: &[f64], labels: &[u8], groups: &[GroupKey]) -> ScoredPredictions {
        ScoredPredictions::new(scores.to_vec(), labels.to_vec(), groups.to_vec()).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.4], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.6, 0.3, 0.2], &[1, 0, 0, 1]).unwrap(), 0.5);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedMetric { metric: "auc", .. })
        ));
    }

    #[test]
    fn delta_auc_examples() {
        assert_eq!(delta_auc(0.8, 0.8), 0.0);
        assert!((delta_auc(0.85, 0.75) - 0.10).abs() < 1e-15);
    }

    #[test]
    fn auc_gap_examples() {
        let a = g(Gender::Female, false);
        let b = g(Gender::Male, false);
        // One group: undefined.
        let p = preds(&[0.1, 0.9], &[0, 1], &[a, a]);
        assert!(matches!(
            auc_gap(&p, &[a].into_iter().collect()),
            Err(Error::GapUndefined(_))
        ));
        // Identical multisets: zero.
        let p = preds(&[0.1, 0.9, 0.1, 0.9], &[0, 1, 0, 1], &[a, a, b, b]);
        let r = auc_gap(&p, &[a, b].into_iter().collect()).unwrap();
        assert_eq!(r.gap, 0.0);
    }

    fn group_with_auc(key: GroupKey, tenths: usize) -> (Vec<f64>, Vec<u8>, Vec<GroupKey>) {
        // Ten positives against one negative at 0.5; exactly `tenths` of the
        // positives outrank it.
        let mut s: Vec<f64> = (0..10)
            .map(|i| if i < tenths { 0.6 } else { 0.4 })
            .collect();
        let mut y = vec![1u8; 10];
        s.push(0.5);
        y.push(0);
        (s, y, vec![key; 11])
    }

    #[test]
    fn three_group_gap_picks_extreme_pair() {
        let keys = [
            g(Gender::Female, false),
            g(Gender::Male, false),
            g(Gender::Female, true),
        ];
        let mut s = Vec::new();
        let mut y = Vec::new();
        let mut k = Vec::new();
        for (key, tenths) in keys.iter().zip([9, 8, 6]) {
            let (a, b, c) = group_with_auc(*key, tenths);
            s.extend(a);
            y.extend(b);
            k.extend(c);
        }
        let p = preds(&s, &y, &k);
        let r = auc_gap(&p, &keys.into_iter().collect()).unwrap();
        assert!((r.gap - 0.3).abs() < 1e-12);
        assert_eq!(r.worst_pair, (keys[0], keys[2]));
    }

    #[test]
    fn confusion_examples() {
        let k = g(Gender::Male, false);
        let p = preds(&[0.2, 0.6, 0.8], &[0, 1, 0], &[k; 3]);
        let (c, _) = confusion(&p, &Thresholds::Single(0.5)).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 1, 1, 0));
        let (c, _) = confusion(&p, &Thresholds::Single(0.0)).unwrap();
        assert_eq!((c.fn_, c.tn), (0, 0));
        let (c, _) = confusion(&p, &Thresholds::Single(1.0)).unwrap();
        assert_eq!((c.tp, c.fp), (0, 0));
        let missing = Thresholds::PerGroup(BTreeMap::new());
        assert!(matches!(confusion(&p, &missing), Err(Error::Threshold(_))));
    }

    #[test]
    fn mcc_examples() {
        let c = |tp, fp, tn, fn_| ConfusionCounts { tp, fp, tn, fn_ };
        assert_eq!(mcc(&c(1, 0, 1, 0)), 1.0);
        assert_eq!(mcc(&c(3, 2, 0, 0)), 0.0);
        assert!((mcc(&c(2, 1, 1, 0)) - 2.0 / 12f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn specificity_examples() {
        let c = |fp, tn| ConfusionCounts {
            tp: 1,
            fp,
            tn,
            fn_: 1,
        };
        assert_eq!(specificity(&c(0, 4)).unwrap(), 1.0);
        assert_eq!(specificity(&c(1, 3)).unwrap(), 0.75);
        assert!(specificity(&c(0, 0)).is_err());
    }

    #[test]
    fn equalized_odds_example() {
        // Female: TPR 0.8, TNR 0.6. Male: TPR 0.6, TNR 0.8.
        let f = g(Gender::Female, false);
        let m = g(Gender::Male, false);
        let mut s = Vec::new();
        let mut y = Vec::new();
        let mut k = Vec::new();
        let mut push = |key, tp: usize, fn_: usize, tn: usize, fp: usize| {
            for _ in 0..tp {
                s.push(0.9);
                y.push(1);
                k.push(key);
            }
            for _ in 0..fn_ {
                s.push(0.1);
                y.push(1);
                k.push(key);
            }
            for _ in 0..tn {
                s.push(0.1);
                y.push(0);
                k.push(key);
            }
            for _ in 0..fp {
                s.push(0.9);
                y.push(0);
                k.push(key);
            }
        };
        push(f, 8, 2, 6, 4);
        push(m, 6, 4, 8, 2);
        let p = preds(&s, &y, &k);
        let eo = equalized_odds(&p, &Thresholds::Single(0.5), ProtectedAttribute::Gender).unwrap();
        assert!((eo - 0.2).abs() < 1e-12);
        // Swapping which side is which leaves EO unchanged.
        let swapped: Vec<_> = k.iter().map(|x| if *x == f { m } else { f }).collect();
        let p2 = preds(&s, &y, &swapped);
        let eo2 =
            equalized_odds(&p2, &Thresholds::Single(0.5), ProtectedAttribute::Gender).unwrap();
        assert!((eo - eo2).abs() < 1e-15);
        // URM attribute: everyone is non-URM, so the URM side is empty.
        assert!(matches!(
            equalized_odds(&p, &Thresholds::Single(0.5), ProtectedAttribute::Urm),
            Err(Error::EoUndefined { .. })
        ));
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[0.3, 0.1], &[0.1, 0.3]).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(wasserstein_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn wtndd_examples() {
        assert_eq!(wtndd(0.03, 1.0).unwrap(), Verdict::Pass);
        assert_eq!(wtndd(0.05, 1.0).unwrap(), Verdict::Fail);
        assert_eq!(wtndd(0.0, 0.0).unwrap(), Verdict::Pass);
        assert!(wtndd(-1.0, 1.0).is_err());
        let c = compare_distributions(&[0.5, 0.5], &[0.5]).unwrap();
        assert_eq!(c.verdict, Verdict::Pass);
    }

    fn equal_size_oracle(p: &[f64], q: &[f64]) -> f64 {
        let mut a = p.to_vec();
        let mut b = q.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    proptest! {
        #[test]
        fn auc_is_invariant_under_increasing_maps(
            raw in proptest::collection::vec((0u32..50, any::<bool>()), 2..120)
        ) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| *v as f64 / 50.0).collect();
            let y: Vec<u8> = raw.iter().map(|(_, b)| *b as u8).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let a = auc(&s, &y).unwrap();
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(a, auc(&t, &y).unwrap());
        }

        #[test]
        fn mcc_flips_sign_under_prediction_inversion(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
            let c = ConfusionCounts { tp, fp, tn, fn_ };
            let inv = ConfusionCounts { tp: fn_, fp: tn, tn: fp, fn_: tp };
            prop_assert!((mcc(&c) + mcc(&inv)).abs() < 1e-12);
        }

        #[test]
        fn wasserstein_metric_axioms(
            p in proptest::collection::vec(-5.0f64..5.0, 1..30),
            q in proptest::collection::vec(-5.0f64..5.0, 1..30),
            r in proptest::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let pq = wasserstein_1d(&p, &q).unwrap();
            prop_assert!((pq - wasserstein_1d(&q, &p).unwrap()).abs() < 1e-9);
            let pr = wasserstein_1d(&p, &r).unwrap();
            let rq = wasserstein_1d(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-9);
        }

        #[test]
        fn equal_sizes_match_sorted_pairs(
            pairs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40)
        ) {
            let (p, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let w = wasserstein_1d(&p, &q).unwrap();
            prop_assert!((w - equal_size_oracle(&p, &q)).abs() < 1e-9);
        }

        #[test]
        fn auc_gap_ignores_group_order(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let keys: Vec<GroupKey> = GroupKey::all().collect();
            let n = 120;
            let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let k: Vec<GroupKey> = (0..n).map(|_| keys[rng.random_range(0..4)]).collect();
            let p = preds(&s, &y, &k);
            let fwd: BTreeSet<_> = keys[..4].iter().copied().collect();
            let rev: BTreeSet<_> = keys[..4].iter().rev().copied().collect();
            let a = auc_gap(&p, &fwd);
            let b = auc_gap(&p, &rev);
            prop_assert_eq!(a.ok().map(|r| r.gap), b.ok().map(|r| r.gap));
        }
    }
}
