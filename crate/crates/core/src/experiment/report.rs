use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Family, ResultRow, ResultsStore};
use crate::error::{Error, Result};
use crate::metrics::{compare_distributions, Verdict};
use crate::stats::{mean, median, BoxStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

/// One value of a named distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub distribution: String,
    pub source: String,
    pub target: String,
    pub seed: u64,
    pub value: f64,
}

/// WTNDD comparison of two emitted distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub left: String,
    pub right: String,
    pub n_left: usize,
    pub n_right: usize,
    pub distance: Option<f64>,
    pub range: Option<f64>,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub distributions: Vec<DistributionEntry>,
    pub comparisons: Vec<Comparison>,
    pub summary: BTreeMap<String, f64>,
}

impl Report {
    pub fn values(&self, distribution: &str) -> Vec<f64> {
        self.distributions
            .iter()
            .filter(|e| e.distribution == distribution)
            .map(|e| e.value)
            .collect()
    }

    pub fn comparison(&self, left: &str, right: &str) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.left == left && c.right == right)
    }
}

struct Builder<'a> {
    rows: Vec<&'a ResultRow>,
    report: Report,
}

impl<'a> Builder<'a> {
    fn scheme(&self, scheme: &'a str) -> impl Iterator<Item = &'a ResultRow> + '_ {
        self.rows
            .iter()
            .copied()
            .filter(move |r| r.scheme == scheme)
    }

    /// Add `name` from `metric` of the scheme's rows that pass `keep`.
    fn dist(&mut self, name: &str, scheme: &str, metric: &str, keep: impl Fn(&ResultRow) -> bool) {
        let entries: Vec<DistributionEntry> = self
            .rows
            .iter()
            .filter(|r| r.scheme == scheme && keep(r))
            .filter_map(|r| {
                r.value(metric).map(|value| DistributionEntry {
                    distribution: name.to_string(),
                    source: r.source.clone(),
                    target: r.target.clone(),
                    seed: r.seed,
                    value,
                })
            })
            .collect();
        self.report.distributions.extend(entries);
    }

    fn compare(&mut self, left: &str, right: &str) -> Result<()> {
        let l = self.report.values(left);
        let r = self.report.values(right);
        let (distance, range, verdict) = if l.is_empty() || r.is_empty() {
            (None, None, None)
        } else {
            let c = compare_distributions(&l, &r)?;
            (Some(c.distance), Some(c.range), Some(c.verdict))
        };
        self.report.comparisons.push(Comparison {
            left: left.to_string(),
            right: right.to_string(),
            n_left: l.len(),
            n_right: r.len(),
            distance,
            range,
            verdict,
        });
        Ok(())
    }

    fn put(&mut self, key: String, value: Option<f64>) {
        if let Some(v) = value.filter(|v| v.is_finite()) {
            self.report.summary.insert(key, v);
        }
    }
}

fn seeds(rows: &[&ResultRow]) -> BTreeSet<u64> {
    rows.iter().map(|r| r.seed).collect()
}

/// Tables and WTNDD verdicts for one experiment, computed only from the
/// store's rows.
pub fn build_report(store: &ResultsStore, experiment: &str) -> Result<Report> {
    let family: Family = experiment.parse()?;
    let mut rows: Vec<&ResultRow> = store.rows_for(experiment).collect();
    rows.sort_by_key(|r| r.key());
    let mut b = Builder {
        rows,
        report: Report {
            experiment: experiment.to_string(),
            distributions: Vec::new(),
            comparisons: Vec::new(),
            summary: BTreeMap::new(),
        },
    };
    match family {
        Family::Direct => direct(&mut b)?,
        Family::Regression => regression(&mut b),
        Family::Msti => msti(&mut b)?,
        Family::Sequential => sequential(&mut b)?,
        Family::Sfda => sfda(&mut b)?,
        Family::Thresholds => thresholds(&mut b)?,
    }
    Ok(b.report)
}

fn direct(b: &mut Builder<'_>) -> Result<()> {
    for metric in ["auc", "auc_gap"] {
        for scheme in ["local", "direct"] {
            b.dist(&format!("{scheme}.{metric}"), scheme, metric, |_| true);
        }
        b.compare(&format!("local.{metric}"), &format!("direct.{metric}"))?;
    }
    b.dist("direct.delta_auc", "direct", "delta_auc", |_| true);
    let drops = b.report.values("direct.delta_auc");
    b.put("mean_delta_auc".into(), mean(&drops));
    b.put(
        "mean_abs_delta_auc".into(),
        mean(&drops.iter().map(|d| d.abs()).collect::<Vec<_>>()),
    );
    b.put(
        "failed_cells".into(),
        Some(b.rows.iter().filter(|r| r.report.is_none()).count() as f64),
    );
    Ok(())
}

fn regression(b: &mut Builder<'_>) {
    b.dist("pair.delta_auc", "pair", "delta_auc", |_| true);
    b.dist("pair.auc_gap", "pair", "auc_gap", |_| true);
    let fits: Vec<&ResultRow> = b
        .rows
        .iter()
        .copied()
        .filter(|r| r.scheme == "auc_drop" || r.scheme == "auc_gap")
        .collect();
    for r in fits {
        for (k, v) in &r.values {
            b.put(format!("seed{}.{}.{}", r.seed, r.scheme, k), Some(*v));
        }
    }
}

fn msti(b: &mut Builder<'_>) -> Result<()> {
    for metric in ["auc", "auc_gap"] {
        for scheme in ["msti", "expected", "local"] {
            b.dist(&format!("{scheme}.{metric}"), scheme, metric, |_| true);
        }
        b.compare(&format!("msti.{metric}"), &format!("expected.{metric}"))?;
        b.compare(&format!("msti.{metric}"), &format!("local.{metric}"))?;
        b.compare(&format!("expected.{metric}"), &format!("local.{metric}"))?;
    }
    for seed in seeds(&b.rows) {
        let expected: BTreeMap<&str, f64> = b
            .scheme("expected")
            .filter(|r| r.seed == seed)
            .filter_map(|r| r.value("auc").map(|v| (r.target.as_str(), v)))
            .collect();
        let mut wins = 0;
        let mut total = 0;
        for r in b.scheme("msti").filter(|r| r.seed == seed) {
            if let (Some(a), Some(e)) = (r.value("auc"), expected.get(r.target.as_str())) {
                total += 1;
                if a >= *e {
                    wins += 1;
                }
            }
        }
        b.put(format!("seed{seed}.targets"), Some(total as f64));
        b.put(
            format!("seed{seed}.msti_auc_at_least_expected"),
            Some(wins as f64),
        );
        if total > 0 {
            b.put(
                format!("seed{seed}.msti_win_fraction"),
                Some(wins as f64 / total as f64),
            );
        }
    }
    Ok(())
}

fn sequential(b: &mut Builder<'_>) -> Result<()> {
    let mut strata: Vec<f64> = b
        .scheme("strata")
        .flat_map(|r| r.values.values().copied())
        .collect();
    strata.sort_by(f64::total_cmp);
    strata.dedup();
    for (i, s) in strata.iter().enumerate() {
        let tag = format!("{s:.2}");
        for metric in ["auc", "auc_gap"] {
            for scheme in ["msti", "sequential"] {
                let s = *s;
                // Only targets where both models have a result enter a stratum.
                let paired: BTreeSet<(String, u64)> = b
                    .scheme("sequential")
                    .filter(|r| r.report.is_some() && r.value("msti_gap").is_some_and(|g| g >= s))
                    .map(|r| (r.target.clone(), r.seed))
                    .collect();
                b.dist(&format!("{scheme}.{metric}@{tag}"), scheme, metric, |r| {
                    paired.contains(&(r.target.clone(), r.seed))
                });
            }
            b.compare(
                &format!("msti.{metric}@{tag}"),
                &format!("sequential.{metric}@{tag}"),
            )?;
        }
        let m = b.report.values(&format!("msti.auc_gap@{tag}"));
        let q = b.report.values(&format!("sequential.auc_gap@{tag}"));
        b.put(format!("stratum{i}.threshold"), Some(*s));
        b.put(format!("stratum{i}.targets"), Some(m.len() as f64));
        b.put(format!("stratum{i}.median_msti_gap"), median(&m));
        b.put(format!("stratum{i}.median_sequential_gap"), median(&q));
        if m.len() == q.len() && !m.is_empty() {
            let reduced = m.iter().zip(&q).filter(|(a, c)| c < a).count();
            b.put(format!("stratum{i}.gap_reduced"), Some(reduced as f64));
        }
    }
    b.put(
        "skipped_targets".into(),
        Some(
            b.scheme("sequential")
                .filter(|r| r.report.is_none())
                .count() as f64,
        ),
    );
    Ok(())
}

const SFDA_SCHEMES: [&str; 4] = ["direct", "shot", "tent", "pseudo_label"];

fn sfda(b: &mut Builder<'_>) -> Result<()> {
    for metric in ["auc", "auc_gap"] {
        for scheme in SFDA_SCHEMES {
            b.dist(&format!("{scheme}.{metric}"), scheme, metric, |_| true);
        }
        for scheme in &SFDA_SCHEMES[1..] {
            b.compare(&format!("{scheme}.{metric}"), &format!("direct.{metric}"))?;
        }
    }
    let targets: BTreeSet<String> = b.rows.iter().map(|r| r.target.clone()).collect();
    for t in &targets {
        for scheme in SFDA_SCHEMES {
            let v: Vec<f64> = b
                .scheme(scheme)
                .filter(|r| &r.target == t)
                .filter_map(|r| r.value("auc"))
                .collect();
            if let Ok(bx) = BoxStats::from_values(&v) {
                let key = |k: &str| format!("box.{t}.{scheme}.{k}");
                b.put(key("n"), Some(bx.n as f64));
                b.put(key("q1"), Some(bx.q1));
                b.put(key("median"), Some(bx.median));
                b.put(key("q3"), Some(bx.q3));
                b.put(key("whisker_low"), Some(bx.whisker_low));
                b.put(key("whisker_high"), Some(bx.whisker_high));
                b.put(key("outliers"), Some(bx.outliers.len() as f64));
            }
        }
    }
    for scheme in &SFDA_SCHEMES[1..] {
        let forbidden: f64 = b
            .scheme(scheme)
            .filter_map(|r| r.value("forbidden_changes"))
            .sum();
        let failed = b.scheme(scheme).filter(|r| r.report.is_none()).count();
        b.put(format!("{scheme}.forbidden_changes"), Some(forbidden));
        b.put(format!("{scheme}.failed_cells"), Some(failed as f64));
    }
    Ok(())
}

const POLICIES: [&str; 3] = ["default", "overall_optimal", "group_optimal"];

fn thresholds(b: &mut Builder<'_>) -> Result<()> {
    for metric in ["specificity", "mcc", "eo_gender", "eo_urm"] {
        for scheme in POLICIES {
            let name = format!("{scheme}.{metric}");
            b.dist(&name, scheme, metric, |_| true);
            let v = b.report.values(&name);
            b.put(format!("mean.{name}"), mean(&v));
        }
        for (i, l) in POLICIES.iter().enumerate() {
            for r in &POLICIES[i + 1..] {
                b.compare(&format!("{l}.{metric}"), &format!("{r}.{metric}"))?;
            }
        }
    }
    for scheme in POLICIES {
        let excluded = b
            .scheme(scheme)
            .filter(|r| r.value("eo_gender").is_none() || r.value("eo_urm").is_none())
            .count();
        b.put(
            format!("{scheme}.eo_undefined_cells"),
            Some(excluded as f64),
        );
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the experiment's report into `dir` and return the written paths.
/// Output depends only on the store's rows for the experiment.
pub fn emit_report(
    store: &ResultsStore,
    experiment: &str,
    format: ReportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let report = build_report(store, experiment)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        ReportFormat::Json => {
            let path = dir.join(format!("{experiment}.report.json"));
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let dists = dir.join(format!("{experiment}.distributions.csv"));
            let mut w = csv::Writer::from_path(&dists)?;
            w.write_record(["distribution", "source", "target", "seed", "value"])?;
            for e in &report.distributions {
                w.write_record([
                    e.distribution.clone(),
                    e.source.clone(),
                    e.target.clone(),
                    e.seed.to_string(),
                    e.value.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&dists, e))?;

            let comps = dir.join(format!("{experiment}.comparisons.csv"));
            let mut w = csv::Writer::from_path(&comps)?;
            w.write_record([
                "left", "right", "n_left", "n_right", "distance", "range", "verdict",
            ])?;
            for c in &report.comparisons {
                let verdict = match c.verdict {
                    Some(Verdict::Pass) => "pass",
                    Some(Verdict::Fail) => "fail",
                    None => "",
                };
                w.write_record([
                    c.left.clone(),
                    c.right.clone(),
                    c.n_left.to_string(),
                    c.n_right.to_string(),
                    opt(c.distance),
                    opt(c.range),
                    verdict.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&comps, e))?;

            let summary = dir.join(format!("{experiment}.summary.csv"));
            let mut w = csv::Writer::from_path(&summary)?;
            w.write_record(["key", "value"])?;
            for (k, v) in &report.summary {
                w.write_record([k.clone(), v.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(&summary, e))?;
            Ok(vec![dists, comps, summary])
        }
    }
}
