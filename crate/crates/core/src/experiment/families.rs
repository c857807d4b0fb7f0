use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{Experiment, ResultRow, TransferArtifact};
use crate::adaptation::{adapt_in_silo, AdaptConfig, AdaptMethod};
use crate::artifact::config_digest;
use crate::data::{Category, InstitutionKind};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::network::ParamId;
use crate::similarity::{
    cs_weights, overall_similarity, regress_on_similarity, select_msti, select_sequential_partner,
    RegressionFit, SimilarityVector, WeightVector,
};
use crate::stats::mean;
use crate::thresholds::PolicyKind;
use crate::training::{compute_fisher_diagonal, train_local, train_sequential_ewc, TrainConfig};

type Cell<T> = std::result::Result<T, String>;

/// One trained model per silo and every (source, target) evaluation for one
/// seed. A source evaluated on itself is the ideal-local model.
#[derive(Debug)]
pub struct DirectMatrix {
    pub seed: u64,
    artifacts: BTreeMap<String, Cell<TransferArtifact>>,
    cells: BTreeMap<(String, String), Cell<MetricReport>>,
    digests: BTreeMap<String, String>,
}

fn train_config(exp: &Experiment, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..exp.config.train.clone()
    }
}

impl DirectMatrix {
    pub(super) fn compute(exp: &Experiment, seed: u64) -> Result<Self> {
        let cfg = train_config(exp, seed);
        let digest = config_digest(&cfg)?;
        let split = &exp.config.split;
        let ids = exp.universe.ids();
        let trained: Vec<Cell<TransferArtifact>> = ids
            .par_iter()
            .map(|id| {
                let silo = exp.universe.get(id).map_err(|e| e.to_string())?;
                let out = train_local(silo, split, &cfg).map_err(|e| e.to_string())?;
                TransferArtifact::new(&out.params, None, vec![id.clone()], digest.clone())
                    .map_err(|e| e.to_string())
            })
            .collect();
        let artifacts: BTreeMap<String, Cell<TransferArtifact>> =
            ids.iter().cloned().zip(trained).collect();
        let targets = exp.universe.target_ids();
        let pairs: Vec<(String, String)> = targets
            .iter()
            .flat_map(|t| ids.iter().map(move |s| (s.clone(), t.clone())))
            .collect();
        let reports: Vec<Cell<MetricReport>> = pairs
            .par_iter()
            .map(|(s, t)| {
                let artifact = artifacts[s]
                    .as_ref()
                    .map_err(|e| format!("training failed: {e}"))?;
                let model = artifact.model().map_err(|e| e.to_string())?;
                let target = exp.universe.get(t).map_err(|e| e.to_string())?;
                let mut r = target
                    .evaluate(split, &model, &[PolicyKind::Default])
                    .map_err(|e| e.to_string())?;
                Ok(r.remove(0))
            })
            .collect();
        let mut digests = BTreeMap::new();
        for t in &targets {
            digests.insert(t.clone(), exp.universe.get(t)?.test_cohort_digest(split)?);
        }
        Ok(Self {
            seed,
            artifacts,
            cells: pairs.into_iter().zip(reports).collect(),
            digests,
        })
    }

    pub fn artifact(&self, id: &str) -> Result<&TransferArtifact> {
        match self.artifacts.get(id) {
            Some(Ok(a)) => Ok(a),
            Some(Err(e)) => Err(Error::State(format!("no model for `{id}`: {e}"))),
            None => Err(Error::UnknownInstitution(id.to_string())),
        }
    }

    pub fn cell(&self, source: &str, target: &str) -> Option<&Cell<MetricReport>> {
        self.cells.get(&(source.to_string(), target.to_string()))
    }

    pub fn report(&self, source: &str, target: &str) -> Option<&MetricReport> {
        self.cell(source, target).and_then(|c| c.as_ref().ok())
    }

    pub fn cohort_digest(&self, target: &str) -> Option<&str> {
        self.digests.get(target).map(String::as_str)
    }
}

fn metric_values(r: &MetricReport) -> BTreeMap<String, f64> {
    let mut v = BTreeMap::new();
    v.insert("auc".into(), r.auc);
    v.insert("mcc".into(), r.mcc);
    if let Some(g) = &r.auc_gap {
        v.insert("auc_gap".into(), g.gap);
    }
    for (name, x) in [
        ("specificity", r.specificity),
        ("eo_gender", r.eo_gender),
        ("eo_urm", r.eo_urm),
    ] {
        if let Some(x) = x {
            v.insert(name.into(), x);
        }
    }
    v
}

fn report_row(
    experiment: &str,
    scheme: &str,
    source: &str,
    target: &str,
    seed: u64,
    cell: std::result::Result<&MetricReport, &String>,
    digest: Option<&str>,
) -> ResultRow {
    let mut row = ResultRow::new(experiment, scheme, source, target, seed);
    match cell {
        Ok(r) => {
            row.values = metric_values(r);
            row.report = Some(r.clone());
            row.cohort_digest = digest.map(str::to_string);
        }
        Err(e) => row.note = Some(e.clone()),
    }
    row
}

fn missing() -> String {
    "cell was not computed".to_string()
}

pub fn run_direct_matrix(exp: &Experiment) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &seed in &exp.config.seeds {
        let m = exp.direct_matrix(seed)?;
        for t in exp.universe.target_ids() {
            let digest = m.cohort_digest(&t);
            let local = m.report(&t, &t);
            let lost = missing();
            let cell = m.cell(&t, &t).map(|c| c.as_ref()).unwrap_or(Err(&lost));
            rows.push(report_row("direct", "local", &t, &t, seed, cell, digest));
            for s in exp.universe.ids().into_iter().filter(|s| *s != t) {
                let cell = m.cell(&s, &t).map(|c| c.as_ref()).unwrap_or(Err(&lost));
                let mut row = report_row("direct", "direct", &s, &t, seed, cell, digest);
                if let (Some(l), Some(d)) = (local, m.report(&s, &t)) {
                    row.values.insert("delta_auc".into(), l.auc - d.auc);
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Both similarity regressions for one seed, over every source ≠ target pair
/// with a usable evaluation.
pub struct RegressionPair {
    pub auc_drop: RegressionFit,
    pub auc_gap: RegressionFit,
    /// (source, target, similarity, AUC drop, direct AUC Gap)
    pub observations: Vec<(String, String, SimilarityVector, f64, Option<f64>)>,
}

pub fn similarity_regressions(exp: &Experiment, seed: u64) -> Result<RegressionPair> {
    let m = exp.direct_matrix(seed)?;
    let mut observations = Vec::new();
    for t in exp.universe.target_ids() {
        let Some(local) = m.report(&t, &t) else {
            continue;
        };
        for s in exp.universe.ids().into_iter().filter(|s| *s != t) {
            let Some(d) = m.report(&s, &t) else { continue };
            let sim = exp.similarity.get(&s, &t)?;
            observations.push((
                s,
                t.clone(),
                sim,
                local.auc - d.auc,
                d.auc_gap.as_ref().map(|g| g.gap),
            ));
        }
    }
    let drops: Vec<f64> = observations.iter().map(|o| o.3).collect();
    let sims: Vec<SimilarityVector> = observations.iter().map(|o| o.2.clone()).collect();
    let auc_drop = regress_on_similarity(&drops, &sims)?;
    let (gaps, gap_sims): (Vec<f64>, Vec<SimilarityVector>) = observations
        .iter()
        .filter_map(|o| o.4.map(|g| (g, o.2.clone())))
        .unzip();
    let auc_gap = regress_on_similarity(&gaps, &gap_sims)?;
    Ok(RegressionPair {
        auc_drop,
        auc_gap,
        observations,
    })
}

fn fit_row(scheme: &str, seed: u64, fit: &RegressionFit) -> ResultRow {
    let mut row = ResultRow::new("regression", scheme, "*", "*", seed);
    row.values.insert("r_squared".into(), fit.r_squared);
    row.values.insert("n".into(), fit.n as f64);
    for (i, name) in fit.names.iter().enumerate() {
        row.values
            .insert(format!("coef.{name}"), fit.coefficients[i]);
        row.values.insert(format!("se.{name}"), fit.std_errors[i]);
        row.values.insert(format!("t.{name}"), fit.t_stats[i]);
        row.values.insert(format!("p.{name}"), fit.p_values[i]);
    }
    row
}

pub fn run_similarity_regression(exp: &Experiment) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &seed in &exp.config.seeds {
        let reg = similarity_regressions(exp, seed)?;
        for (s, t, sim, drop, gap) in &reg.observations {
            let mut row = ResultRow::new("regression", "pair", s, t, seed);
            row.values.insert("delta_auc".into(), *drop);
            if let Some(g) = gap {
                row.values.insert("auc_gap".into(), *g);
            }
            for c in Category::ALL {
                row.values.insert(format!("sim.{c}"), sim.get(c));
            }
            rows.push(row);
        }
        rows.push(fit_row("auc_drop", seed, &reg.auc_drop));
        rows.push(fit_row("auc_gap", seed, &reg.auc_gap));
    }
    Ok(rows)
}

/// Similarity weights and each target's most similar training institution.
pub struct MstiSelection {
    pub weights: WeightVector,
    pub msti: BTreeMap<String, String>,
}

fn candidates(exp: &Experiment, target: &str) -> Vec<String> {
    exp.universe
        .ids()
        .into_iter()
        .filter(|s| s != target)
        .collect()
}

pub fn msti_selection(exp: &Experiment, seed: u64) -> Result<MstiSelection> {
    let reg = similarity_regressions(exp, seed)?;
    let weights = cs_weights(&reg.auc_drop, &exp.config.similarity_categories)?;
    let mut msti = BTreeMap::new();
    for t in exp.universe.target_ids() {
        let pick = select_msti(&t, &candidates(exp, &t), &exp.similarity, &weights)?;
        msti.insert(t, pick);
    }
    Ok(MstiSelection { weights, msti })
}

pub fn run_msti_experiment(exp: &Experiment) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let lost = missing();
    for &seed in &exp.config.seeds {
        let m = exp.direct_matrix(seed)?;
        let sel = msti_selection(exp, seed)?;
        let mut w = ResultRow::new("msti", "weights", "*", "*", seed);
        for (c, v) in &sel.weights.0 {
            w.values.insert(format!("weight.{c}"), *v);
        }
        rows.push(w);
        for (t, s) in &sel.msti {
            let digest = m.cohort_digest(t);
            let cell = m.cell(s, t).map(|c| c.as_ref()).unwrap_or(Err(&lost));
            let mut row = report_row("msti", "msti", s, t, seed, cell, digest);
            let sim = overall_similarity(&exp.similarity.get(s, t)?, &sel.weights)?;
            row.values.insert("overall_similarity".into(), sim);
            rows.push(row);

            let cands = candidates(exp, t);
            let aucs: Vec<f64> = cands
                .iter()
                .filter_map(|c| m.report(c, t))
                .map(|r| r.auc)
                .collect();
            let gaps: Vec<f64> = cands
                .iter()
                .filter_map(|c| m.report(c, t))
                .filter_map(|r| r.auc_gap.as_ref().map(|g| g.gap))
                .collect();
            let mut e = ResultRow::new("msti", "expected", "*", t, seed);
            match mean(&aucs) {
                Some(a) => {
                    e.values.insert("auc".into(), a);
                    e.values.insert("sources".into(), aucs.len() as f64);
                }
                None => e.note = Some("no candidate source produced a report".into()),
            }
            if let Some(g) = mean(&gaps) {
                e.values.insert("auc_gap".into(), g);
            }
            rows.push(e);

            let cell = m.cell(t, t).map(|c| c.as_ref()).unwrap_or(Err(&lost));
            rows.push(report_row("msti", "local", t, t, seed, cell, digest));
        }
    }
    Ok(rows)
}

struct SequentialCell {
    target: String,
    msti: String,
    outcome: Cell<(String, MetricReport)>,
}

pub fn run_sequential_experiment(exp: &Experiment) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let lost = missing();
    for &seed in &exp.config.seeds {
        let m = exp.direct_matrix(seed)?;
        let sel = msti_selection(exp, seed)?;
        let cfg = train_config(exp, seed);
        let digest = config_digest(&cfg)?;
        let split = &exp.config.split;
        let mut strata = ResultRow::new("sequential", "strata", "*", "*", seed);
        for (i, s) in exp.config.gap_strata.iter().enumerate() {
            strata.values.insert(format!("stratum.{i}"), *s);
        }
        rows.push(strata);
        let jobs: Vec<(String, String)> = sel
            .msti
            .iter()
            .map(|(t, s)| (t.clone(), s.clone()))
            .collect();
        let cells: Vec<SequentialCell> = exp.install(|| {
            jobs.par_iter()
                .map(|(t, s)| {
                    let outcome = (|| -> Result<Cell<(String, MetricReport)>> {
                        let partner = select_sequential_partner(
                            t,
                            s,
                            &candidates(exp, t),
                            &exp.similarity,
                            &sel.weights,
                            exp.config.partner_floor,
                            exp.config.demographic_reference,
                        )?;
                        let Some(partner) = partner else {
                            return Ok(Err(format!(
                                "no partner with overall similarity above {}",
                                exp.config.partner_floor
                            )));
                        };
                        // Stage one runs inside the MSTI silo.
                        let stage_one = m.artifact(s)?.model()?;
                        let msti_silo = exp.universe.get(s)?;
                        let fisher = compute_fisher_diagonal(
                            &stage_one,
                            msti_silo,
                            split,
                            cfg.fisher_sample_cap,
                            seed,
                        )?;
                        let artifact = TransferArtifact::new(
                            &stage_one,
                            Some(&fisher),
                            vec![s.clone()],
                            digest.clone(),
                        )?;
                        // Stage two runs inside the partner silo.
                        let out = train_sequential_ewc(
                            &artifact,
                            exp.universe.get(&partner)?,
                            split,
                            &cfg,
                        )?;
                        let mut r = exp.universe.get(t)?.evaluate(
                            split,
                            &out.params,
                            &[PolicyKind::Default],
                        )?;
                        Ok(Ok((partner, r.remove(0))))
                    })();
                    SequentialCell {
                        target: t.clone(),
                        msti: s.clone(),
                        outcome: outcome.unwrap_or_else(|e| Err(e.to_string())),
                    }
                })
                .collect()
        });
        for c in cells {
            let digest = m.cohort_digest(&c.target);
            let msti_cell = m
                .cell(&c.msti, &c.target)
                .map(|x| x.as_ref())
                .unwrap_or(Err(&lost));
            let mut msti_row = report_row(
                "sequential",
                "msti",
                &c.msti,
                &c.target,
                seed,
                msti_cell,
                digest,
            );
            let msti_auc = msti_row.value("auc");
            let msti_gap = msti_row.value("auc_gap");
            let mut seq_row = match &c.outcome {
                Ok((partner, r)) => {
                    let source = format!("{}>{}", c.msti, partner);
                    report_row(
                        "sequential",
                        "sequential",
                        &source,
                        &c.target,
                        seed,
                        Ok(r),
                        digest,
                    )
                }
                Err(e) => {
                    let source = format!("{}>-", c.msti);
                    report_row(
                        "sequential",
                        "sequential",
                        &source,
                        &c.target,
                        seed,
                        Err(e),
                        None,
                    )
                }
            };
            if let Some(a) = msti_auc {
                seq_row.values.insert("msti_auc".into(), a);
            }
            if let Some(g) = msti_gap {
                seq_row.values.insert("msti_gap".into(), g);
                msti_row.values.insert("msti_gap".into(), g);
            }
            rows.push(msti_row);
            rows.push(seq_row);
        }
    }
    Ok(rows)
}

fn sfda_sources(exp: &Experiment) -> Vec<String> {
    match &exp.config.sfda_sources {
        Some(s) => s.clone(),
        None => exp
            .universe
            .silos()
            .iter()
            .filter(|s| s.kind() == InstitutionKind::University)
            .map(|s| s.id().to_string())
            .collect(),
    }
}

/// Tensors an adapter is not allowed to change.
fn forbidden(method: AdaptMethod, id: ParamId) -> bool {
    match method {
        AdaptMethod::Shot => id.is_classifier(),
        AdaptMethod::Tent => !id.is_bn_affine(),
        AdaptMethod::PseudoLabel => false,
    }
}

pub fn run_sfda_experiment(exp: &Experiment) -> Result<Vec<ResultRow>> {
    let seed = exp.config.seeds[0];
    let m = exp.direct_matrix(seed)?;
    let split = &exp.config.split;
    let lost = missing();
    let sources = sfda_sources(exp);
    let mut rows = Vec::new();
    let mut jobs = Vec::new();
    for t in exp.universe.target_ids() {
        for s in sources.iter().filter(|s| **s != t) {
            let cell = m.cell(s, &t).map(|c| c.as_ref()).unwrap_or(Err(&lost));
            rows.push(report_row(
                "sfda",
                "direct",
                s,
                &t,
                seed,
                cell,
                m.cohort_digest(&t),
            ));
            for &method in &exp.config.sfda_methods {
                for &adapt_seed in &exp.config.sfda_seeds {
                    jobs.push((s.clone(), t.clone(), method, adapt_seed));
                }
            }
        }
    }
    let adapted: Vec<ResultRow> = exp.install(|| {
        jobs.par_iter()
            .map(|(s, t, method, adapt_seed)| {
                let cfg = AdaptConfig {
                    method: *method,
                    seed: *adapt_seed,
                    ..exp.config.adapt.clone()
                };
                let result = (|| -> Result<(MetricReport, usize, usize, Option<String>)> {
                    let source = m.artifact(s)?.model()?;
                    let target = exp.universe.get(t)?;
                    let out = adapt_in_silo(&source, target, split, &cfg)?;
                    let changed = source.learnable.diff(&out.params.learnable);
                    let bad = changed.iter().filter(|id| forbidden(*method, **id)).count();
                    let mut r = target.evaluate(split, &out.params, &[PolicyKind::Default])?;
                    Ok((r.remove(0), changed.len(), bad, out.warning))
                })();
                match result {
                    Ok((r, changed, bad, warning)) => {
                        let mut row = report_row(
                            "sfda",
                            method.as_str(),
                            s,
                            t,
                            *adapt_seed,
                            Ok(&r),
                            m.cohort_digest(t),
                        );
                        row.values.insert("changed_tensors".into(), changed as f64);
                        row.values.insert("forbidden_changes".into(), bad as f64);
                        row.note = warning;
                        row
                    }
                    Err(e) => report_row(
                        "sfda",
                        method.as_str(),
                        s,
                        t,
                        *adapt_seed,
                        Err(&e.to_string()),
                        None,
                    ),
                }
            })
            .collect()
    });
    rows.extend(adapted);
    Ok(rows)
}

pub fn run_threshold_experiment(exp: &Experiment) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let split = &exp.config.split;
    for &seed in &exp.config.seeds {
        let m = exp.direct_matrix(seed)?;
        let pairs: Vec<(String, String)> = exp
            .universe
            .target_ids()
            .into_iter()
            .flat_map(|t| candidates(exp, &t).into_iter().map(move |s| (s, t.clone())))
            .collect();
        let cells: Vec<Vec<ResultRow>> = exp.install(|| {
            pairs
                .par_iter()
                .map(|(s, t)| {
                    let result = (|| -> Result<Vec<MetricReport>> {
                        let model = m.artifact(s)?.model()?;
                        exp.universe
                            .get(t)?
                            .evaluate(split, &model, &PolicyKind::ALL)
                    })();
                    match result {
                        Ok(reports) => PolicyKind::ALL
                            .iter()
                            .zip(&reports)
                            .map(|(k, r)| {
                                report_row(
                                    "thresholds",
                                    k.as_str(),
                                    s,
                                    t,
                                    seed,
                                    Ok(r),
                                    m.cohort_digest(t),
                                )
                            })
                            .collect(),
                        Err(e) => {
                            let msg = e.to_string();
                            PolicyKind::ALL
                                .iter()
                                .map(|k| {
                                    report_row(
                                        "thresholds",
                                        k.as_str(),
                                        s,
                                        t,
                                        seed,
                                        Err(&msg),
                                        None,
                                    )
                                })
                                .collect()
                        }
                    }
                })
                .collect()
        });
        rows.extend(cells.into_iter().flatten());
    }
    Ok(rows)
}
