//! The privacy boundary.
//!
//! An [`InstitutionSilo`] owns its student records. Nothing outside this crate
//! can read them: public operations return parameters, metric reports or
//! aggregate counts. Inside the crate, record access goes through
//! [`InstitutionSilo::local`], which hands out an encoded view of one split and
//! is only called by training, adaptation and evaluation code that runs
//! "inside" the silo.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::data::{
    load_contexts_csv, load_students_csv, split_cohorts, write_contexts_csv, write_students_csv,
    CohortSplit, ContextRow, ContextualProfile, FeatureValue, FieldKind, GroupKey, Imputation,
    InstitutionKind, Schema, StudentRecord,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport, ScoredPredictions};
use crate::network::{Loss, Mode, ModelParams};
use crate::similarity::ContextPopulation;
use crate::thresholds::{
    default_policy, group_optimal_policy, overall_optimal_policy, HistoricalRates, PolicyKind,
};

#[derive(Clone, PartialEq)]
pub struct InstitutionSilo {
    id: String,
    kind: InstitutionKind,
    context: ContextualProfile,
    schema: Arc<Schema>,
    records: Vec<StudentRecord>,
}

// Debug output omits the records.
impl fmt::Debug for InstitutionSilo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InstitutionSilo")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("records", &self.records.len())
            .finish_non_exhaustive()
    }
}

/// One cohort side of a split, encoded for the network.
#[derive(Clone, Debug)]
pub(crate) struct EncodedCohort {
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub groups: Vec<GroupKey>,
}

impl EncodedCohort {
    pub fn len(&self) -> usize {
        self.y.len()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LocalData {
    pub train: EncodedCohort,
    pub test: EncodedCohort,
}

/// Which cohort side an aggregate is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cohort {
    Train,
    Test,
}

impl InstitutionSilo {
    pub fn new(
        id: String,
        kind: InstitutionKind,
        context: ContextualProfile,
        schema: Arc<Schema>,
        records: Vec<StudentRecord>,
    ) -> Result<Self> {
        schema.validate()?;
        if id.is_empty() {
            return Err(Error::Config("institution id must be nonempty".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != schema.len() {
                return Err(Error::Validation {
                    row: i + 1,
                    message: format!(
                        "record has {} features, schema has {}",
                        r.features.len(),
                        schema.len()
                    ),
                });
            }
            if !schema.cohort_years.contains(r.cohort_year) {
                return Err(Error::Validation {
                    row: i + 1,
                    message: format!("cohort year {} outside the configured range", r.cohort_year),
                });
            }
            for (f, v) in schema.fields.iter().zip(&r.features) {
                let ok = match (&f.kind, v) {
                    (_, FeatureValue::Missing) => true,
                    (FieldKind::Numeric { .. }, FeatureValue::Numeric(x)) => x.is_finite(),
                    (FieldKind::Categorical { levels }, FeatureValue::Level(l)) => {
                        (*l as usize) < levels.len()
                    }
                    _ => false,
                };
                if !ok {
                    return Err(Error::Validation {
                        row: i + 1,
                        message: format!("invalid value for field `{}`", f.name),
                    });
                }
            }
        }
        Ok(Self {
            id,
            kind,
            context,
            schema,
            records,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> InstitutionKind {
        self.kind
    }

    pub fn context(&self) -> &ContextualProfile {
        &self.context
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn cohort_counts(&self) -> BTreeMap<i32, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.cohort_year).or_insert(0) += 1;
        }
        m
    }

    /// Encoded train and test cohorts. Imputation statistics are fitted on the
    /// training cohorts and never leave this call.
    pub(crate) fn local(&self, split: &CohortSplit) -> Result<LocalData> {
        let part = split_cohorts(&self.records, split)?;
        let train_recs: Vec<&StudentRecord> =
            part.train.iter().map(|&i| &self.records[i]).collect();
        let test_recs: Vec<&StudentRecord> = part.test.iter().map(|&i| &self.records[i]).collect();
        let imputation = Imputation::fit(&self.schema, train_recs.iter().copied());
        let encode = |recs: &[&StudentRecord]| EncodedCohort {
            x: self.schema.encode(recs.iter().copied(), &imputation),
            y: recs.iter().map(|r| u8::from(r.retained)).collect(),
            groups: recs.iter().map(|r| r.group()).collect(),
        };
        Ok(LocalData {
            train: encode(&train_recs),
            test: encode(&test_recs),
        })
    }

    /// Retention rates of the training cohorts, overall and per group.
    pub fn historical_rates(&self, split: &CohortSplit) -> Result<HistoricalRates> {
        let part = split_cohorts(&self.records, split)?;
        let mut counts: BTreeMap<GroupKey, (usize, usize)> = BTreeMap::new();
        let mut kept = 0;
        for &i in &part.train {
            let r = &self.records[i];
            let e = counts.entry(r.group()).or_insert((0, 0));
            e.1 += 1;
            if r.retained {
                e.0 += 1;
                kept += 1;
            }
        }
        Ok(HistoricalRates {
            overall: kept as f64 / part.train.len() as f64,
            groups: counts
                .into_iter()
                .map(|(g, (k, n))| (g, k as f64 / n as f64))
                .collect(),
        })
    }

    /// Digest of the evaluation cohort's row positions; equal digests mean
    /// the same students were evaluated.
    pub fn test_cohort_digest(&self, split: &CohortSplit) -> Result<String> {
        let part = split_cohorts(&self.records, split)?;
        let mut h = Sha256::new();
        h.update(self.id.as_bytes());
        for i in &part.test {
            h.update((*i as u64).to_le_bytes());
        }
        Ok(format!("{:x}", h.finalize()))
    }

    /// Evaluate `params` on the test cohort under each requested policy. The
    /// scores are computed once and shared by all policies.
    pub fn evaluate(
        &self,
        split: &CohortSplit,
        params: &ModelParams,
        policies: &[PolicyKind],
    ) -> Result<Vec<MetricReport>> {
        let data = self.local(split)?;
        let scores = params.predict_positive(data.test.x.view())?;
        let preds = ScoredPredictions::new(
            scores.clone(),
            data.test.y.clone(),
            data.test.groups.clone(),
        )?;
        let mut history = None;
        policies
            .iter()
            .map(|kind| {
                let policy = match kind {
                    PolicyKind::Default => default_policy(),
                    PolicyKind::OverallOptimal => {
                        let h = history.get_or_insert(self.historical_rates(split)?);
                        overall_optimal_policy(&scores, h.overall)?
                    }
                    PolicyKind::GroupOptimal => {
                        let h = history.get_or_insert(self.historical_rates(split)?);
                        group_optimal_policy(&scores, &data.test.groups, h)?
                    }
                };
                evaluate(&preds, &policy)
            })
            .collect()
    }

    /// Mean eval-mode cross-entropy of `params` on one cohort side.
    pub fn mean_loss(
        &self,
        split: &CohortSplit,
        params: &ModelParams,
        cohort: Cohort,
    ) -> Result<f64> {
        let data = self.local(split)?;
        let c = match cohort {
            Cohort::Train => &data.train,
            Cohort::Test => &data.test,
        };
        let (_, cache) = params.forward(c.x.view(), Mode::Eval)?;
        let (loss, _) = params.backward(&cache, Some(&c.y), &Loss::cross_entropy())?;
        Ok(loss)
    }

    /// Write this silo's records to its own storage location.
    pub fn persist_records(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_students_csv(std::io::BufWriter::new(file), &self.schema, &self.records)
    }
}

/// All institutions sharing one schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Universe {
    schema: Arc<Schema>,
    silos: Vec<InstitutionSilo>,
}

impl Universe {
    pub fn new(schema: Arc<Schema>, silos: Vec<InstitutionSilo>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for s in &silos {
            if !ids.insert(s.id.clone()) {
                return Err(Error::Config(format!(
                    "duplicate institution id `{}`",
                    s.id
                )));
            }
            if *s.schema != *schema {
                return Err(Error::Schema(format!(
                    "silo `{}` uses a different schema",
                    s.id
                )));
            }
        }
        Ok(Self { schema, silos })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn silos(&self) -> &[InstitutionSilo] {
        &self.silos
    }

    pub fn get(&self, id: &str) -> Result<&InstitutionSilo> {
        self.silos
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownInstitution(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.silos.iter().map(|s| s.id.clone()).collect()
    }

    /// Community colleges, the only institutions ever used as targets.
    pub fn target_ids(&self) -> Vec<String> {
        self.silos
            .iter()
            .filter(|s| s.kind == InstitutionKind::CommunityCollege)
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn context_population(&self) -> Result<ContextPopulation> {
        ContextPopulation::new(self.silos.iter().map(|s| (s.id.clone(), s.context.clone())))
    }

    /// Layout: `schema.json`, `contexts.csv`, `students/<id>.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let students = dir.join("students");
        std::fs::create_dir_all(&students).map_err(|e| Error::io(&students, e))?;
        let schema_path = dir.join("schema.json");
        std::fs::write(&schema_path, serde_json::to_string_pretty(&*self.schema)?)
            .map_err(|e| Error::io(&schema_path, e))?;
        let rows: Vec<ContextRow> = self
            .silos
            .iter()
            .map(|s| ContextRow {
                id: s.id.clone(),
                kind: s.kind,
                profile: s.context.clone(),
            })
            .collect();
        let ctx_path = dir.join("contexts.csv");
        let f = std::fs::File::create(&ctx_path).map_err(|e| Error::io(&ctx_path, e))?;
        write_contexts_csv(std::io::BufWriter::new(f), &rows)?;
        for s in &self.silos {
            s.persist_records(&students.join(format!("{}.csv", s.id)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let schema_path = dir.join("schema.json");
        let text = std::fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        let schema = Arc::new(schema);
        let rows = load_contexts_csv(&dir.join("contexts.csv"))?;
        let mut silos = Vec::with_capacity(rows.len());
        for row in rows {
            let table = load_students_csv(
                &dir.join("students").join(format!("{}.csv", row.id)),
                &schema,
            )?;
            silos.push(InstitutionSilo::new(
                row.id,
                row.kind,
                row.profile,
                schema.clone(),
                table.records,
            )?);
        }
        Universe::new(schema, silos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_universe, GeneratorConfig};

    fn small() -> Universe {
        let mut c = GeneratorConfig::default();
        c.universities = 1;
        c.community_colleges = 2;
        c.records_per_institution = 300;
        generate_universe(&c, 5).unwrap()
    }

    #[test]
    fn save_and_load_round_trip() {
        let u = small();
        let dir = tempfile::tempdir().unwrap();
        u.save(dir.path()).unwrap();
        let back = Universe::load(dir.path()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn local_view_partitions_by_cohort() {
        let u = small();
        let s = &u.silos()[1];
        let split = CohortSplit::default();
        let d = s.local(&split).unwrap();
        let counts = s.cohort_counts();
        assert_eq!(d.test.len(), counts[&2019]);
        assert_eq!(d.train.len() + d.test.len(), s.record_count());
        assert_eq!(d.train.x.ncols(), s.schema().input_dim());
    }

    #[test]
    fn historical_rates_are_fractions() {
        let u = small();
        let h = u.silos()[0]
            .historical_rates(&CohortSplit::default())
            .unwrap();
        assert!(h.overall > 0.0 && h.overall < 1.0);
        assert!(h.groups.values().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn debug_output_hides_records() {
        let u = small();
        let text = format!("{:?}", u.silos()[0]);
        assert!(!text.contains("cohort_year"));
        assert!(text.contains("records: 300"));
    }

    #[test]
    fn targets_are_community_colleges() {
        let u = small();
        assert_eq!(u.target_ids(), vec!["C01".to_string(), "C02".to_string()]);
    }
}
