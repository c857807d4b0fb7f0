use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// One result: an evaluation (or aggregate) for a scheme on a
/// (source, target, seed) cell of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub experiment: String,
    pub scheme: String,
    pub source: String,
    pub target: String,
    pub seed: u64,
    pub report: Option<MetricReport>,
    /// Scalar outputs of the cell, e.g. `auc`, `auc_gap`, `delta_auc`.
    pub values: BTreeMap<String, f64>,
    /// Digest of the evaluation cohort, when a model was evaluated.
    pub cohort_digest: Option<String>,
    /// Why the cell has no report (failure or skip).
    pub note: Option<String>,
}

pub type RowKey = (String, String, String, String, u64);

impl ResultRow {
    pub fn new(experiment: &str, scheme: &str, source: &str, target: &str, seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            scheme: scheme.to_string(),
            source: source.to_string(),
            target: target.to_string(),
            seed,
            report: None,
            values: BTreeMap::new(),
            cohort_digest: None,
            note: None,
        }
    }

    pub fn key(&self) -> RowKey {
        (
            self.experiment.clone(),
            self.scheme.clone(),
            self.source.clone(),
            self.target.clone(),
            self.seed,
        )
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

/// Append-only table of result rows, optionally backed by a JSON-lines file.
#[derive(Debug, Default)]
pub struct ResultsStore {
    path: Option<PathBuf>,
    rows: Vec<ResultRow>,
    keys: BTreeSet<RowKey>,
}

impl ResultsStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a JSON-lines store, loading existing rows.
    pub fn open(path: &Path) -> Result<Self> {
        let mut store = Self {
            path: Some(path.to_path_buf()),
            ..Self::default()
        };
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: ResultRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    row: i + 1,
                    message: e.to_string(),
                })?;
                if !store.keys.insert(row.key()) {
                    return Err(Error::DuplicateRow(format!("{:?}", row.key())));
                }
                store.rows.push(row);
            }
        }
        Ok(store)
    }

    /// Append rows atomically with respect to key checks: either every row
    /// is new and all are written, or nothing is.
    pub fn append(&mut self, rows: Vec<ResultRow>) -> Result<()> {
        let mut fresh = BTreeSet::new();
        for r in &rows {
            let k = r.key();
            if self.keys.contains(&k) || !fresh.insert(k.clone()) {
                return Err(Error::DuplicateRow(format!("{k:?}")));
            }
        }
        if let Some(path) = &self.path {
            let mut buf = Vec::new();
            for r in &rows {
                serde_json::to_writer(&mut buf, r)?;
                buf.push(b'\n');
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(&buf).map_err(|e| Error::io(path, e))?;
            f.flush().map_err(|e| Error::io(path, e))?;
        }
        self.keys.extend(fresh);
        self.rows.extend(rows);
        Ok(())
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn rows_for<'a>(&'a self, experiment: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.experiment == experiment)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
