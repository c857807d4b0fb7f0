use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::StudentRecord;
use crate::error::{Error, Result};

/// Which cohorts train and which cohort is held out for testing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train_years: BTreeSet<i32>,
    pub test_year: i32,
}

impl Default for CohortSplit {
    fn default() -> Self {
        Self {
            train_years: (2013..=2018).collect(),
            test_year: 2019,
        }
    }
}

impl CohortSplit {
    pub fn validate(&self) -> Result<()> {
        if self.train_years.is_empty() {
            return Err(Error::Config("split has no training years".into()));
        }
        if self.train_years.contains(&self.test_year) {
            return Err(Error::Config(format!(
                "test year {} is also a training year",
                self.test_year
            )));
        }
        Ok(())
    }
}

/// Row indices of each side of a split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CohortPartition {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Records whose cohort is in neither set.
    pub dropped: usize,
}

pub fn split_cohorts(records: &[StudentRecord], split: &CohortSplit) -> Result<CohortPartition> {
    split.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut dropped = 0;
    for (i, r) in records.iter().enumerate() {
        if r.cohort_year == split.test_year {
            test.push(i);
        } else if split.train_years.contains(&r.cohort_year) {
            train.push(i);
        } else {
            dropped += 1;
        }
    }
    if train.is_empty() {
        return Err(Error::DegenerateSplit("training partition is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::DegenerateSplit("test partition is empty".into()));
    }
    Ok(CohortPartition {
        train,
        test,
        dropped,
    })
}
