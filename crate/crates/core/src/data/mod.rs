//! Student records, institutional context and everything needed to get data
//! into (and keep it inside) a silo.

mod context;
mod csv_io;
mod generator;
mod groups;
mod schema;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use context::{AttrValue, Category, ContextAttribute, ContextualProfile, PerCategory};
pub use csv_io::{
    load_contexts_csv, load_students_csv, parse_contexts_csv, parse_students_csv,
    write_contexts_csv, write_students_csv, ContextRow, StudentTable,
};
pub use generator::{
    generate_universe, generator_schema, CategoricalEffect, DemographicModel, GeneratorConfig,
    GroupOffsets, OutcomeModel, UrmInteraction,
};
pub use groups::{
    partition_groups, partition_keys, GroupInfo, GroupPartition, DEFAULT_GROUP_FLOOR,
};
pub use schema::{FieldKind, FieldSpec, Imputation, Schema, YearRange};
pub use split::{split_cohorts, CohortPartition, CohortSplit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
    /// Other or unknown.
    Other,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Female, Gender::Male, Gender::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
            Gender::Other => 2,
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            "other" | "unknown" | "other/unknown" => Ok(Gender::Other),
            other => Err(Error::Schema(format!("unknown gender level `{other}`"))),
        }
    }
}

/// Intersectional group: gender x URM status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub gender: Gender,
    pub urm: bool,
}

impl GroupKey {
    pub fn new(gender: Gender, urm: bool) -> Self {
        Self { gender, urm }
    }

    pub fn all() -> impl Iterator<Item = GroupKey> {
        Gender::ALL
            .into_iter()
            .flat_map(|g| [false, true].into_iter().map(move |u| GroupKey::new(g, u)))
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let urm = if self.urm { "urm" } else { "non_urm" };
        write!(f, "{}|{}", self.gender.as_str(), urm)
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (g, u) = s
            .split_once('|')
            .ok_or_else(|| Error::Schema(format!("malformed group key `{s}`")))?;
        let urm = match u {
            "urm" => true,
            "non_urm" => false,
            other => return Err(Error::Schema(format!("malformed URM flag `{other}`"))),
        };
        Ok(GroupKey::new(g.parse()?, urm))
    }
}

// Group keys are used as JSON object keys, so they serialise as strings.
impl Serialize for GroupKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Numeric(f64),
    /// Index into the field's categorical levels.
    Level(u32),
    Missing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub cohort_year: i32,
    pub features: Vec<FeatureValue>,
    pub gender: Gender,
    pub urm: bool,
    /// Re-enrolled at the same institution the following fall.
    pub retained: bool,
}

impl StudentRecord {
    pub fn group(&self) -> GroupKey {
        GroupKey::new(self.gender, self.urm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstitutionKind {
    University,
    CommunityCollege,
}

impl InstitutionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstitutionKind::University => "university",
            InstitutionKind::CommunityCollege => "community_college",
        }
    }
}

impl FromStr for InstitutionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "university" => Ok(InstitutionKind::University),
            "community_college" => Ok(InstitutionKind::CommunityCollege),
            other => Err(Error::Schema(format!("unknown institution kind `{other}`"))),
        }
    }
}
