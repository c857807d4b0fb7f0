use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FeatureValue, Gender, StudentRecord};
use crate::error::{Error, Result};

/// Inclusive range of admissible cohort years.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.first..=self.last
    }
}

impl Default for YearRange {
    fn default() -> Self {
        Self {
            first: 2013,
            last: 2019,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldKind {
    /// Encoded as `(value - center) / scale`.
    Numeric { center: f64, scale: f64 },
    /// One-hot encoded over `levels`.
    Categorical { levels: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn numeric(name: &str, center: f64, scale: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: FieldKind::Numeric { center, scale },
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: FieldKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    fn width(&self) -> usize {
        match &self.kind {
            FieldKind::Numeric { .. } => 1,
            FieldKind::Categorical { levels } => levels.len(),
        }
    }
}

/// Shared student-level schema. Every institution in a universe uses the same
/// descriptor, which is public and carries no data-derived statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub fields: Vec<FieldSpec>,
    pub cohort_years: YearRange,
    /// Append gender one-hot and URM indicator to the model inputs.
    pub include_sensitive: bool,
}

pub(crate) const RESERVED_COLUMNS: [&str; 4] = ["cohort_year", "gender", "urm", "retained"];

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::Schema("schema has no fields".into()));
        }
        if self.cohort_years.first > self.cohort_years.last {
            return Err(Error::Schema("cohort year range is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.fields {
            if RESERVED_COLUMNS.contains(&f.name.as_str()) {
                return Err(Error::Schema(format!("field `{}` is reserved", f.name)));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate field `{}`", f.name)));
            }
            match &f.kind {
                FieldKind::Numeric { center, scale } => {
                    if !center.is_finite() || !scale.is_finite() || *scale <= 0.0 {
                        return Err(Error::Schema(format!(
                            "field `{}` needs a finite center and positive scale",
                            f.name
                        )));
                    }
                }
                FieldKind::Categorical { levels } => {
                    if levels.is_empty() {
                        return Err(Error::Schema(format!("field `{}` has no levels", f.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Width of the encoded network input.
    pub fn input_dim(&self) -> usize {
        let base: usize = self.fields.iter().map(FieldSpec::width).sum();
        if self.include_sensitive {
            base + Gender::ALL.len() + 1
        } else {
            base
        }
    }

    /// Encode records row by row. Missing values are replaced using `imputation`.
    pub fn encode<'a, I>(&self, records: I, imputation: &Imputation) -> Array2<f64>
    where
        I: IntoIterator<Item = &'a StudentRecord>,
        I::IntoIter: ExactSizeIterator,
    {
        let records = records.into_iter();
        let dim = self.input_dim();
        let mut out = Array2::zeros((records.len(), dim));
        for (r, rec) in records.enumerate() {
            let mut col = 0;
            for (j, field) in self.fields.iter().enumerate() {
                let value = match rec.features[j] {
                    FeatureValue::Missing => imputation.fill[j],
                    v => v,
                };
                match (&field.kind, value) {
                    (FieldKind::Numeric { center, scale }, FeatureValue::Numeric(v)) => {
                        out[[r, col]] = (v - center) / scale;
                    }
                    (FieldKind::Categorical { .. }, FeatureValue::Level(l)) => {
                        out[[r, col + l as usize]] = 1.0;
                    }
                    // Shape mismatches are rejected at ingestion; an all-missing
                    // column leaves zeros.
                    _ => {}
                }
                col += field.width();
            }
            if self.include_sensitive {
                out[[r, col + rec.gender.index()]] = 1.0;
                out[[r, col + Gender::ALL.len()]] = if rec.urm { 1.0 } else { 0.0 };
            }
        }
        out
    }
}

/// Per-field fill values (median for numeric, mode for categorical). Fitted and
/// used only inside the owning silo.
#[derive(Clone, Debug, PartialEq)]
pub struct Imputation {
    fill: Vec<FeatureValue>,
}

impl Imputation {
    pub fn fit<'a, I>(schema: &Schema, records: I) -> Self
    where
        I: IntoIterator<Item = &'a StudentRecord> + Clone,
    {
        let fill = schema
            .fields
            .iter()
            .enumerate()
            .map(|(j, field)| match &field.kind {
                FieldKind::Numeric { center, .. } => {
                    let mut vals: Vec<f64> = records
                        .clone()
                        .into_iter()
                        .filter_map(|r| match r.features[j] {
                            FeatureValue::Numeric(v) => Some(v),
                            _ => None,
                        })
                        .collect();
                    if vals.is_empty() {
                        FeatureValue::Numeric(*center)
                    } else {
                        vals.sort_by(f64::total_cmp);
                        let n = vals.len();
                        let median = if n % 2 == 1 {
                            vals[n / 2]
                        } else {
                            0.5 * (vals[n / 2 - 1] + vals[n / 2])
                        };
                        FeatureValue::Numeric(median)
                    }
                }
                FieldKind::Categorical { levels } => {
                    let mut counts = vec![0usize; levels.len()];
                    for r in records.clone() {
                        if let FeatureValue::Level(l) = r.features[j] {
                            counts[l as usize] += 1;
                        }
                    }
                    // Ties resolve to the first level.
                    let mode = counts
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    FeatureValue::Level(mode as u32)
                }
            })
            .collect();
        Self { fill }
    }

    pub fn fill_values(&self) -> &[FeatureValue] {
        &self.fill
    }
}
