//! CSV ingestion and export for student files and institution context files.
//!
//! Student files carry one column per schema field plus the reserved columns
//! `cohort_year`, `gender`, `urm` and `retained`. Empty feature cells are
//! missing values; an empty label cell rejects the row.
//!
//! Context files carry `id`, `kind` and one column per attribute named
//! `<category>.<attribute>`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::schema::RESERVED_COLUMNS;
use super::{
    AttrValue, Category, ContextAttribute, ContextualProfile, FeatureValue, FieldKind, Gender,
    InstitutionKind, Schema, StudentRecord,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct StudentTable {
    pub records: Vec<StudentRecord>,
    /// 1-based data row numbers rejected for a missing label.
    pub rejected_missing_label: Vec<usize>,
}

pub fn load_students_csv(path: &Path, schema: &Schema) -> Result<StudentTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_students_csv(file, schema)
}

pub fn parse_students_csv<R: Read>(reader: R, schema: &Schema) -> Result<StudentTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col_of: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if col_of.insert(h, i).is_some() {
            return Err(Error::Schema(format!("duplicate column `{h}`")));
        }
    }
    for name in RESERVED_COLUMNS
        .iter()
        .copied()
        .chain(schema.fields.iter().map(|f| f.name.as_str()))
    {
        if !col_of.contains_key(name) {
            return Err(Error::Schema(format!("missing column `{name}`")));
        }
    }
    if headers.len() != schema.len() + RESERVED_COLUMNS.len() {
        let unknown: Vec<&str> = headers
            .iter()
            .filter(|h| {
                !RESERVED_COLUMNS.contains(h) && !schema.fields.iter().any(|f| f.name == *h)
            })
            .collect();
        return Err(Error::Schema(format!("unknown columns {unknown:?}")));
    }

    let field_cols: Vec<usize> = schema
        .fields
        .iter()
        .map(|f| col_of[f.name.as_str()])
        .collect();
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        let cell = |name: &str| row.get(col_of[name]).unwrap_or("").trim();

        let label = cell("retained");
        if label.is_empty() {
            rejected.push(row_no);
            continue;
        }
        let retained = parse_flag(label).ok_or_else(|| Error::Parse {
            row: row_no,
            message: format!("bad label `{label}`"),
        })?;

        let year_raw = cell("cohort_year");
        let cohort_year: i32 = year_raw.parse().map_err(|_| Error::Parse {
            row: row_no,
            message: format!("bad cohort_year `{year_raw}`"),
        })?;
        if !schema.cohort_years.contains(cohort_year) {
            return Err(Error::Validation {
                row: row_no,
                message: format!(
                    "cohort_year {cohort_year} outside {}..={}",
                    schema.cohort_years.first, schema.cohort_years.last
                ),
            });
        }
        let gender: Gender = cell("gender").parse()?;
        let urm_raw = cell("urm");
        let urm = parse_flag(urm_raw).ok_or_else(|| Error::Parse {
            row: row_no,
            message: format!("bad urm flag `{urm_raw}`"),
        })?;

        let mut features = Vec::with_capacity(schema.len());
        for (field, &c) in schema.fields.iter().zip(&field_cols) {
            let raw = row.get(c).unwrap_or("").trim();
            if raw.is_empty() {
                features.push(FeatureValue::Missing);
                continue;
            }
            let v = match &field.kind {
                FieldKind::Numeric { .. } => {
                    let v: f64 = raw.parse().map_err(|_| Error::Parse {
                        row: row_no,
                        message: format!("field `{}`: bad number `{raw}`", field.name),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: row_no,
                            message: format!("field `{}`: non-finite value", field.name),
                        });
                    }
                    FeatureValue::Numeric(v)
                }
                FieldKind::Categorical { levels } => {
                    let l = levels.iter().position(|l| l == raw).ok_or_else(|| {
                        Error::Schema(format!(
                            "row {row_no}: unknown level `{raw}` for field `{}`",
                            field.name
                        ))
                    })?;
                    FeatureValue::Level(l as u32)
                }
            };
            features.push(v);
        }
        records.push(StudentRecord {
            cohort_year,
            features,
            gender,
            urm,
            retained,
        });
    }
    Ok(StudentTable {
        records,
        rejected_missing_label: rejected,
    })
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

pub fn write_students_csv<W: Write>(
    writer: W,
    schema: &Schema,
    records: &[StudentRecord],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.fields.iter().map(|f| f.name.as_str()).collect();
    header.extend(RESERVED_COLUMNS);
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = schema
            .fields
            .iter()
            .zip(&r.features)
            .map(|(f, v)| match (v, &f.kind) {
                (FeatureValue::Numeric(x), _) => x.to_string(),
                (FeatureValue::Level(l), FieldKind::Categorical { levels }) => {
                    levels[*l as usize].clone()
                }
                _ => String::new(),
            })
            .collect();
        row.push(r.cohort_year.to_string());
        row.push(r.gender.as_str().to_string());
        row.push(u8::from(r.urm).to_string());
        row.push(u8::from(r.retained).to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextRow {
    pub id: String,
    pub kind: InstitutionKind,
    pub profile: ContextualProfile,
}

pub fn load_contexts_csv(path: &Path) -> Result<Vec<ContextRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_contexts_csv(file)
}

pub fn parse_contexts_csv<R: Read>(reader: R) -> Result<Vec<ContextRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("id") || headers.get(1) != Some("kind") {
        return Err(Error::Schema(
            "context file must start with `id,kind` columns".into(),
        ));
    }
    let mut columns: Vec<(Category, String)> = Vec::new();
    for h in headers.iter().skip(2) {
        let (cat, name) = h.split_once('.').ok_or_else(|| {
            Error::Schema(format!("context column `{h}` lacks a category prefix"))
        })?;
        if name.is_empty() {
            return Err(Error::Schema(format!(
                "context column `{h}` has no attribute name"
            )));
        }
        columns.push((cat.parse()?, name.to_string()));
    }

    let raw_rows: Vec<csv::StringRecord> = rdr
        .records()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                row: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;

    // A column is numeric when every non-empty cell parses as a finite number.
    let numeric: Vec<bool> = (0..columns.len())
        .map(|j| {
            raw_rows.iter().all(|r| {
                let v = r.get(j + 2).unwrap_or("").trim();
                v.is_empty() || v.parse::<f64>().map(f64::is_finite).unwrap_or(false)
            })
        })
        .collect();

    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(raw_rows.len());
    for (i, r) in raw_rows.iter().enumerate() {
        let id = r.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row: i + 1,
                message: "empty institution id".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Schema(format!("duplicate institution id `{id}`")));
        }
        let kind: InstitutionKind = r.get(1).unwrap_or("").parse()?;
        let mut cats: BTreeMap<Category, Vec<ContextAttribute>> =
            Category::ALL.iter().map(|c| (*c, Vec::new())).collect();
        for (j, (cat, name)) in columns.iter().enumerate() {
            let v = r.get(j + 2).unwrap_or("").trim();
            let value = if v.is_empty() {
                AttrValue::Missing
            } else if numeric[j] {
                AttrValue::Numeric(v.parse().expect("checked numeric"))
            } else {
                AttrValue::Categorical(v.to_string())
            };
            cats.get_mut(cat).unwrap().push(ContextAttribute {
                name: name.clone(),
                value,
            });
        }
        out.push(ContextRow {
            id,
            kind,
            profile: ContextualProfile::new(cats)?,
        });
    }
    Ok(out)
}

/// Rows must share attribute names and order; the first row defines the header.
pub fn write_contexts_csv<W: Write>(writer: W, rows: &[ContextRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = rows.first() else {
        w.write_record(["id", "kind"])?;
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        return Ok(());
    };
    let mut header = vec!["id".to_string(), "kind".to_string()];
    for c in Category::ALL {
        for a in first.profile.category(c) {
            header.push(format!("{c}.{}", a.name));
        }
    }
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.id.clone(), row.kind.as_str().to_string()];
        for c in Category::ALL {
            for a in row.profile.category(c) {
                rec.push(match &a.value {
                    AttrValue::Numeric(v) => v.to_string(),
                    AttrValue::Categorical(s) => s.clone(),
                    AttrValue::Missing => String::new(),
                });
            }
        }
        if rec.len() != header.len() {
            return Err(Error::Schema(format!(
                "institution `{}` has a different attribute layout",
                row.id
            )));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
