//! Contextual similarity between institutions and the regressions that tie it
//! to transfer outcomes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{AttrValue, Category, ContextualProfile, PerCategory};
use crate::error::{Error, Result};
use crate::stats::t_two_sided_p;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AttributeKind {
    /// Population range (max − min) of a numeric attribute.
    Numeric {
        range: f64,
    },
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDescriptor {
    pub name: String,
    pub kind: AttributeKind,
}

/// Mean per-attribute similarity over attributes present in both vectors.
pub fn gower_similarity(
    a: &[AttrValue],
    b: &[AttrValue],
    descriptors: &[AttributeDescriptor],
) -> Result<f64> {
    if a.len() != descriptors.len() || b.len() != descriptors.len() {
        return Err(Error::Shape(
            "attribute vectors do not match their descriptors".into(),
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((x, y), d) in a.iter().zip(b).zip(descriptors) {
        let s = match (x, y, &d.kind) {
            (AttrValue::Missing, _, _) | (_, AttrValue::Missing, _) => continue,
            (AttrValue::Numeric(u), AttrValue::Numeric(v), AttributeKind::Numeric { range }) => {
                if *range > 0.0 {
                    (1.0 - (u - v).abs() / range).clamp(0.0, 1.0)
                } else {
                    1.0
                }
            }
            (AttrValue::Categorical(u), AttrValue::Categorical(v), AttributeKind::Categorical) => {
                if u == v {
                    1.0
                } else {
                    0.0
                }
            }
            _ => {
                return Err(Error::Schema(format!(
                    "attribute `{}` mixes numeric and categorical values",
                    d.name
                )))
            }
        };
        total += s;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("no comparable attributes".into()));
    }
    Ok(total / count as f64)
}

/// Per-category similarity scores in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector(pub PerCategory<f64>);

impl SimilarityVector {
    pub fn get(&self, c: Category) -> f64 {
        *self.0.get(c)
    }
}

/// Public contextual profiles of every institution, with population-wide
/// attribute ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextPopulation {
    profiles: BTreeMap<String, ContextualProfile>,
    descriptors: PerCategory<Vec<AttributeDescriptor>>,
}

fn values_for(
    profile: &ContextualProfile,
    c: Category,
    descriptors: &[AttributeDescriptor],
) -> Vec<AttrValue> {
    descriptors
        .iter()
        .map(|d| {
            profile
                .attribute(c, &d.name)
                .cloned()
                .unwrap_or(AttrValue::Missing)
        })
        .collect()
}

impl ContextPopulation {
    pub fn new<I>(profiles: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, ContextualProfile)>,
    {
        let profiles: BTreeMap<String, ContextualProfile> = profiles.into_iter().collect();
        let mut descriptors = PerCategory::from_fn(|_| Vec::new());
        for c in Category::ALL {
            // Attribute order follows first appearance in id order.
            let mut names: Vec<String> = Vec::new();
            for p in profiles.values() {
                for a in p.category(c) {
                    if !names.contains(&a.name) {
                        names.push(a.name.clone());
                    }
                }
            }
            let out = descriptors.get_mut(c);
            for name in names {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut numeric = false;
                let mut categorical = false;
                for p in profiles.values() {
                    match p.attribute(c, &name) {
                        Some(AttrValue::Numeric(v)) => {
                            numeric = true;
                            lo = lo.min(*v);
                            hi = hi.max(*v);
                        }
                        Some(AttrValue::Categorical(_)) => categorical = true,
                        _ => {}
                    }
                }
                let kind = match (numeric, categorical) {
                    (true, false) => AttributeKind::Numeric { range: hi - lo },
                    (false, true) => AttributeKind::Categorical,
                    (false, false) => continue,
                    (true, true) => {
                        return Err(Error::Schema(format!(
                            "context attribute `{c}.{name}` is numeric for some institutions and categorical for others"
                        )))
                    }
                };
                out.push(AttributeDescriptor { name, kind });
            }
        }
        Ok(Self {
            profiles,
            descriptors,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    pub fn descriptors(&self, c: Category) -> &[AttributeDescriptor] {
        self.descriptors.get(c)
    }

    fn profile(&self, id: &str) -> Result<&ContextualProfile> {
        self.profiles
            .get(id)
            .ok_or_else(|| Error::UnknownInstitution(id.to_string()))
    }

    /// Gower similarity per category; symmetric in the pair.
    pub fn category_similarity(&self, source: &str, target: &str) -> Result<SimilarityVector> {
        let a = self.profile(source)?;
        let b = self.profile(target)?;
        let mut out = PerCategory::from_fn(|_| 0.0);
        for c in Category::ALL {
            let d = self.descriptors.get(c);
            *out.get_mut(c) = gower_similarity(&values_for(a, c, d), &values_for(b, c, d), d)?;
        }
        Ok(SimilarityVector(out))
    }

    /// Similarity vectors for every ordered pair of distinct institutions.
    pub fn matrix(&self) -> Result<SimilarityMatrix> {
        let mut pairs = BTreeMap::new();
        for a in self.profiles.keys() {
            for b in self.profiles.keys() {
                if a < b {
                    let v = self.category_similarity(a, b)?;
                    pairs.insert((b.clone(), a.clone()), v.clone());
                    pairs.insert((a.clone(), b.clone()), v);
                }
            }
        }
        Ok(SimilarityMatrix { pairs })
    }
}

pub fn category_similarity(
    population: &ContextPopulation,
    source: &str,
    target: &str,
) -> Result<SimilarityVector> {
    population.category_similarity(source, target)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarityMatrix {
    pairs: BTreeMap<(String, String), SimilarityVector>,
}

impl SimilarityMatrix {
    pub fn get(&self, a: &str, b: &str) -> Result<SimilarityVector> {
        if a == b {
            return Ok(SimilarityVector(PerCategory::from_fn(|_| 1.0)));
        }
        self.pairs
            .get(&(a.to_string(), b.to_string()))
            .cloned()
            .ok_or_else(|| Error::UnknownInstitution(format!("{a} / {b}")))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(String, String), &SimilarityVector)> {
        self.pairs.iter()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Column names; the first is the intercept.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    pub n: usize,
    pub df: usize,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.coefficients[i], self.p_values[i]))
    }
}

/// Ordinary least squares. `x` must already contain the intercept column.
pub fn ols_fit(y: &[f64], x: &DMatrix<f64>, names: &[String]) -> Result<RegressionFit> {
    let (n, k) = x.shape();
    if y.len() != n || names.len() != k {
        return Err(Error::Shape("response, design and names disagree".into()));
    }
    if n <= k {
        return Err(Error::SingularDesign {
            columns: vec![format!("need more than {k} observations, got {n}")],
        });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let bad: Vec<String> = (0..k)
        .filter(|&i| !(r[(i, i)].abs() > 1e-10 * scale.max(1e-300)))
        .map(|i| names[i].clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::SingularDesign { columns: bad });
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign {
            columns: names.to_vec(),
        })?;
    let fitted = x * &beta;
    let resid = &yv - &fitted;
    let rss = resid.norm_squared();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let df = n - k;
    let sigma2 = rss / df as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::SingularDesign {
            columns: names.to_vec(),
        })?;
    // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ; only the diagonal is needed.
    let se: Vec<f64> = (0..k)
        .map(|i| (sigma2 * r_inv.row(i).norm_squared()).sqrt())
        .collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let t_stats: Vec<f64> = coefficients.iter().zip(&se).map(|(b, s)| b / s).collect();
    let p_values = t_stats
        .iter()
        .map(|t| t_two_sided_p(*t, df as f64))
        .collect();
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RegressionFit {
        names: names.to_vec(),
        coefficients,
        std_errors: se,
        t_stats,
        p_values,
        r_squared,
        residuals: resid.iter().copied().collect(),
        n,
        df,
    })
}

/// Regress `y` on the six category similarities plus an intercept.
pub fn regress_on_similarity(y: &[f64], sims: &[SimilarityVector]) -> Result<RegressionFit> {
    if y.len() != sims.len() {
        return Err(Error::Shape(
            "one similarity vector per observation needed".into(),
        ));
    }
    let k = 1 + Category::ALL.len();
    let x = DMatrix::from_fn(y.len(), k, |i, j| {
        if j == 0 {
            1.0
        } else {
            sims[i].get(Category::ALL[j - 1])
        }
    });
    let mut names = vec!["intercept".to_string()];
    names.extend(Category::ALL.iter().map(|c| c.as_str().to_string()));
    ols_fit(y, &x, &names)
}

/// Normalised non-negative weights per included category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub BTreeMap<Category, f64>);

/// Categories used for overall similarity by default: everything but cost.
pub fn default_included() -> Vec<Category> {
    Category::ALL
        .into_iter()
        .filter(|c| *c != Category::Cost)
        .collect()
}

/// Raw weight |β| / (1 + p) per included category, normalised to sum to one.
pub fn cs_weights(fit: &RegressionFit, included: &[Category]) -> Result<WeightVector> {
    let mut raw = BTreeMap::new();
    for c in included {
        let (b, p) = fit
            .coefficient(c.as_str())
            .ok_or_else(|| Error::Shape(format!("fit has no coefficient for `{c}`")))?;
        raw.insert(*c, b.abs() / (1.0 + p));
    }
    let total: f64 = raw.values().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateWeights("all raw weights are zero".into()));
    }
    Ok(WeightVector(
        raw.into_iter().map(|(c, w)| (c, w / total)).collect(),
    ))
}

pub fn overall_similarity(sim: &SimilarityVector, w: &WeightVector) -> Result<f64> {
    if w.0.is_empty() {
        return Err(Error::Shape("empty weight vector".into()));
    }
    Ok(w.0
        .iter()
        .map(|(c, wi)| wi * sim.get(*c))
        .sum::<f64>()
        .clamp(0.0, 1.0))
}

/// Most similar candidate; ties go to the lexicographically smaller id.
pub fn select_msti(
    target: &str,
    candidates: &[String],
    matrix: &SimilarityMatrix,
    w: &WeightVector,
) -> Result<String> {
    let mut best: Option<(f64, &String)> = None;
    for c in candidates.iter().filter(|c| c.as_str() != target) {
        let s = overall_similarity(&matrix.get(c, target)?, w)?;
        best = match best {
            Some((bs, bid)) if bs > s || (bs == s && bid <= c) => Some((bs, bid)),
            _ => Some((s, c)),
        };
    }
    best.map(|(_, id)| id.clone())
        .ok_or_else(|| Error::EmptyPool(format!("no candidate sources for `{target}`")))
}

/// Whose demographics the partner should differ from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemographicReference {
    #[default]
    Msti,
    Target,
}

/// Among candidates (other than the MSTI and the target) whose overall
/// similarity to the target exceeds `floor`, the one least demographically
/// similar to the reference institution.
pub fn select_sequential_partner(
    target: &str,
    msti: &str,
    candidates: &[String],
    matrix: &SimilarityMatrix,
    w: &WeightVector,
    floor: f64,
    reference: DemographicReference,
) -> Result<Option<String>> {
    let reference_id = match reference {
        DemographicReference::Msti => msti,
        DemographicReference::Target => target,
    };
    let mut best: Option<(f64, &String)> = None;
    for c in candidates
        .iter()
        .filter(|c| c.as_str() != msti && c.as_str() != target)
    {
        if overall_similarity(&matrix.get(c, target)?, w)? <= floor {
            continue;
        }
        let d = matrix.get(c, reference_id)?.get(Category::Demographic);
        best = match best {
            Some((bd, bid)) if bd < d || (bd == d && bid <= c) => Some((bd, bid)),
            _ => Some((d, c)),
        };
    }
    Ok(best.map(|(_, id)| id.clone()))
}

pub const DEFAULT_PARTNER_FLOOR: f64 = 0.6;
