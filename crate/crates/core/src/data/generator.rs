//! Synthetic universes of institutions with controllable context shift.
//!
//! Each institution gets one latent coordinate per context category,
//! `z = shift * (u + university_offset)` with `u ~ U(-1, 1)`. The public
//! profile is a noisy read-out of those latents, while the student feature
//! distribution, demographic mix and the retention-generating logistic model
//! are smooth functions of the same latents. Contextual similarity is
//! therefore causally linked to how well a model transfers.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    Category, ContextAttribute, ContextualProfile, FeatureValue, FieldSpec, Gender,
    InstitutionKind, PerCategory, Schema, StudentRecord, YearRange,
};
use crate::error::{Error, Result};
use crate::silo::{InstitutionSilo, Universe};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericFeature {
    pub name: String,
    pub center: f64,
    pub scale: f64,
}

/// A categorical student feature whose level mix depends on one context
/// category and whose levels shift the retention logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalEffect {
    pub field: String,
    pub levels: Vec<String>,
    pub driver: Category,
    pub level_logits: Vec<f64>,
    pub level_loadings: Vec<f64>,
    pub outcome_effects: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupOffsets {
    pub female: f64,
    pub male: f64,
    pub other: f64,
    pub urm: f64,
    /// Per-category slope of the URM offset in the institution latents.
    pub urm_loadings: PerCategory<f64>,
}

/// Extra slope on one latent feature that applies to URM students only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrmInteraction {
    pub feature: usize,
    pub strength: f64,
    pub loadings: PerCategory<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicModel {
    pub urm_share: f64,
    pub urm_loading: f64,
    pub female_share: f64,
    pub female_loading: f64,
    pub other_share: f64,
    /// Latent feature mean shift for URM students.
    pub urm_feature_shift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub intercept: f64,
    pub intercept_loadings: PerCategory<f64>,
    pub base_weights: Vec<f64>,
    /// Per-category direction in which the feature weights move with the latent.
    pub weight_loadings: PerCategory<Vec<f64>>,
    /// Per-category direction in which the feature means move with the latent.
    pub mean_loadings: PerCategory<Vec<f64>>,
    /// Rescale each institution's feature weights to the norm of
    /// `base_weights`, so context moves the direction of the outcome model
    /// but not how predictable retention is.
    pub fixed_signal_strength: bool,
    pub group_offsets: GroupOffsets,
    pub urm_interaction: UrmInteraction,
}

/// Every knob is explicit; JSON documents must spell all of them out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub universities: usize,
    pub community_colleges: usize,
    pub records_per_institution: usize,
    pub cohort_years: YearRange,
    pub context_shift: PerCategory<f64>,
    pub university_offset: PerCategory<f64>,
    /// Noise of the public read-out, in units of the category's shift.
    pub context_noise: f64,
    pub missing_rate: f64,
    pub numeric_features: Vec<NumericFeature>,
    pub categorical_features: Vec<CategoricalEffect>,
    pub demographics: DemographicModel,
    pub outcome: OutcomeModel,
}

fn per_cat_vec(rows: [[f64; 6]; 6]) -> PerCategory<Vec<f64>> {
    PerCategory::from_fn(|c| rows[c.index()].to_vec())
}

impl Default for GeneratorConfig {
    /// 4 universities, 23 community colleges, seven cohorts.
    fn default() -> Self {
        let nf = |name: &str, center: f64, scale: f64| NumericFeature {
            name: name.into(),
            center,
            scale,
        };
        Self {
            universities: 4,
            community_colleges: 23,
            records_per_institution: 1500,
            cohort_years: YearRange::default(),
            context_shift: PerCategory {
                school: 1.0,
                academic: 1.0,
                demographic: 1.0,
                completion: 1.0,
                cost: 1.0,
                financial_aid: 1.0,
            },
            university_offset: PerCategory {
                school: 4.0,
                academic: 3.0,
                demographic: 0.0,
                completion: 2.0,
                cost: 3.0,
                financial_aid: 0.0,
            },
            context_noise: 0.15,
            missing_rate: 0.02,
            numeric_features: vec![
                nf("hs_gpa", 3.0, 0.6),
                nf("first_term_credits", 12.0, 3.5),
                nf("first_term_gpa", 2.6, 1.0),
                nf("age", 21.0, 4.5),
                nf("commute_miles", 12.0, 8.0),
                nf("work_hours", 15.0, 10.0),
            ],
            categorical_features: vec![
                CategoricalEffect {
                    field: "enrollment".into(),
                    levels: vec!["full_time".into(), "part_time".into()],
                    driver: Category::School,
                    level_logits: vec![0.0, -0.2],
                    level_loadings: vec![0.0, -0.6],
                    outcome_effects: vec![0.0, -0.4],
                },
                CategoricalEffect {
                    field: "program".into(),
                    levels: vec![
                        "academic".into(),
                        "career_technical".into(),
                        "undeclared".into(),
                    ],
                    driver: Category::Academic,
                    level_logits: vec![0.3, 0.0, -0.3],
                    level_loadings: vec![0.5, -0.4, 0.0],
                    outcome_effects: vec![0.0, 0.1, -0.3],
                },
                CategoricalEffect {
                    field: "pell".into(),
                    levels: vec!["no".into(), "yes".into()],
                    driver: Category::FinancialAid,
                    level_logits: vec![0.0, 0.0],
                    level_loadings: vec![0.0, 0.8],
                    outcome_effects: vec![0.0, -0.15],
                },
            ],
            demographics: DemographicModel {
                urm_share: 0.3,
                urm_loading: 1.0,
                female_share: 0.55,
                female_loading: 0.3,
                other_share: 0.03,
                urm_feature_shift: vec![-0.2, 0.0, -0.15, 0.1, 0.1, 0.1],
            },
            outcome: OutcomeModel {
                intercept: 1.0,
                intercept_loadings: PerCategory {
                    school: 0.2,
                    academic: 0.1,
                    demographic: 0.0,
                    completion: 0.5,
                    cost: 0.0,
                    financial_aid: 0.0,
                },
                base_weights: vec![0.5, 0.35, 0.9, -0.25, -0.1, -0.2],
                weight_loadings: per_cat_vec([
                    [0.0, 0.35, -0.35, 0.3, 0.0, 0.0],
                    [0.45, 0.0, 0.35, 0.0, 0.0, -0.2],
                    [0.0, 0.0, 0.0, 0.0, 0.3, 0.3],
                    [-0.3, 0.0, 0.3, 0.0, 0.25, 0.0],
                    [0.0; 6],
                    [0.0, 0.2, 0.0, 0.0, 0.0, 0.2],
                ]),
                mean_loadings: per_cat_vec([
                    [0.0, 0.3, 0.0, -0.2, 0.0, 0.0],
                    [0.3, 0.0, 0.3, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 0.2, 0.2, 0.0],
                    [0.0, 0.0, 0.2, 0.0, 0.0, 0.0],
                    [0.0; 6],
                    [0.0, 0.0, 0.0, 0.0, 0.0, 0.3],
                ]),
                fixed_signal_strength: true,
                group_offsets: GroupOffsets {
                    female: 0.1,
                    male: -0.1,
                    other: 0.0,
                    urm: -0.3,
                    urm_loadings: PerCategory::default(),
                },
                urm_interaction: UrmInteraction {
                    feature: 1,
                    strength: 0.0,
                    loadings: PerCategory::default(),
                },
            },
        }
    }
}

impl GeneratorConfig {
    /// No context shift in any category: every institution is drawn from the
    /// same distribution.
    pub fn zero_shift() -> Self {
        Self {
            context_shift: PerCategory::from_fn(|_| 0.0),
            ..Self::default()
        }
    }

    /// Context shift driven by the demographic category only.
    pub fn demographic_only() -> Self {
        Self {
            context_shift: PerCategory::from_fn(|cat| {
                if cat == Category::Demographic {
                    2.0
                } else {
                    0.0
                }
            }),
            ..Self::default()
        }
    }

    /// Universe where the URM group's outcomes hinge on a feature the
    /// majority's outcomes ignore, and where institutions differ sharply in
    /// URM share. Models trained on low-URM institutions show large AUC gaps.
    pub fn fairness_skewed() -> Self {
        let mut c = Self::default();
        c.demographics.urm_loading = 2.5;
        c.demographics.urm_share = 0.25;
        c.outcome.urm_interaction = UrmInteraction {
            feature: 4,
            strength: 1.2,
            loadings: PerCategory::default(),
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.universities + self.community_colleges < 1 {
            return err("universe needs at least one institution".into());
        }
        if self.records_per_institution == 0 {
            return err("records_per_institution must be positive".into());
        }
        if self.cohort_years.first > self.cohort_years.last {
            return err("cohort year range is empty".into());
        }
        let p = self.numeric_features.len();
        if p == 0 {
            return err("need at least one numeric feature".into());
        }
        for f in &self.numeric_features {
            if !(f.scale > 0.0) || !f.center.is_finite() {
                return err(format!("numeric feature `{}` needs positive scale", f.name));
            }
        }
        let check_len = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() != p {
                return Err(Error::Config(format!(
                    "{name} has length {} but there are {p} numeric features",
                    v.len()
                )));
            }
            Ok(())
        };
        check_len("base_weights", &self.outcome.base_weights)?;
        check_len("urm_feature_shift", &self.demographics.urm_feature_shift)?;
        for (c, v) in self.outcome.weight_loadings.iter() {
            check_len(&format!("weight_loadings.{c}"), v)?;
        }
        for (c, v) in self.outcome.mean_loadings.iter() {
            check_len(&format!("mean_loadings.{c}"), v)?;
        }
        if self.outcome.urm_interaction.feature >= p {
            return err("urm_interaction.feature out of range".into());
        }
        for cf in &self.categorical_features {
            let k = cf.levels.len();
            if k == 0
                || cf.level_logits.len() != k
                || cf.level_loadings.len() != k
                || cf.outcome_effects.len() != k
            {
                return err(format!(
                    "categorical feature `{}` is inconsistent",
                    cf.field
                ));
            }
        }
        for (c, s) in self.context_shift.iter() {
            if !(*s >= 0.0) {
                return err(format!("context_shift.{c} must be nonnegative"));
            }
        }
        let d = &self.demographics;
        for (name, v) in [("urm_share", d.urm_share), ("female_share", d.female_share)] {
            if !(v > 0.0 && v < 1.0) {
                return err(format!("{name} must lie in (0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&d.other_share) {
            return err("other_share must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return err("missing_rate must lie in [0, 1)".into());
        }
        if !(self.context_noise >= 0.0) {
            return err("context_noise must be nonnegative".into());
        }
        Ok(())
    }
}

/// The shared schema of a generated universe.
pub fn generator_schema(config: &GeneratorConfig) -> Schema {
    let mut fields: Vec<FieldSpec> = config
        .numeric_features
        .iter()
        .map(|f| FieldSpec::numeric(&f.name, f.center, f.scale))
        .collect();
    for cf in &config.categorical_features {
        let levels: Vec<&str> = cf.levels.iter().map(String::as_str).collect();
        fields.push(FieldSpec::categorical(&cf.field, &levels));
    }
    Schema {
        fields,
        cohort_years: config.cohort_years,
        include_sensitive: true,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn softmax_sample(rng: &mut ChaCha8Rng, logits: &[f64]) -> usize {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

struct InstitutionPlan {
    id: String,
    kind: InstitutionKind,
    latent: PerCategory<f64>,
    observed: PerCategory<[f64; 4]>,
}

fn bucket(z: f64, levels: &[&str]) -> String {
    let idx = if z < -0.4 {
        0
    } else if z <= 0.4 {
        1
    } else {
        2
    };
    levels[idx.min(levels.len() - 1)].to_string()
}

fn build_profile(
    config: &GeneratorConfig,
    obs: &PerCategory<[f64; 4]>,
) -> Result<ContextualProfile> {
    let d = &config.demographics;
    let mut cats: BTreeMap<Category, Vec<ContextAttribute>> = BTreeMap::new();
    let num = ContextAttribute::numeric;
    let cat = ContextAttribute::categorical;
    let o = |c: Category| obs.get(c);

    let s = o(Category::School);
    cats.insert(
        Category::School,
        vec![
            num("log_enrollment", 8.5 + 0.8 * s[0]),
            num("pct_full_time", 100.0 * sigmoid(0.6 * s[1])),
            num("student_faculty_ratio", 18.0 + 4.0 * s[2]),
            cat("locale", &bucket(s[3], &["rural", "town", "city"])),
        ],
    );
    let a = o(Category::Academic);
    cats.insert(
        Category::Academic,
        vec![
            num("mean_hs_gpa", 3.0 + 0.25 * a[0]),
            num("pct_remedial", 100.0 * sigmoid(-0.8 * a[1])),
            num("pct_stem_declared", 100.0 * sigmoid(-0.5 + 0.5 * a[2])),
            cat(
                "admissions",
                &bucket(a[3], &["open", "moderate", "selective"]),
            ),
        ],
    );
    let m = o(Category::Demographic);
    cats.insert(
        Category::Demographic,
        vec![
            num(
                "pct_urm",
                100.0 * sigmoid(logit(d.urm_share) + d.urm_loading * m[0]),
            ),
            num(
                "pct_female",
                100.0 * sigmoid(logit(d.female_share) + d.female_loading * m[1]),
            ),
            num("mean_entry_age", 21.0 + 1.5 * m[2]),
            cat("minority_serving", &bucket(m[3], &["no", "no", "yes"])),
        ],
    );
    let c = o(Category::Completion);
    cats.insert(
        Category::Completion,
        vec![
            num("grad_rate_150", 100.0 * sigmoid(-0.3 + 0.6 * c[0])),
            num("transfer_out_rate", 100.0 * sigmoid(-1.0 + 0.4 * c[1])),
            num("pct_still_enrolled", 100.0 * sigmoid(-1.5 + 0.3 * c[2])),
            cat("completion_tier", &bucket(c[3], &["low", "mid", "high"])),
        ],
    );
    let k = o(Category::Cost);
    cats.insert(
        Category::Cost,
        vec![
            num("tuition", 4500.0 + 2500.0 * k[0]),
            num("net_price", 9000.0 + 3000.0 * k[1]),
            num("books_supplies", 1400.0 + 200.0 * k[2]),
            cat("tuition_tier", &bucket(k[3], &["low", "mid", "high"])),
        ],
    );
    let f = o(Category::FinancialAid);
    cats.insert(
        Category::FinancialAid,
        vec![
            num("pct_pell", 100.0 * sigmoid(0.8 * f[0])),
            num("avg_grant", 5000.0 + 1500.0 * f[1]),
            num("pct_federal_loan", 100.0 * sigmoid(-1.0 + 0.5 * f[2])),
            cat("aid_tier", &bucket(f[3], &["low", "mid", "high"])),
        ],
    );
    ContextualProfile::new(cats)
}

/// Deterministic for a fixed `(config, seed)`.
pub fn generate_universe(config: &GeneratorConfig, seed: u64) -> Result<Universe> {
    config.validate()?;
    let schema = Arc::new(generator_schema(config));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_total = config.universities + config.community_colleges;

    let mut plans = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let (kind, id) = if i < config.universities {
            (InstitutionKind::University, format!("U{:02}", i + 1))
        } else {
            (
                InstitutionKind::CommunityCollege,
                format!("C{:02}", i - config.universities + 1),
            )
        };
        let mut latent = PerCategory::from_fn(|_| 0.0);
        let mut observed = PerCategory::from_fn(|_| [0.0; 4]);
        for c in Category::ALL {
            let u: f64 = rng.random_range(-1.0..1.0);
            let offset = if kind == InstitutionKind::University {
                *config.university_offset.get(c)
            } else {
                0.0
            };
            let shift = *config.context_shift.get(c);
            let z = shift * (u + offset);
            *latent.get_mut(c) = z;
            let obs = observed.get_mut(c);
            for slot in obs.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *slot = z + shift * config.context_noise * e;
            }
        }
        plans.push(InstitutionPlan {
            id,
            kind,
            latent,
            observed,
        });
    }

    let mut silos = Vec::with_capacity(n_total);
    for plan in &plans {
        let silo_seed: u64 = rng.random();
        let records = draw_students(config, &plan.latent, silo_seed);
        let profile = build_profile(config, &plan.observed)?;
        silos.push(InstitutionSilo::new(
            plan.id.clone(),
            plan.kind,
            profile,
            schema.clone(),
            records,
        )?);
    }
    Universe::new(schema, silos)
}

fn draw_students(config: &GeneratorConfig, z: &PerCategory<f64>, seed: u64) -> Vec<StudentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = &config.outcome;
    let d = &config.demographics;
    let p = config.numeric_features.len();

    let dot =
        |loadings: &PerCategory<f64>| -> f64 { loadings.iter().map(|(c, l)| l * z.get(c)).sum() };
    let zdemo = *z.get(Category::Demographic);
    let urm_share = sigmoid(logit(d.urm_share) + d.urm_loading * zdemo);
    let female_share = sigmoid(logit(d.female_share) + d.female_loading * zdemo);

    let mut weights = out.base_weights.clone();
    let mut means = vec![0.0; p];
    for c in Category::ALL {
        let zc = *z.get(c);
        for j in 0..p {
            weights[j] += zc * out.weight_loadings.get(c)[j];
            means[j] += zc * out.mean_loadings.get(c)[j];
        }
    }
    if out.fixed_signal_strength {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (target, current) = (norm(&out.base_weights), norm(&weights));
        if current > 0.0 {
            for w in weights.iter_mut() {
                *w *= target / current;
            }
        }
    }
    let intercept = out.intercept + dot(&out.intercept_loadings);
    let urm_offset = out.group_offsets.urm + dot(&out.group_offsets.urm_loadings);
    let interaction = out.urm_interaction.strength + dot(&out.urm_interaction.loadings);
    let years: Vec<i32> = config.cohort_years.years().collect();

    (0..config.records_per_institution)
        .map(|_| {
            let cohort_year = years[rng.random_range(0..years.len())];
            let gender = if rng.random::<f64>() < d.other_share {
                Gender::Other
            } else if rng.random::<f64>() < female_share {
                Gender::Female
            } else {
                Gender::Male
            };
            let urm = rng.random::<f64>() < urm_share;

            let x: Vec<f64> = (0..p)
                .map(|j| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    means[j] + if urm { d.urm_feature_shift[j] } else { 0.0 } + e
                })
                .collect();
            let mut eta = intercept
                + weights.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>()
                + match gender {
                    Gender::Female => out.group_offsets.female,
                    Gender::Male => out.group_offsets.male,
                    Gender::Other => out.group_offsets.other,
                };
            if urm {
                eta += urm_offset + interaction * x[out.urm_interaction.feature];
            }

            let mut features: Vec<FeatureValue> = config
                .numeric_features
                .iter()
                .zip(&x)
                .map(|(f, xi)| FeatureValue::Numeric(f.center + f.scale * xi))
                .collect();
            for cf in &config.categorical_features {
                let zc = *z.get(cf.driver);
                let logits: Vec<f64> = cf
                    .level_logits
                    .iter()
                    .zip(&cf.level_loadings)
                    .map(|(l, w)| l + w * zc)
                    .collect();
                let level = softmax_sample(&mut rng, &logits);
                eta += cf.outcome_effects[level];
                features.push(FeatureValue::Level(level as u32));
            }
            let retained = rng.random::<f64>() < sigmoid(eta);
            if config.missing_rate > 0.0 {
                for f in features.iter_mut() {
                    if rng.random::<f64>() < config.missing_rate {
                        *f = FeatureValue::Missing;
                    }
                }
            }
            StudentRecord {
                cohort_year,
                features,
                gender,
                urm,
                retained,
            }
        })
        .collect()
}
