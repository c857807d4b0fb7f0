//! Experiment families run across the silo federation.
//!
//! Models only leave a silo as [`TransferArtifact`]s and only metric reports
//! leave an evaluation; the families below never touch student records.

mod families;
mod report;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptConfig, AdaptMethod};
pub use crate::artifact::{config_digest, TransferArtifact};
use crate::data::{generate_universe, Category, CohortSplit, GeneratorConfig};
use crate::error::{Error, Result};
use crate::silo::Universe;
use crate::similarity::{
    default_included, DemographicReference, SimilarityMatrix, DEFAULT_PARTNER_FLOOR,
};
use crate::training::TrainConfig;

pub use families::{
    run_direct_matrix, run_msti_experiment, run_sequential_experiment, run_sfda_experiment,
    run_similarity_regression, run_threshold_experiment, DirectMatrix,
};
pub use report::{build_report, emit_report, Comparison, Report, ReportFormat};
pub use store::{ResultRow, ResultsStore, RowKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Direct,
    Regression,
    Msti,
    Sequential,
    Sfda,
    Thresholds,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Direct,
        Family::Regression,
        Family::Msti,
        Family::Sequential,
        Family::Sfda,
        Family::Thresholds,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Direct => "direct",
            Family::Regression => "regression",
            Family::Msti => "msti",
            Family::Sequential => "sequential",
            Family::Sfda => "sfda",
            Family::Thresholds => "thresholds",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum UniverseSource {
    Generated {
        generator: GeneratorConfig,
        seed: u64,
    },
    /// A directory written by [`Universe::save`].
    Directory { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub universe: UniverseSource,
    pub split: CohortSplit,
    /// Training seeds; every family except SFDA runs once per seed.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Adaptation settings; the method is set per cell.
    pub adapt: AdaptConfig,
    pub sfda_methods: Vec<AdaptMethod>,
    pub sfda_seeds: Vec<u64>,
    /// Source models to adapt; `None` means every university.
    pub sfda_sources: Option<Vec<String>>,
    /// Lower bounds on the MSTI model's AUC Gap used to stratify the
    /// sequential comparison.
    pub gap_strata: Vec<f64>,
    /// Categories entering the overall similarity.
    pub similarity_categories: Vec<Category>,
    pub partner_floor: f64,
    pub demographic_reference: DemographicReference,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            universe: UniverseSource::Generated {
                generator: GeneratorConfig::default(),
                seed: 0,
            },
            split: CohortSplit::default(),
            seeds: vec![0],
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            sfda_methods: AdaptMethod::ALL.to_vec(),
            sfda_seeds: (0..5).collect(),
            sfda_sources: None,
            gap_strata: vec![0.0, 0.05, 0.10],
            similarity_categories: default_included(),
            partner_floor: DEFAULT_PARTNER_FLOOR,
            demographic_reference: DemographicReference::Msti,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.train.validate()?;
        self.adapt.validate()?;
        if self.seeds.is_empty() || self.sfda_seeds.is_empty() {
            return Err(Error::Config("seed lists must be nonempty".into()));
        }
        if self.similarity_categories.is_empty() {
            return Err(Error::Config(
                "overall similarity needs at least one category".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.partner_floor) {
            return Err(Error::Config("partner floor must lie in [0, 1)".into()));
        }
        if self.gap_strata.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("gap strata must be finite".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("thread count must be positive".into()));
        }
        if let UniverseSource::Generated { generator, .. } = &self.universe {
            generator.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// A configured universe plus memoised per-seed direct matrices.
pub struct Experiment {
    config: ExperimentConfig,
    universe: Universe,
    similarity: SimilarityMatrix,
    pool: Option<rayon::ThreadPool>,
    direct: Mutex<BTreeMap<u64, Arc<DirectMatrix>>>,
}

impl fmt::Debug for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Experiment")
            .field("silos", &self.universe.ids())
            .finish_non_exhaustive()
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let universe = match &config.universe {
            UniverseSource::Generated { generator, seed } => generate_universe(generator, *seed)?,
            UniverseSource::Directory { path } => Universe::load(path)?,
        };
        Self::with_universe(config, universe)
    }

    pub fn with_universe(config: ExperimentConfig, universe: Universe) -> Result<Self> {
        config.validate()?;
        if universe.silos().len() < 2 {
            return Err(Error::Config("experiments need at least two silos".into()));
        }
        if universe.target_ids().is_empty() {
            return Err(Error::Config(
                "universe has no community-college targets".into(),
            ));
        }
        if let Some(sources) = &config.sfda_sources {
            for id in sources {
                universe.get(id)?;
            }
        }
        let similarity = universe.context_population()?.matrix()?;
        let pool = match config.threads {
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?,
            ),
            None => None,
        };
        Ok(Self {
            config,
            universe,
            similarity,
            pool,
            direct: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn similarity(&self) -> &SimilarityMatrix {
        &self.similarity
    }

    pub(crate) fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Train every silo's model for `seed` (once) and evaluate the matrix.
    pub fn direct_matrix(&self, seed: u64) -> Result<Arc<DirectMatrix>> {
        if let Some(m) = self.direct.lock().unwrap().get(&seed) {
            return Ok(m.clone());
        }
        let m = Arc::new(self.install(|| DirectMatrix::compute(self, seed))?);
        self.direct.lock().unwrap().insert(seed, m.clone());
        Ok(m)
    }

    pub fn run(&self, family: Family) -> Result<Vec<ResultRow>> {
        match family {
            Family::Direct => run_direct_matrix(self),
            Family::Regression => run_similarity_regression(self),
            Family::Msti => run_msti_experiment(self),
            Family::Sequential => run_sequential_experiment(self),
            Family::Sfda => run_sfda_experiment(self),
            Family::Thresholds => run_threshold_experiment(self),
        }
    }

    /// Run a family and append its rows to `store`.
    pub fn run_into(&self, family: Family, store: &mut ResultsStore) -> Result<usize> {
        let rows = self.run(family)?;
        let n = rows.len();
        store.append(rows)?;
        Ok(n)
    }
}
