//! Source-free adaptation of a transferred model using unlabeled target
//! features only.
//!
//! All three adapters take an [`UnlabeledFeatures`] matrix, which has no room
//! for labels. Forward passes during adaptation use batch statistics; once
//! adaptation finishes the running BN statistics are re-estimated from one
//! pass over the target features, so evaluation does not depend on batch
//! order.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CohortSplit;
use crate::error::{Error, Result};
use crate::network::{Loss, Mode, ModelParams, Optimizer, OptimizerConfig, OptimizerKind, ParamId};
use crate::silo::InstitutionSilo;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMethod {
    Shot,
    Tent,
    PseudoLabel,
}

impl AdaptMethod {
    pub const ALL: [AdaptMethod; 3] = [
        AdaptMethod::Shot,
        AdaptMethod::Tent,
        AdaptMethod::PseudoLabel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdaptMethod::Shot => "shot",
            AdaptMethod::Tent => "tent",
            AdaptMethod::PseudoLabel => "pseudo_label",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub method: AdaptMethod,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Weight of the centroid pseudo-label cross-entropy in SHOT.
    pub shot_pseudo_weight: f64,
    /// Minimum max-probability for a pseudo-label to be used.
    pub confidence_threshold: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            method: AdaptMethod::Shot,
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            shot_pseudo_weight: 0.3,
            confidence_threshold: 0.9,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::BatchSize {
                got: self.batch_size,
                need: 2,
                mode: "adaptation",
            });
        }
        if self.epochs == 0 {
            return Err(Error::Config("adaptation needs at least one epoch".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "adaptation learning rate must be positive".into(),
            ));
        }
        if !(self.shot_pseudo_weight >= 0.0 && self.shot_pseudo_weight.is_finite()) {
            return Err(Error::Config(
                "pseudo-label weight must be nonnegative".into(),
            ));
        }
        if !(self.confidence_threshold > 0.5 && self.confidence_threshold < 1.0) {
            return Err(Error::Config(
                "confidence threshold must lie in (0.5, 1)".into(),
            ));
        }
        Ok(())
    }

    fn optimizer(&self) -> Result<Optimizer> {
        Optimizer::new(OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
        })
    }
}

/// Target-silo features with no labels attached.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledFeatures(Array2<f64>);

impl UnlabeledFeatures {
    pub fn new(x: Array2<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("target features must be finite".into()));
        }
        Ok(Self(x))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptLogEntry {
    pub round: usize,
    pub objective: f64,
    /// Size of the confident set (pseudo-labelling only).
    pub confident: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptOutcome {
    pub params: ModelParams,
    pub log: Vec<AdaptLogEntry>,
    /// Set when adaptation could not run as configured.
    pub warning: Option<String>,
}

fn check_input(
    params: &ModelParams,
    target: &UnlabeledFeatures,
    config: &AdaptConfig,
) -> Result<()> {
    config.validate()?;
    if target.len() < 2 {
        return Err(Error::Empty(
            "adaptation needs at least two target rows".into(),
        ));
    }
    if target.view().ncols() != params.input_dim {
        return Err(Error::Shape(format!(
            "target has {} features, model expects {}",
            target.view().ncols(),
            params.input_dim
        )));
    }
    Ok(())
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Mean prediction entropy minus the entropy of the mean prediction, with
/// batch statistics over all of `x`.
pub fn information_maximization_objective(params: &ModelParams, x: ArrayView2<f64>) -> Result<f64> {
    let (_, cache) = params.forward(x, Mode::Tent)?;
    let loss = Loss::InfoMax {
        diversity_weight: 1.0,
        pseudo_weight: 0.0,
    };
    Ok(params.backward(&cache, None, &loss)?.0)
}

/// Mean prediction entropy with batch statistics over all of `x`.
pub fn mean_entropy(params: &ModelParams, x: ArrayView2<f64>) -> Result<f64> {
    let (_, cache) = params.forward(x, Mode::Tent)?;
    Ok(params.backward(&cache, None, &Loss::Entropy)?.0)
}

fn cosine_assign(features: &Array2<f64>, centroids: &[Array1<f64>; 2]) -> Vec<u8> {
    let norm = |v: ndarray::ArrayView1<f64>| v.dot(&v).sqrt().max(1e-12);
    let cn = [norm(centroids[0].view()), norm(centroids[1].view())];
    features
        .rows()
        .into_iter()
        .map(|f| {
            let fn_ = norm(f);
            let d0 = 1.0 - f.dot(&centroids[0]) / (fn_ * cn[0]);
            let d1 = 1.0 - f.dot(&centroids[1]) / (fn_ * cn[1]);
            u8::from(d1 < d0)
        })
        .collect()
}

/// Centroid pseudo-labels in bottleneck feature space: probability-weighted
/// centroids, nearest-centroid labels by cosine distance, then one refinement
/// with hard-label centroids.
pub fn centroid_pseudo_labels(params: &ModelParams, x: ArrayView2<f64>) -> Result<Vec<u8>> {
    let (probs, cache) = params.forward(x, Mode::Tent)?;
    let feats = cache.features();
    let mut centroids: [Array1<f64>; 2] =
        [Array1::zeros(feats.ncols()), Array1::zeros(feats.ncols())];
    for (k, c) in centroids.iter_mut().enumerate() {
        let w = probs.column(k);
        let total = w.sum().max(1e-12);
        *c = feats.t().dot(&w) / total;
    }
    let labels = cosine_assign(feats, &centroids);
    for (k, c) in centroids.iter_mut().enumerate() {
        let idx: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] as usize == k)
            .collect();
        if !idx.is_empty() {
            *c = feats.select(Axis(0), &idx).mean_axis(Axis(0)).unwrap();
        }
    }
    Ok(cosine_assign(feats, &centroids))
}

/// SHOT: freeze the classifier and adapt everything before it.
pub fn adapt_shot(
    params: &ModelParams,
    target: &UnlabeledFeatures,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    check_input(params, target, config)?;
    let x = target.view();
    let mut p = params.clone();
    let mut opt = config.optimizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let loss = Loss::InfoMax {
        diversity_weight: 1.0,
        pseudo_weight: config.shot_pseudo_weight,
    };
    let mut log = Vec::with_capacity(config.epochs);
    for round in 0..config.epochs {
        let labels = centroid_pseudo_labels(&p, x)?;
        for batch in batches(x.nrows(), config.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let yb: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (_, cache) = p.forward(xb.view(), Mode::Tent)?;
            let (_, grads) = p.backward(&cache, Some(&yb), &loss)?;
            opt.step_masked(&mut p.learnable, &grads, |id: ParamId| !id.is_classifier())?;
        }
        log.push(AdaptLogEntry {
            round,
            objective: information_maximization_objective(&p, x)?,
            confident: None,
        });
    }
    finish(p, x, log, None)
}

/// TENT: minimise prediction entropy through the BN scale and shift only.
pub fn adapt_tent(
    params: &ModelParams,
    target: &UnlabeledFeatures,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    check_input(params, target, config)?;
    if params.learnable.bn_scale.is_empty() {
        return Err(Error::Architecture("TENT needs batch normalisation".into()));
    }
    let x = target.view();
    let mut p = params.clone();
    let mut opt = config.optimizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::with_capacity(config.epochs);
    for round in 0..config.epochs {
        for batch in batches(x.nrows(), config.batch_size, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let (_, cache) = p.forward(xb.view(), Mode::Tent)?;
            let (_, grads) = p.backward(&cache, None, &Loss::Entropy)?;
            opt.step_masked(&mut p.learnable, &grads, ParamId::is_bn_affine)?;
        }
        log.push(AdaptLogEntry {
            round,
            objective: mean_entropy(&p, x)?,
            confident: None,
        });
    }
    finish(p, x, log, None)
}

/// Indices whose max class probability reaches `threshold`, with their
/// argmax labels.
pub fn confident_set(probs: &Array2<f64>, threshold: f64) -> (Vec<usize>, Vec<u8>) {
    let mut idx = Vec::new();
    let mut labels = Vec::new();
    for (i, row) in probs.rows().into_iter().enumerate() {
        if row[0].max(row[1]) >= threshold {
            idx.push(i);
            labels.push(u8::from(row[1] > row[0]));
        }
    }
    (idx, labels)
}

/// Self-training on confident predictions.
pub fn adapt_pseudo_label(
    params: &ModelParams,
    target: &UnlabeledFeatures,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    check_input(params, target, config)?;
    let x = target.view();
    let mut p = params.clone();
    let mut opt = config.optimizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ce = Loss::cross_entropy();
    let mut log = Vec::with_capacity(config.epochs);
    let mut warning = None;
    for round in 0..config.epochs {
        let (probs, _) = p.forward(x, Mode::Eval)?;
        let (idx, labels) = confident_set(&probs, config.confidence_threshold);
        if idx.len() < 2 {
            warning = Some(format!(
                "round {round}: {} examples reached confidence {}",
                idx.len(),
                config.confidence_threshold
            ));
            if round == 0 {
                return Ok(AdaptOutcome {
                    params: params.clone(),
                    log,
                    warning,
                });
            }
            break;
        }
        let mut objective = 0.0;
        let mut seen = 0usize;
        for batch in batches(idx.len(), config.batch_size, &mut rng) {
            let rows: Vec<usize> = batch.iter().map(|&b| idx[b]).collect();
            let xb = x.select(Axis(0), &rows);
            let yb: Vec<u8> = batch.iter().map(|&b| labels[b]).collect();
            let (_, cache) = p.forward(xb.view(), Mode::Tent)?;
            let (value, grads) = p.backward(&cache, Some(&yb), &ce)?;
            opt.step(&mut p.learnable, &grads)?;
            objective += value * batch.len() as f64;
            seen += batch.len();
        }
        log.push(AdaptLogEntry {
            round,
            objective: if seen > 0 {
                objective / seen as f64
            } else {
                0.0
            },
            confident: Some(idx.len()),
        });
    }
    finish(p, x, log, warning)
}

fn finish(
    mut p: ModelParams,
    x: ArrayView2<f64>,
    log: Vec<AdaptLogEntry>,
    warning: Option<String>,
) -> Result<AdaptOutcome> {
    if !p.learnable.is_finite() {
        return Err(Error::State(
            "adaptation diverged to non-finite parameters".into(),
        ));
    }
    p.recalibrate_bn(x)?;
    Ok(AdaptOutcome {
        params: p,
        log,
        warning,
    })
}

pub fn adapt(
    params: &ModelParams,
    target: &UnlabeledFeatures,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    match config.method {
        AdaptMethod::Shot => adapt_shot(params, target, config),
        AdaptMethod::Tent => adapt_tent(params, target, config),
        AdaptMethod::PseudoLabel => adapt_pseudo_label(params, target, config),
    }
}

/// Adapt inside the target silo on its evaluation-cohort features. Labels
/// are dropped before the adapter sees the data.
pub fn adapt_in_silo(
    params: &ModelParams,
    silo: &InstitutionSilo,
    split: &CohortSplit,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    let features = UnlabeledFeatures::new(silo.local(split)?.test.x)?;
    adapt(params, &features, config)
}
