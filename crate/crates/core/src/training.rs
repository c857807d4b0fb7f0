//! Silo-local supervised training, Fisher diagonals and EWC sequential
//! training.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::TransferArtifact;
use crate::data::CohortSplit;
use crate::error::{Error, Result};
use crate::network::{
    init_params, inverse_frequency_weights, Architecture, Loss, Mode, ModelParams, Optimizer,
    OptimizerConfig, OptimizerKind, ParamTree,
};
use crate::silo::InstitutionSilo;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero runs the forward passes without touching the learnable tensors.
    pub learning_rate: f64,
    pub seed: u64,
    /// Inverse-frequency class weights in the cross-entropy.
    pub class_weighting: bool,
    /// EWC penalty strength for sequential training; 0 disables it.
    pub ewc_lambda: f64,
    pub fisher_sample_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::default(),
            optimizer: OptimizerKind::adam(),
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            class_weighting: false,
            ewc_lambda: 1.0,
            fisher_sample_cap: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config(
                "need at least one epoch and batch size ≥ 2".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        if !(self.ewc_lambda >= 0.0 && self.ewc_lambda.is_finite()) {
            return Err(Error::Config("EWC lambda must be nonnegative".into()));
        }
        if self.fisher_sample_cap == 0 {
            return Err(Error::Config("Fisher sample cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Write epoch logs as JSON lines.
pub fn write_log<W: Write, T: Serialize>(mut w: W, entries: &[T]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

/// Quadratic pull towards earlier parameters.
pub struct EwcAnchor<'a> {
    pub center: &'a ParamTree,
    pub fisher: &'a ParamTree,
    pub lambda: f64,
}

impl EwcAnchor<'_> {
    /// (λ/2) Σ F (θ − θ*)²
    pub fn penalty(&self, params: &ParamTree) -> f64 {
        let mut total = 0.0;
        for (((_, p), (_, c)), (_, f)) in params
            .tensors()
            .into_iter()
            .zip(self.center.tensors())
            .zip(self.fisher.tensors())
        {
            for i in 0..p.len() {
                total += f[i] * (p[i] - c[i]).powi(2);
            }
        }
        0.5 * self.lambda * total
    }

    fn add_gradient(&self, params: &ParamTree, grads: &mut ParamTree) {
        let iter = grads
            .tensors_mut()
            .into_iter()
            .zip(params.tensors())
            .zip(self.center.tensors())
            .zip(self.fisher.tensors());
        for ((((_, g), (_, p)), (_, c)), (_, f)) in iter {
            for i in 0..g.len() {
                g[i] += self.lambda * f[i] * (p[i] - c[i]);
            }
        }
    }
}

fn rows(x: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Minibatch training of `params` on `(x, y)`. Running BN statistics are
/// re-estimated from a full pass over `x` at the end.
pub fn fit(
    params: &mut ModelParams,
    x: ArrayView2<f64>,
    y: &[u8],
    config: &TrainConfig,
    anchor: Option<&EwcAnchor<'_>>,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::Shape("features and labels differ in length".into()));
    }
    if n < 2 {
        return Err(Error::Empty("need at least two training rows".into()));
    }
    if let Some(a) = anchor {
        params.learnable.check_shape(a.center, "EWC anchor")?;
        params.learnable.check_shape(a.fisher, "Fisher diagonal")?;
    }
    let class_weights = if config.class_weighting {
        inverse_frequency_weights(y)
    } else {
        [1.0, 1.0]
    };
    let loss = Loss::CrossEntropy { class_weights };
    let mut optimizer = if config.learning_rate > 0.0 {
        Some(Optimizer::new(OptimizerConfig {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
        })?)
    } else {
        None
    };
    let anchor = anchor.filter(|a| a.lambda > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            // A trailing singleton cannot provide batch statistics.
            if batch.len() < 2 {
                continue;
            }
            let xb = rows(&x, batch);
            let yb: Vec<u8> = batch.iter().map(|&i| y[i]).collect();
            let (probs, cache) = params.forward_train(xb.view())?;
            let (mut value, mut grads) = params.backward(&cache, Some(&yb), &loss)?;
            if let Some(a) = anchor {
                value += a.penalty(&params.learnable);
                a.add_gradient(&params.learnable, &mut grads);
            }
            if let Some(opt) = optimizer.as_mut() {
                opt.step(&mut params.learnable, &grads)?;
            }
            loss_sum += value * batch.len() as f64;
            seen += batch.len();
            correct += probs
                .rows()
                .into_iter()
                .zip(&yb)
                .filter(|(p, &t)| u8::from(p[1] >= p[0]) == t)
                .count();
        }
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
        });
    }
    if !params.learnable.is_finite() {
        return Err(Error::State(
            "training diverged to non-finite parameters".into(),
        ));
    }
    params.recalibrate_bn(x)?;
    Ok(log)
}

/// Train a fresh model on the silo's training cohorts.
pub fn train_local(
    silo: &InstitutionSilo,
    split: &CohortSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let data = silo.local(split)?;
    let mut params = init_params(data.train.x.ncols(), &config.arch, config.seed)?;
    let log = fit(
        &mut params,
        data.train.x.view(),
        &data.train.y,
        config,
        None,
    )?;
    Ok(TrainOutcome { params, log })
}

/// Continue training `start` on the silo's training cohorts, without a penalty.
pub fn fine_tune(
    start: &ModelParams,
    silo: &InstitutionSilo,
    split: &CohortSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let data = silo.local(split)?;
    let mut params = start.clone();
    let log = fit(
        &mut params,
        data.train.x.view(),
        &data.train.y,
        config,
        None,
    )?;
    Ok(TrainOutcome { params, log })
}

/// Expected squared score of the model's own predictive distribution:
/// mean over examples of Σ_y p(y|x) (∂ log p(y|x))². Computed in eval mode.
pub fn fisher_from_features(params: &ModelParams, x: ArrayView2<f64>) -> Result<ParamTree> {
    if x.nrows() == 0 {
        return Err(Error::Empty("Fisher diagonal of an empty dataset".into()));
    }
    let mut acc = params.learnable.zeros_like();
    let ce = Loss::cross_entropy();
    for i in 0..x.nrows() {
        let row = x.slice(ndarray::s![i..i + 1, ..]);
        let (probs, cache) = params.forward(row, Mode::Eval)?;
        for c in 0..2u8 {
            let p = probs[[0, c as usize]];
            if p == 0.0 {
                continue;
            }
            let (_, g) = params.backward(&cache, Some(&[c]), &ce)?;
            for ((_, a), (_, gv)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                for j in 0..a.len() {
                    a[j] += p * gv[j] * gv[j];
                }
            }
        }
    }
    acc.scale(1.0 / x.nrows() as f64);
    Ok(acc)
}

/// Fisher diagonal on the silo's training cohorts, subsampled to at most
/// `sample_cap` examples. `seed` only affects which examples are used.
pub fn compute_fisher_diagonal(
    params: &ModelParams,
    silo: &InstitutionSilo,
    split: &CohortSplit,
    sample_cap: usize,
    seed: u64,
) -> Result<ParamTree> {
    if sample_cap == 0 {
        return Err(Error::Config("Fisher sample cap must be positive".into()));
    }
    let data = silo.local(split)?;
    let n = data.train.len();
    if n <= sample_cap {
        return fisher_from_features(params, data.train.x.view());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, sample_cap).into_vec();
    idx.sort_unstable();
    fisher_from_features(params, rows(&data.train.x.view(), &idx).view())
}

/// Stage two of sequential training: fine-tune the artifact's model on this
/// silo with the EWC penalty anchored at the artifact's parameters.
pub fn train_sequential_ewc(
    artifact: &TransferArtifact,
    silo: &InstitutionSilo,
    split: &CohortSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let start = artifact.model()?;
    let fisher = artifact.fisher_tree()?;
    if config.ewc_lambda > 0.0 && fisher.is_none() {
        return Err(Error::Artifact(
            "EWC needs a Fisher diagonal in the artifact".into(),
        ));
    }
    let data = silo.local(split)?;
    let mut params = start.clone();
    let log = match &fisher {
        Some(f) if config.ewc_lambda > 0.0 => {
            let anchor = EwcAnchor {
                center: &start.learnable,
                fisher: f,
                lambda: config.ewc_lambda,
            };
            fit(
                &mut params,
                data.train.x.view(),
                &data.train.y,
                config,
                Some(&anchor),
            )?
        }
        _ => fit(
            &mut params,
            data.train.x.view(),
            &data.train.y,
            config,
            None,
        )?,
    };
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture {
            extractor: vec![6],
            bottleneck: 4,
            ..Architecture::default()
        }
    }

    #[test]
    fn penalty_is_zero_at_anchor_and_positive_elsewhere() {
        let p = init_params(3, &tiny_arch(), 0).unwrap();
        let f = p
            .learnable
            .with_values(&vec![0.5; p.learnable.len()])
            .unwrap();
        let a = EwcAnchor {
            center: &p.learnable,
            fisher: &f,
            lambda: 2.0,
        };
        assert_eq!(a.penalty(&p.learnable), 0.0);
        let mut q = p.learnable.clone();
        q.bn_shift[0] += 0.1;
        assert!((a.penalty(&q) - 0.5 * 2.0 * 0.5 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn saturated_constant_model_has_zero_fisher() {
        let mut p = init_params(3, &tiny_arch(), 0).unwrap();
        for (_, t) in p.learnable.tensors_mut() {
            t.fill(0.0);
        }
        p.learnable.classifier.bias = ndarray::array![-2000.0, 2000.0];
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64);
        let f = fisher_from_features(&p, x.view()).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.epochs = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            ewc_lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
