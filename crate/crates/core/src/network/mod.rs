//! Fully connected binary classifier: extractor → bottleneck + batch norm →
//! two-logit softmax head, with hand-written backpropagation.

mod codec;
mod optim;
mod tree;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use codec::{deserialize_params, serialize_params, FORMAT_MAGIC, FORMAT_VERSION};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use tree::{Dense, ParamId, ParamTree};

/// Gradients share the parameter tree's shape.
pub type Gradients = ParamTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    /// x * sigmoid(x). Smooth, so finite-difference checks are exact in the limit.
    Silu,
    Tanh,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Silu => 2,
            Activation::Tanh => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu,
            2 => Activation::Silu,
            3 => Activation::Tanh,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    0.01 * x
                }
            }
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.01
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub extractor: Vec<usize>,
    pub bottleneck: usize,
    pub activation: Activation,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            extractor: vec![64, 32],
            bottleneck: 16,
            activation: Activation::Silu,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.extractor.contains(&0) || self.bottleneck == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config(
                "batch-norm momentum must lie in (0, 1)".into(),
            ));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return Err(Error::Config("batch-norm epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Running statistics of the bottleneck batch norm. Not learnable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub input_dim: usize,
    pub learnable: ParamTree,
    pub bn: BatchNormStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics; [`ModelParams::forward_train`] also folds them into
    /// the running statistics.
    Train,
    Eval,
    /// Batch statistics, running statistics untouched.
    Tent,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Eval => "eval",
            Mode::Tent => "tent",
        }
    }
}

/// Everything backward needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    mode: Mode,
    input_dim: usize,
    widths: Vec<usize>,
    /// `acts[0]` is the input; `acts[k + 1]` is the output of extractor layer `k`.
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    bottleneck_pre: Array2<f64>,
    batch_mean: Array1<f64>,
    /// Biased batch variance in train/tent mode, running variance in eval mode.
    norm_var: Array1<f64>,
    xhat: Array2<f64>,
    bn_out: Array2<f64>,
    logits: Array2<f64>,
    probs: Array2<f64>,
}

impl Cache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    /// Normalised bottleneck pre-activation, before scale and shift.
    pub fn normalized(&self) -> &Array2<f64> {
        &self.xhat
    }

    /// Bottleneck features fed to the classifier.
    pub fn features(&self) -> &Array2<f64> {
        &self.bn_out
    }

    pub fn batch_size(&self) -> usize {
        self.probs.nrows()
    }

    /// Bottleneck output before normalisation.
    pub fn bottleneck_preactivation(&self) -> &Array2<f64> {
        &self.bottleneck_pre
    }
}

pub fn init_params(input_dim: usize, arch: &Architecture, seed: u64) -> Result<ModelParams> {
    if input_dim == 0 {
        return Err(Error::Config("input dimension must be positive".into()));
    }
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense = |fan_in: usize, fan_out: usize, gain: f64| -> Dense {
        let sd = (gain / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("finite positive std");
        let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(&mut rng));
        Dense {
            weight,
            bias: Array1::zeros(fan_out),
        }
    };
    let mut extractor = Vec::with_capacity(arch.extractor.len());
    let mut prev = input_dim;
    for &w in &arch.extractor {
        extractor.push(dense(prev, w, 2.0));
        prev = w;
    }
    let bottleneck = dense(prev, arch.bottleneck, 2.0);
    let classifier = dense(arch.bottleneck, 2, 1.0);
    let b = arch.bottleneck;
    Ok(ModelParams {
        arch: arch.clone(),
        input_dim,
        learnable: ParamTree {
            extractor,
            bottleneck,
            bn_scale: Array1::ones(b),
            bn_shift: Array1::zeros(b),
            classifier,
        },
        bn: BatchNormStats {
            running_mean: Array1::zeros(b),
            running_var: Array1::ones(b),
        },
    })
}

fn affine(x: &ArrayView2<f64>, layer: &Dense) -> Array2<f64> {
    let mut out = x.dot(&layer.weight.t());
    out += &layer.bias;
    out
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn column_mean_var(z: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = z.nrows() as f64;
    let mean = z.sum_axis(Axis(0)) / n;
    let centered = z - &mean;
    let var = (&centered * &centered).sum_axis(Axis(0)) / n;
    (mean, var)
}

impl ModelParams {
    pub fn bottleneck_width(&self) -> usize {
        self.arch.bottleneck
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn bottleneck_pre(
        &self,
        x: &ArrayView2<f64>,
    ) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let act = self.arch.activation;
        let mut acts = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.learnable.extractor.len());
        for layer in &self.learnable.extractor {
            let z = affine(&acts.last().unwrap().view(), layer);
            acts.push(z.mapv(|v| act.apply(v)));
            pre.push(z);
        }
        let z = affine(&acts.last().unwrap().view(), &self.learnable.bottleneck);
        (acts, pre, z)
    }

    /// Forward pass without side effects.
    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode) -> Result<(Array2<f64>, Cache)> {
        self.check_input(&x)?;
        if mode != Mode::Eval && x.nrows() < 2 {
            return Err(Error::BatchSize {
                got: x.nrows(),
                need: 2,
                mode: mode.name(),
            });
        }
        let (acts, pre, z) = self.bottleneck_pre(&x);
        let (batch_mean, norm_var, centre) = match mode {
            Mode::Eval => (
                self.bn.running_mean.clone(),
                self.bn.running_var.clone(),
                self.bn.running_mean.clone(),
            ),
            Mode::Train | Mode::Tent => {
                let (m, v) = column_mean_var(&z);
                (m.clone(), v, m)
            }
        };
        let inv_std = norm_var.mapv(|v| 1.0 / (v + self.arch.bn_eps).sqrt());
        let xhat = (&z - &centre) * &inv_std;
        let bn_out = &xhat * &self.learnable.bn_scale + &self.learnable.bn_shift;
        let logits = affine(&bn_out.view(), &self.learnable.classifier);
        let probs = softmax_rows(&logits);
        let cache = Cache {
            mode,
            input_dim: self.input_dim,
            widths: self.arch.extractor.clone(),
            acts,
            pre,
            bottleneck_pre: z,
            batch_mean,
            norm_var,
            xhat,
            bn_out,
            logits,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Train-mode forward that also updates the running statistics with
    /// momentum (unbiased batch variance).
    pub fn forward_train(&mut self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Cache)> {
        let (probs, cache) = self.forward(x, Mode::Train)?;
        let n = cache.batch_size() as f64;
        let m = self.arch.bn_momentum;
        let unbiased = &cache.norm_var * (n / (n - 1.0));
        self.bn.running_mean = &self.bn.running_mean * (1.0 - m) + &cache.batch_mean * m;
        self.bn.running_var = &self.bn.running_var * (1.0 - m) + unbiased * m;
        Ok((probs, cache))
    }

    /// Eval-mode probability of the positive class (column 1).
    pub fn predict_positive(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (p, _) = self.forward(x, Mode::Eval)?;
        Ok(p.column(1).to_vec())
    }

    /// Replace the running statistics by the exact mean and unbiased variance
    /// of the bottleneck pre-activations over `x`.
    pub fn recalibrate_bn(&mut self, x: ArrayView2<f64>) -> Result<()> {
        self.check_input(&x)?;
        if x.nrows() < 2 {
            return Err(Error::BatchSize {
                got: x.nrows(),
                need: 2,
                mode: "recalibration",
            });
        }
        let (_, _, z) = self.bottleneck_pre(&x);
        let (mean, var) = column_mean_var(&z);
        let n = x.nrows() as f64;
        self.bn.running_mean = mean;
        self.bn.running_var = var * (n / (n - 1.0));
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.learnable.is_finite()
            && self.bn.running_mean.iter().all(|v| v.is_finite())
            && self
                .bn
                .running_var
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0)
    }

    /// Mean loss and exact gradients for the graph used in `cache.mode()`.
    pub fn backward(
        &self,
        cache: &Cache,
        labels: Option<&[u8]>,
        loss: &Loss,
    ) -> Result<(f64, Gradients)> {
        if cache.input_dim != self.input_dim
            || cache.widths != self.arch.extractor
            || cache.bn_out.ncols() != self.arch.bottleneck
        {
            return Err(Error::State(
                "cache was produced by a different architecture".into(),
            ));
        }
        let (value, d_logits) = loss.value_and_grad(cache, labels)?;
        Ok((value, self.backprop(cache, &d_logits)))
    }

    fn backprop(&self, cache: &Cache, d_logits: &Array2<f64>) -> Gradients {
        let p = &self.learnable;
        let n = cache.batch_size() as f64;

        let classifier = Dense {
            weight: row_major(d_logits.t().dot(&cache.bn_out)),
            bias: d_logits.sum_axis(Axis(0)),
        };
        let d_bn_out = d_logits.dot(&p.classifier.weight);
        let bn_scale = (&d_bn_out * &cache.xhat).sum_axis(Axis(0));
        let bn_shift = d_bn_out.sum_axis(Axis(0));
        let d_xhat = &d_bn_out * &p.bn_scale;
        let inv_std = cache.norm_var.mapv(|v| 1.0 / (v + self.arch.bn_eps).sqrt());
        let d_z = match cache.mode {
            Mode::Eval => &d_xhat * &inv_std,
            Mode::Train | Mode::Tent => {
                let sum_d = d_xhat.sum_axis(Axis(0));
                let sum_dx = (&d_xhat * &cache.xhat).sum_axis(Axis(0));
                let inner = &d_xhat * n - &sum_d - &cache.xhat * &sum_dx;
                inner * &(inv_std / n)
            }
        };
        let last = cache.acts.last().unwrap();
        let bottleneck = Dense {
            weight: row_major(d_z.t().dot(last)),
            bias: d_z.sum_axis(Axis(0)),
        };
        let mut d_act = d_z.dot(&p.bottleneck.weight);
        let mut extractor = Vec::with_capacity(p.extractor.len());
        for k in (0..p.extractor.len()).rev() {
            let act = self.arch.activation;
            let d_pre = &d_act * &cache.pre[k].mapv(|v| act.derivative(v));
            extractor.push(Dense {
                weight: row_major(d_pre.t().dot(&cache.acts[k])),
                bias: d_pre.sum_axis(Axis(0)),
            });
            if k > 0 {
                d_act = d_pre.dot(&p.extractor[k].weight);
            }
        }
        extractor.reverse();
        ParamTree {
            extractor,
            bottleneck,
            bn_scale,
            bn_shift,
            classifier,
        }
    }
}

/// `dot` on transposed views may hand back column-major results; parameter
/// trees are flattened as row-major slices.
fn row_major(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Training objectives. All values are means over the batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Loss {
    /// Per-class weighted cross-entropy; `[1, 1]` is the plain loss.
    CrossEntropy { class_weights: [f64; 2] },
    /// Mean Shannon entropy of the predictions.
    Entropy,
    /// Information maximisation: mean entropy minus `diversity_weight` times
    /// the entropy of the mean prediction, plus `pseudo_weight` times
    /// cross-entropy against the supplied labels.
    InfoMax {
        diversity_weight: f64,
        pseudo_weight: f64,
    },
}

impl Loss {
    pub fn cross_entropy() -> Self {
        Loss::CrossEntropy {
            class_weights: [1.0, 1.0],
        }
    }

    fn value_and_grad(&self, cache: &Cache, labels: Option<&[u8]>) -> Result<(f64, Array2<f64>)> {
        let p = &cache.probs;
        let n = p.nrows();
        let nf = n as f64;
        let logp = log_softmax_rows(&cache.logits);
        let need_labels = || -> Result<&[u8]> {
            let y = labels.ok_or_else(|| Error::State("loss needs labels".into()))?;
            if y.len() != n {
                return Err(Error::Shape(format!(
                    "{} labels for a batch of {n}",
                    y.len()
                )));
            }
            if y.iter().any(|&v| v > 1) {
                return Err(Error::Shape("labels must be 0 or 1".into()));
            }
            Ok(y)
        };
        let ce = |y: &[u8], weights: [f64; 2], scale: f64, g: &mut Array2<f64>| -> f64 {
            let mut total = 0.0;
            for i in 0..n {
                let c = y[i] as usize;
                let w = weights[c] * scale / nf;
                total -= w * logp[[i, c]];
                for j in 0..2 {
                    let target = if j == c { 1.0 } else { 0.0 };
                    g[[i, j]] += w * (p[[i, j]] - target);
                }
            }
            total
        };
        let entropy = |scale: f64, g: &mut Array2<f64>| -> f64 {
            let mut total = 0.0;
            for i in 0..n {
                let h: f64 = -(0..2).map(|j| p[[i, j]] * logp[[i, j]]).sum::<f64>();
                total += scale * h / nf;
                for j in 0..2 {
                    g[[i, j]] -= scale / nf * p[[i, j]] * (logp[[i, j]] + h);
                }
            }
            total
        };
        let mut g = Array2::zeros((n, 2));
        let value = match self {
            Loss::CrossEntropy { class_weights } => ce(need_labels()?, *class_weights, 1.0, &mut g),
            Loss::Entropy => entropy(1.0, &mut g),
            Loss::InfoMax {
                diversity_weight,
                pseudo_weight,
            } => {
                let mut v = entropy(1.0, &mut g);
                let mean = p.mean_axis(Axis(0)).unwrap();
                let log_mean = mean.mapv(|m| m.max(f64::MIN_POSITIVE).ln());
                // -H(mean) = sum_c mean_c log mean_c
                v += diversity_weight * (&mean * &log_mean).sum();
                for i in 0..n {
                    let inner: f64 = (0..2).map(|c| p[[i, c]] * log_mean[c]).sum();
                    for j in 0..2 {
                        g[[i, j]] += diversity_weight / nf * p[[i, j]] * (log_mean[j] - inner);
                    }
                }
                if *pseudo_weight != 0.0 {
                    v += ce(need_labels()?, [1.0, 1.0], *pseudo_weight, &mut g);
                }
                v
            }
        };
        Ok((value, g))
    }
}

/// Inverse-frequency class weights normalised so that a balanced batch gets
/// weight 1 per class.
pub fn inverse_frequency_weights(labels: &[u8]) -> [f64; 2] {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return [1.0, 1.0];
    }
    [n / (2.0 * neg), n / (2.0 * pos)]
}
