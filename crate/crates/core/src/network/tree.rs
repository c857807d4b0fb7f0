use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Names one learnable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    ExtractorWeight(usize),
    ExtractorBias(usize),
    BottleneckWeight,
    BottleneckBias,
    BnScale,
    BnShift,
    ClassifierWeight,
    ClassifierBias,
}

impl ParamId {
    pub fn is_classifier(self) -> bool {
        matches!(self, ParamId::ClassifierWeight | ParamId::ClassifierBias)
    }

    pub fn is_bn_affine(self) -> bool {
        matches!(self, ParamId::BnScale | ParamId::BnShift)
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::ExtractorWeight(k) => write!(f, "extractor.{k}.weight"),
            ParamId::ExtractorBias(k) => write!(f, "extractor.{k}.bias"),
            ParamId::BottleneckWeight => f.write_str("bottleneck.weight"),
            ParamId::BottleneckBias => f.write_str("bottleneck.bias"),
            ParamId::BnScale => f.write_str("bn.scale"),
            ParamId::BnShift => f.write_str("bn.shift"),
            ParamId::ClassifierWeight => f.write_str("classifier.weight"),
            ParamId::ClassifierBias => f.write_str("classifier.bias"),
        }
    }
}

/// The learnable tensors of the network. Also used for gradients, Fisher
/// diagonals and optimiser moments, which share its shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTree {
    pub extractor: Vec<Dense>,
    pub bottleneck: Dense,
    pub bn_scale: Array1<f64>,
    pub bn_shift: Array1<f64>,
    pub classifier: Dense,
}

impl ParamTree {
    /// Every tensor in canonical order.
    pub fn tensors(&self) -> Vec<(ParamId, &[f64])> {
        fn s(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn m(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out = Vec::with_capacity(2 * self.extractor.len() + 6);
        for (k, d) in self.extractor.iter().enumerate() {
            out.push((ParamId::ExtractorWeight(k), m(&d.weight)));
            out.push((ParamId::ExtractorBias(k), s(&d.bias)));
        }
        out.push((ParamId::BottleneckWeight, m(&self.bottleneck.weight)));
        out.push((ParamId::BottleneckBias, s(&self.bottleneck.bias)));
        out.push((ParamId::BnScale, s(&self.bn_scale)));
        out.push((ParamId::BnShift, s(&self.bn_shift)));
        out.push((ParamId::ClassifierWeight, m(&self.classifier.weight)));
        out.push((ParamId::ClassifierBias, s(&self.classifier.bias)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamId, &mut [f64])> {
        fn s(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn m(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = Vec::with_capacity(2 * self.extractor.len() + 6);
        for (k, d) in self.extractor.iter_mut().enumerate() {
            out.push((ParamId::ExtractorWeight(k), m(&mut d.weight)));
            out.push((ParamId::ExtractorBias(k), s(&mut d.bias)));
        }
        out.push((ParamId::BottleneckWeight, m(&mut self.bottleneck.weight)));
        out.push((ParamId::BottleneckBias, s(&mut self.bottleneck.bias)));
        out.push((ParamId::BnScale, s(&mut self.bn_scale)));
        out.push((ParamId::BnShift, s(&mut self.bn_shift)));
        out.push((ParamId::ClassifierWeight, m(&mut self.classifier.weight)));
        out.push((ParamId::ClassifierBias, s(&mut self.classifier.bias)));
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &ParamTree) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && self
                .extractor
                .iter()
                .zip(&other.extractor)
                .all(|(x, y)| x.weight.dim() == y.weight.dim())
            && self.bottleneck.weight.dim() == other.bottleneck.weight.dim()
            && self.classifier.weight.dim() == other.classifier.weight.dim()
            && a.iter()
                .zip(&b)
                .all(|((i, x), (j, y))| i == j && x.len() == y.len())
    }

    pub(crate) fn check_shape(&self, other: &ParamTree, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what} does not match the parameter shapes"
            )))
        }
    }

    /// Flatten in canonical order.
    pub fn to_vec(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    /// Inverse of [`ParamTree::to_vec`] using `self` as the shape template.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} values for a tree of {}",
                values.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        let mut off = 0;
        for (_, t) in out.tensors_mut() {
            t.copy_from_slice(&values[off..off + t.len()]);
            off += t.len();
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamTree) {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += alpha * v;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Ids of tensors whose contents differ bitwise.
    pub fn diff(&self, other: &ParamTree) -> Vec<ParamId> {
        self.tensors()
            .into_iter()
            .zip(other.tensors())
            .filter(|((_, a), (_, b))| {
                a.len() != b.len()
                    || a.iter()
                        .zip(b.iter())
                        .any(|(x, y)| x.to_bits() != y.to_bits())
            })
            .map(|((id, _), _)| id)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, Architecture};

    #[test]
    fn flatten_round_trip_and_diff() {
        let p = init_params(3, &Architecture::default(), 0)
            .unwrap()
            .learnable;
        let v = p.to_vec();
        assert_eq!(v.len(), p.len());
        let q = p.with_values(&v).unwrap();
        assert_eq!(p, q);
        assert!(p.diff(&q).is_empty());
        let mut r = q.clone();
        r.bn_shift[0] += 1.0;
        assert_eq!(p.diff(&r), vec![ParamId::BnShift]);
        assert!(p.with_values(&v[1..]).is_err());
    }
}
