//! Versioned binary parameter format.
//!
//! Layout (little-endian): magic `SLTP`, `u16` version, `u32` input width,
//! `u8` activation code, `u32` extractor depth followed by one `u32` per
//! width, `u32` bottleneck width, `f64` BN momentum, `f64` BN epsilon, then
//! every tensor as `f64` in canonical order followed by the BN running mean
//! and running variance. Tensor sizes are fully determined by the header, so
//! the format has no room for anything but parameters.

use ndarray::{Array1, Array2};

use super::{Activation, Architecture, BatchNormStats, Dense, ModelParams, ParamTree};
use crate::error::{Error, Result};

pub const FORMAT_MAGIC: [u8; 4] = *b"SLTP";
pub const FORMAT_VERSION: u16 = 1;

const MAX_DEPTH: usize = 64;
const MAX_WIDTH: usize = 1 << 16;

pub fn serialize_params(params: &ModelParams) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(64 + 8 * (params.learnable.len() + 2 * params.arch.bottleneck));
    out.extend_from_slice(&FORMAT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.input_dim as u32).to_le_bytes());
    out.push(params.arch.activation.code());
    out.extend_from_slice(&(params.arch.extractor.len() as u32).to_le_bytes());
    for &w in &params.arch.extractor {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.arch.bottleneck as u32).to_le_bytes());
    out.extend_from_slice(&params.arch.bn_momentum.to_le_bytes());
    out.extend_from_slice(&params.arch.bn_eps.to_le_bytes());
    let stats = [&params.bn.running_mean, &params.bn.running_var];
    let values = params
        .learnable
        .tensors()
        .into_iter()
        .flat_map(|(_, t)| t.iter())
        .chain(stats.into_iter().flat_map(|a| a.iter()));
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated parameter blob".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn width(&mut self, what: &str) -> Result<usize> {
        let w = self.u32()? as usize;
        if w == 0 || w > MAX_WIDTH {
            return Err(Error::Format(format!("{what} width {w} out of range")));
        }
        Ok(w)
    }

    fn finite_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                let v = self.f64()?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Format("non-finite parameter value".into()))
                }
            })
            .collect()
    }

    fn dense(&mut self, fan_out: usize, fan_in: usize) -> Result<Dense> {
        let w = self.finite_vec(fan_out * fan_in)?;
        let b = self.finite_vec(fan_out)?;
        Ok(Dense {
            weight: Array2::from_shape_vec((fan_out, fan_in), w).expect("length checked"),
            bias: Array1::from(b),
        })
    }
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != FORMAT_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let input_dim = r.width("input")?;
    let activation = Activation::from_code(r.u8()?)
        .ok_or_else(|| Error::Format("unknown activation code".into()))?;
    let depth = r.u32()? as usize;
    if depth > MAX_DEPTH {
        return Err(Error::Format(format!(
            "extractor depth {depth} out of range"
        )));
    }
    let extractor_widths = (0..depth)
        .map(|_| r.width("extractor"))
        .collect::<Result<Vec<_>>>()?;
    let bottleneck = r.width("bottleneck")?;
    let arch = Architecture {
        extractor: extractor_widths,
        bottleneck,
        activation,
        bn_momentum: r.f64()?,
        bn_eps: r.f64()?,
    };
    arch.validate()
        .map_err(|e| Error::Format(format!("invalid architecture descriptor: {e}")))?;

    // Check the payload size before allocating anything proportional to it.
    let mut count: usize = 0;
    let mut prev = input_dim;
    for &w in arch.extractor.iter().chain(std::iter::once(&bottleneck)) {
        count += w * prev + w;
        prev = w;
    }
    count += 2 * bottleneck + 2 * bottleneck + 2 + 2 * bottleneck;
    if bytes.len() - r.pos != count * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, architecture needs {}",
            bytes.len() - r.pos,
            count * 8
        )));
    }

    let mut extractor = Vec::with_capacity(depth);
    let mut prev = input_dim;
    for &w in &arch.extractor {
        extractor.push(r.dense(w, prev)?);
        prev = w;
    }
    let bottleneck_layer = r.dense(bottleneck, prev)?;
    let bn_scale = Array1::from(r.finite_vec(bottleneck)?);
    let bn_shift = Array1::from(r.finite_vec(bottleneck)?);
    let classifier = r.dense(2, bottleneck)?;
    let running_mean = Array1::from(r.finite_vec(bottleneck)?);
    let running_var = Array1::from(r.finite_vec(bottleneck)?);
    if running_var.iter().any(|&v| v < 0.0) {
        return Err(Error::Format("negative running variance".into()));
    }
    Ok(ModelParams {
        arch,
        input_dim,
        learnable: ParamTree {
            extractor,
            bottleneck: bottleneck_layer,
            bn_scale,
            bn_shift,
            classifier,
        },
        bn: BatchNormStats {
            running_mean,
            running_var,
        },
    })
}

impl ModelParams {
    /// Human-readable dump for debugging; the binary format is canonical.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    fn sample() -> ModelParams {
        let arch = Architecture {
            extractor: vec![5, 3],
            bottleneck: 4,
            ..Architecture::default()
        };
        let mut p = init_params(7, &arch, 42).unwrap();
        p.bn.running_mean[1] = -0.125;
        p.bn.running_var[2] = 3.5;
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let bytes = serialize_params(&p);
        let q = deserialize_params(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(serialize_params(&q), bytes);
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let bytes = serialize_params(&sample());
        for cut in [0, 3, 6, 20, bytes.len() - 1] {
            assert!(matches!(
                deserialize_params(&bytes[..cut]),
                Err(Error::Format(_))
            ));
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(deserialize_params(&longer).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = serialize_params(&sample());
        bytes[4] = 9;
        let err = deserialize_params(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut bytes = serialize_params(&sample());
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(deserialize_params(&bytes).is_err());
    }

    #[test]
    fn payload_size_is_fixed_by_the_header() {
        // The blob is header + exactly one f64 per parameter and running
        // statistic, so it cannot carry anything else.
        let p = sample();
        let header = 4 + 2 + 4 + 1 + 4 + 4 * p.arch.extractor.len() + 4 + 8 + 8;
        let expected = header + 8 * (p.learnable.len() + 2 * p.arch.bottleneck);
        assert_eq!(serialize_params(&p).len(), expected);
    }

    #[test]
    fn json_dump_mentions_every_block() {
        let s = sample().to_json().unwrap();
        for key in [
            "extractor",
            "bottleneck",
            "bn_scale",
            "classifier",
            "running_var",
        ] {
            assert!(s.contains(key));
        }
    }
}
