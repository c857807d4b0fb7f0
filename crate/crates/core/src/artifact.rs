//! The only object that crosses silo boundaries.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{deserialize_params, serialize_params, ModelParams, ParamTree};

pub const ARTIFACT_VERSION: u32 = 1;

/// Serialized parameters, an optional Fisher diagonal and provenance.
///
/// JSON shape: `{"version", "params" (hex of the binary parameter format),
/// "fisher" (flat list in canonical tensor order, or null), "provenance",
/// "config_digest"}`. Every field is either model-sized or metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferArtifact {
    pub version: u32,
    #[serde(with = "hex_bytes")]
    pub params: Vec<u8>,
    pub fisher: Option<Vec<f64>>,
    /// Training silo ids, in training order.
    pub provenance: Vec<String>,
    pub config_digest: String,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Hex SHA-256 of a value's JSON encoding.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

impl TransferArtifact {
    pub fn new(
        params: &ModelParams,
        fisher: Option<&ParamTree>,
        provenance: Vec<String>,
        config_digest: String,
    ) -> Result<Self> {
        if provenance.is_empty() {
            return Err(Error::Artifact(
                "provenance must name at least one silo".into(),
            ));
        }
        if let Some(f) = fisher {
            params.learnable.check_shape(f, "Fisher diagonal")?;
            if f.tensors()
                .iter()
                .any(|(_, t)| t.iter().any(|v| !(*v >= 0.0) || !v.is_finite()))
            {
                return Err(Error::Artifact(
                    "Fisher entries must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(Self {
            version: ARTIFACT_VERSION,
            params: serialize_params(params),
            fisher: fisher.map(ParamTree::to_vec),
            provenance,
            config_digest,
        })
    }

    pub fn model(&self) -> Result<ModelParams> {
        if self.version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported artifact version {}",
                self.version
            )));
        }
        deserialize_params(&self.params)
    }

    pub fn fisher_tree(&self) -> Result<Option<ParamTree>> {
        let Some(values) = &self.fisher else {
            return Ok(None);
        };
        let template = self.model()?.learnable;
        let tree = template
            .with_values(values)
            .map_err(|_| Error::Artifact("Fisher diagonal does not match the parameters".into()))?;
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Artifact(
                "Fisher entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Some(tree))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parse and fully validate an artifact.
    pub fn from_json(text: &str) -> Result<Self> {
        let a: TransferArtifact = serde_json::from_str(text)
            .map_err(|e| Error::Artifact(format!("malformed artifact: {e}")))?;
        if a.provenance.is_empty() {
            return Err(Error::Artifact("empty provenance".into()));
        }
        a.model()?;
        a.fisher_tree()?;
        Ok(a)
    }
}
