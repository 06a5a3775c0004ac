// SPDX-License-Identifier: Apache-2.0

//! Versioned JSON checkpoints.
//!
//! Top-level keys: `version`, `kind`, `encoder`, `model`, `config` and an
//! optional `created_unix`. Floats are written in their shortest
//! round-trip form and parsed back exactly, so a reloaded model reproduces
//! every output bit for bit.
//!
//! `model.lambda_logits` is flat: `K` values for QMR, `N x K` class-major
//! for DMKDC. `model.V` is a list of rows: `K` rows of length `D * N` for
//! QMR (entry `(d, r)` at `d * N + r`), `N * K` rows of length `D` for DMKDC.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::Params;
use crate::dmkdc::DmkdcModel;
use crate::error::{Error, Result};
use crate::qmr::{QmrConfig, QmrModel};
use crate::rff::RffEncoder;
use crate::training::{ModelKind, TrainedModel};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with the encoder that feeds it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: RffEncoder,
    pub model: TrainedModel,
    pub config: Option<QmrConfig>,
    pub created_unix: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u32,
    kind: ModelKind,
    encoder: EncoderDoc,
    model: ModelDoc,
    config: Option<QmrConfig>,
    #[serde(default)]
    created_unix: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderDoc {
    input_dim: usize,
    rff_dim: usize,
    gamma: f64,
    seed: u64,
    #[serde(rename = "W")]
    weights: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    num_components: usize,
    state_dim: usize,
    num_grades: usize,
    lambda_logits: Vec<f64>,
    #[serde(rename = "V")]
    vectors: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(encoder: RffEncoder, model: TrainedModel, config: Option<QmrConfig>) -> Result<Self> {
        if encoder.rff_dim() != model.state_dim() {
            return Err(Error::invalid(format!(
                "encoder produces {} features, model expects {}",
                encoder.rff_dim(),
                model.state_dim()
            )));
        }
        Ok(Self {
            encoder,
            model,
            config,
            created_unix: None,
        })
    }

    pub fn to_json(&self) -> String {
        let enc = &self.encoder;
        let params = self.model.params();
        let row_len = params.vectors.len() / params.logits.len();
        let doc = Document {
            version: CHECKPOINT_VERSION,
            kind: self.model.kind(),
            encoder: EncoderDoc {
                input_dim: enc.input_dim(),
                rff_dim: enc.rff_dim(),
                gamma: enc.gamma(),
                seed: enc.seed(),
                weights: enc
                    .weights()
                    .chunks_exact(enc.input_dim())
                    .map(<[f64]>::to_vec)
                    .collect(),
                b: enc.phases().to_vec(),
            },
            model: ModelDoc {
                num_components: self.model.num_components(),
                state_dim: self.model.state_dim(),
                num_grades: self.model.num_grades(),
                lambda_logits: params.logits.clone(),
                vectors: params.vectors.chunks_exact(row_len).map(<[f64]>::to_vec).collect(),
            },
            config: self.config.clone(),
            created_unix: self.created_unix,
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::MalformedCheckpoint("missing integer `version`".into()))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::VersionMismatch {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        let doc: Document =
            serde_json::from_value(value).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let bad = |e: Error| Error::MalformedCheckpoint(e.to_string());

        let e = doc.encoder;
        if e.weights.len() != e.rff_dim || e.weights.iter().any(|r| r.len() != e.input_dim) {
            return Err(Error::MalformedCheckpoint(format!(
                "encoder W must be {}x{}",
                e.rff_dim, e.input_dim
            )));
        }
        let encoder = RffEncoder::from_parts(
            e.input_dim,
            e.rff_dim,
            e.gamma,
            e.seed,
            e.weights.concat(),
            e.b,
        )
        .map_err(bad)?;

        let m = doc.model;
        let (rows, row_len) = match doc.kind {
            ModelKind::Qmr => (m.num_components, m.state_dim * m.num_grades),
            ModelKind::Dmkdc => (m.num_grades * m.num_components, m.state_dim),
        };
        if m.vectors.len() != rows || m.vectors.iter().any(|r| r.len() != row_len) {
            return Err(Error::MalformedCheckpoint(format!(
                "model V must be {rows}x{row_len}"
            )));
        }
        let params = Params {
            logits: m.lambda_logits,
            vectors: m.vectors.concat(),
        };
        let model = match doc.kind {
            ModelKind::Qmr => TrainedModel::Qmr(
                QmrModel::new(m.state_dim, m.num_grades, m.num_components, params).map_err(bad)?,
            ),
            ModelKind::Dmkdc => TrainedModel::Dmkdc(
                DmkdcModel::new(m.state_dim, m.num_grades, m.num_components, params)
                    .map_err(bad)?,
            ),
        };
        let mut ckpt = Checkpoint::new(encoder, model, doc.config).map_err(bad)?;
        ckpt.created_unix = doc.created_unix;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_json() + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededStream;

    fn sample_checkpoint(kind: ModelKind) -> Checkpoint {
        let encoder = RffEncoder::sample(3, 6, 0.25, 4).unwrap();
        let model = match kind {
            ModelKind::Qmr => TrainedModel::Qmr(QmrModel::random(6, 5, 3, 1).unwrap()),
            ModelKind::Dmkdc => TrainedModel::Dmkdc(DmkdcModel::random(6, 5, 3, 1).unwrap()),
        };
        Checkpoint::new(encoder, model, Some(QmrConfig::default())).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut s = SeededStream::new(10);
        for kind in [ModelKind::Qmr, ModelKind::Dmkdc] {
            let ckpt = sample_checkpoint(kind);
            let back = Checkpoint::from_json(&ckpt.to_json()).unwrap();
            assert_eq!(back, ckpt);
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| s.normal()).collect();
                let a = ckpt.model.posterior(&ckpt.encoder.encode(&x).unwrap()).unwrap();
                let b = back.model.posterior(&back.encoder.encode(&x).unwrap()).unwrap();
                let bits = |p: &crate::posterior::Posterior| -> Vec<u64> {
                    p.probs().iter().map(|v| v.to_bits()).collect()
                };
                assert_eq!(bits(&a), bits(&b));
            }
        }
    }

    #[test]
    fn version_mismatch() {
        let text = sample_checkpoint(ModelKind::Qmr)
            .to_json()
            .replacen("\"version\": 1", "\"version\": 999", 1);
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(Error::VersionMismatch { found: 999, .. })
        ));
    }

    #[test]
    fn truncated_is_malformed() {
        let text = sample_checkpoint(ModelKind::Dmkdc).to_json();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            Checkpoint::from_json(cut),
            Err(Error::MalformedCheckpoint(_))
        ));
    }

    #[test]
    fn inconsistent_dimensions_rejected() {
        let text = sample_checkpoint(ModelKind::Qmr).to_json();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["model"]["num_grades"] = 4.into();
        assert!(matches!(
            Checkpoint::from_json(&value.to_string()),
            Err(Error::MalformedCheckpoint(_))
        ));
        let encoder = RffEncoder::sample(3, 7, 0.25, 4).unwrap();
        let model = TrainedModel::Qmr(QmrModel::random(6, 5, 3, 1).unwrap());
        assert!(Checkpoint::new(encoder, model, None).is_err());
    }

    #[test]
    fn top_level_keys() {
        let value: serde_json::Value =
            serde_json::from_str(&sample_checkpoint(ModelKind::Dmkdc).to_json()).unwrap();
        for key in ["version", "kind", "encoder", "model", "config"] {
            assert!(value.get(key).is_some(), "{key}");
        }
        assert_eq!(value["kind"], "dmkdc");
        for key in ["input_dim", "rff_dim", "gamma", "seed", "W", "b"] {
            assert!(value["encoder"].get(key).is_some(), "{key}");
        }
    }
}
