//! Model files: JSON metadata plus the coefficients as base64-encoded
//! little-endian f64, so a reload is bit-exact on every platform.

use anyhow::{bail, Context, Result};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use delta_scope::{LossKind, TrainedModel};

pub const MODEL_FORMAT: &str = "delta-scope-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub loss: String,
    pub lambda: f64,
    /// Feature dimension including the bias column, if any.
    pub dim: usize,
    /// A constant-1 column was appended at index `dim - 1`.
    pub bias: bool,
    pub n_train: usize,
    pub grad_residual: f64,
    pub beta_f64le_base64: String,
    /// Human-readable copy; `beta_f64le_base64` is authoritative.
    pub beta: Vec<f64>,
}

impl ModelArtifact {
    pub fn from_model(model: &TrainedModel, bias: bool) -> Self {
        let bytes: Vec<u8> = model.beta.iter().flat_map(|b| b.to_le_bytes()).collect();
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            loss: model.kind.to_string(),
            lambda: model.lambda,
            dim: model.dim(),
            bias,
            n_train: model.n_train,
            grad_residual: model.grad_residual,
            beta_f64le_base64: STANDARD.encode(bytes),
            beta: model.beta.clone(),
        }
    }

    pub fn to_model(&self) -> Result<TrainedModel> {
        if self.format != MODEL_FORMAT {
            bail!("not a model file (format {:?})", self.format);
        }
        if self.version != MODEL_VERSION {
            bail!("unsupported model version {}", self.version);
        }
        let bytes = STANDARD
            .decode(&self.beta_f64le_base64)
            .context("decoding coefficients")?;
        if bytes.len() != 8 * self.dim {
            bail!(
                "coefficient payload holds {} bytes, expected {}",
                bytes.len(),
                8 * self.dim
            );
        }
        let beta = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(TrainedModel {
            beta,
            lambda: self.lambda,
            kind: self.loss.parse::<LossKind>()?,
            grad_residual: self.grad_residual,
            n_train: self.n_train,
        })
    }

    /// Dimension of the raw feature files this model reads.
    pub fn raw_dim(&self) -> usize {
        self.dim - usize::from(self.bias)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("parsing model file")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = TrainedModel {
            beta: vec![0.1 + 0.2, -1e-310, f64::MAX, 0.0, -0.0],
            lambda: 0.01,
            kind: LossKind::L2Hinge,
            grad_residual: 3e-9,
            n_train: 12,
        };
        let art = ModelArtifact::from_model(&model, true);
        let back = ModelArtifact::from_json(&art.to_json().unwrap())
            .unwrap()
            .to_model()
            .unwrap();
        let bits = |v: &[f64]| v.iter().map(|b| b.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.beta), bits(&model.beta));
        assert_eq!(back.kind, model.kind);
        assert_eq!(art.raw_dim(), 4);
    }

    #[test]
    fn rejects_foreign_files() {
        let model = TrainedModel {
            beta: vec![1.0],
            lambda: 1.0,
            kind: LossKind::Logistic,
            grad_residual: 0.0,
            n_train: 2,
        };
        let mut art = ModelArtifact::from_model(&model, false);
        art.format = "other".into();
        assert!(art.to_model().is_err());
        let mut art = ModelArtifact::from_model(&model, false);
        art.dim = 2;
        assert!(art.to_model().is_err());
    }
}
