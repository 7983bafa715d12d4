//! Model persistence: one schema-versioned JSON document for both the
//! network classifiers and the linear baselines. Floats are emitted with
//! shortest round-trip formatting, so a loaded model predicts bit-for-bit
//! identically to the saved one.

use crate::baselines::LinearModel;
use crate::nn::{NetworkParams, NetworkSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("unsupported schema version {got} (this build reads {SCHEMA_VERSION})")]
    SchemaVersion { got: u32 },
    #[error("malformed model document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The saved artifact, tagged by model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    Network {
        spec: NetworkSpec,
        train_config: TrainConfig,
        params: NetworkParams,
    },
    Linear(LinearModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub kind: ModelKind,
}

impl ModelDocument {
    pub fn network(spec: NetworkSpec, train_config: TrainConfig, params: NetworkParams) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: ModelKind::Network {
                spec,
                train_config,
                params,
            },
        }
    }

    pub fn linear(model: LinearModel) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: ModelKind::Linear(model),
        }
    }
}

/// Serializes a model document to its on-disk text form.
pub fn save_model(doc: &ModelDocument) -> Result<String, ModelIoError> {
    Ok(serde_json::to_string_pretty(doc)?)
}

/// Parses a model document, rejecting unknown schema versions.
pub fn load_model(text: &str) -> Result<ModelDocument, ModelIoError> {
    let doc: ModelDocument = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ModelIoError::SchemaVersion {
            got: doc.schema_version,
        });
    }
    Ok(doc)
}
