//! Downstream evaluation: cross-lingual retrieval with margin scoring and
//! zero-shot transfer through a linear probe on frozen representations.

mod embeddings;
mod probe;
mod retrieval;

use std::path::Path;

use thiserror::Error;

pub use embeddings::{Embeddings, EMB_MAGIC, EMB_VERSION};
pub use probe::{probe_loss_and_grad, train_probe, ProbeConfig, ProbeModel};
pub use retrieval::{
    evaluate_retrieval, retrieve, retrieve_p_at_1, EvalIndex, Hit, MarginKind, ReportRow, RetrievalReport, Scoring,
};

use crate::model::{Model, ModelError};
use crate::tokenizer::TokenId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("vector {0} has zero or non-finite norm")]
    ZeroVector(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("margin k = {k} needs 1 <= k <= min(queries {queries}, targets {targets})")]
    BadK { k: usize, queries: usize, targets: usize },
    #[error("probe training set has fewer than two classes")]
    SingleClass,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Encodes `docs` with the frozen encoder and scores the probe on them.
pub fn zero_shot_transfer(
    model: &Model<f32>,
    probe: &ProbeModel,
    docs: &[Vec<TokenId>],
    labels: &[usize],
    batch_size: usize,
) -> Result<f64, EvalError> {
    if docs.len() != labels.len() {
        return Err(EvalError::Mismatch(format!("{} documents, {} labels", docs.len(), labels.len())));
    }
    let reps = model.embed(docs, batch_size)?;
    Ok(probe.accuracy(&reps, labels))
}

#[cfg(test)]
mod tests;
