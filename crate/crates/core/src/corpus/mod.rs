//! Parallel corpus ingestion, filtering, label distributions and batching.

mod batch;
mod filter;
mod labels;

use std::path::Path;

use thiserror::Error;

pub use batch::{
    make_batch, sample_mask_position, shuffled_order, BatchConfig, MaskedToken, MlmTarget, PairBatch, Side, SideBatch,
    UnmaskedLabel,
};
pub use filter::{check_pair, filter_pairs, read_parallel, read_tsv, CharsetRule, DropReason, FilterReport, FilterRules};
pub use labels::{point_mass, ugt_label, xtr_label, LabelWeighting, SparseDist};

use crate::tokenizer::{TokenId, Vocab};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("misaligned corpus: source has {src_lines} lines, target has {tgt_lines}")]
    Misaligned { src_lines: usize, tgt_lines: usize },
    #[error("{path}:{line}: {detail}")]
    Format { path: String, line: usize, detail: String },
    #[error("empty batch: no pair had a maskable token")]
    EmptyBatch,
    #[error("sentence pair has an empty side")]
    EmptySide,
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A tokenized translation pair; `src` is language l1, `tgt` language l2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
}

impl SentencePair {
    pub fn new(src: Vec<TokenId>, tgt: Vec<TokenId>) -> Result<Self, CorpusError> {
        if src.is_empty() || tgt.is_empty() {
            return Err(CorpusError::EmptySide);
        }
        Ok(Self { src, tgt })
    }

    pub fn side(&self, side: Side) -> &[TokenId] {
        match side {
            Side::L1 => &self.src,
            Side::L2 => &self.tgt,
        }
    }
}

/// Positions holding a real (non-special) token.
pub fn maskable_positions(ids: &[TokenId]) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &t)| !Vocab::is_special(t))
        .map(|(i, _)| i)
        .collect()
}

/// Tokenizes pairs, dropping (with a warning) any pair where a side is empty
/// or has no maskable token.
pub fn tokenize_pairs(vocab: &Vocab, pairs: &[(String, String)]) -> Vec<SentencePair> {
    let mut out = Vec::with_capacity(pairs.len());
    for (i, (s, t)) in pairs.iter().enumerate() {
        let (src, tgt) = (vocab.encode(s).ids, vocab.encode(t).ids);
        if maskable_positions(&src).is_empty() || maskable_positions(&tgt).is_empty() {
            log::warn!("skipping pair {i}: a side has no maskable token");
            continue;
        }
        out.push(SentencePair { src, tgt });
    }
    out
}
