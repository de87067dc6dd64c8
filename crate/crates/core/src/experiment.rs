//! The synthetic end-to-end run: generate the toy bilingual corpus, learn a
//! vocabulary, train, then measure retrieval in both directions and
//! zero-shot transfer of a probe trained on language A.

use std::time::Instant;

use thiserror::Error;

use crate::config::RunConfig;
use crate::corpus::{tokenize_pairs, SentencePair};
use crate::eval::{retrieve_p_at_1, train_probe, zero_shot_transfer, EvalError, EvalIndex};
use crate::model::Model;
use crate::synthetic::{make_synthetic_corpus, SynthPair, SyntheticCorpus};
use crate::tokenizer::{train_bpe, TokenId, TokenizerError, Vocab};
use crate::trainer::{TrainError, Trainer};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("synthetic corpus: {0}")]
    Synthetic(String),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Retrieval P@1 with A queries against B targets.
    pub p_at_1_ab: f64,
    pub p_at_1_ba: f64,
    /// Probe accuracy on the A test split.
    pub source_accuracy: f64,
    /// Probe accuracy on the B test split.
    pub transfer_accuracy: f64,
    pub chance: f64,
    pub epoch_losses: Vec<f64>,
    pub vocab_size: usize,
    pub seconds: f64,
}

impl ExperimentResult {
    pub fn summary(&self) -> String {
        format!(
            "P@1 A->B {:.3}  B->A {:.3}  probe A {:.3}  transfer B {:.3} (chance {:.3})  loss {:.3} -> {:.3}  {:.0}s",
            self.p_at_1_ab,
            self.p_at_1_ba,
            self.source_accuracy,
            self.transfer_accuracy,
            self.chance,
            self.epoch_losses.first().copied().unwrap_or(f64::NAN),
            self.epoch_losses.last().copied().unwrap_or(f64::NAN),
            self.seconds
        )
    }
}

/// Vocabulary learned from both sides of the training split.
pub fn synthetic_vocab(corpus: &SyntheticCorpus, target_size: usize) -> Result<Vocab, TokenizerError> {
    train_bpe(corpus.train.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()]), target_size)
}

fn to_pairs(vocab: &Vocab, split: &[SynthPair]) -> Vec<SentencePair> {
    let raw: Vec<(String, String)> = split.iter().map(|p| (p.a.clone(), p.b.clone())).collect();
    tokenize_pairs(vocab, &raw)
}

fn encode_side(vocab: &Vocab, split: &[SynthPair], b_side: bool) -> Vec<Vec<TokenId>> {
    split
        .iter()
        .map(|p| vocab.encode(if b_side { &p.b } else { &p.a }).ids)
        .collect()
}

/// Runs the whole pipeline with `cfg`; the synthetic corpus and the model
/// both use `cfg.setup.train.seed`. The model vocabulary is resized to the
/// learned vocabulary.
pub fn run_synthetic(cfg: &RunConfig) -> Result<ExperimentResult, ExperimentError> {
    let start = Instant::now();
    let seed = cfg.setup.train.seed;
    let corpus = make_synthetic_corpus(&cfg.synth, seed).map_err(ExperimentError::Synthetic)?;
    let vocab = synthetic_vocab(&corpus, cfg.vocab_size)?;
    let mut setup = cfg.setup.clone();
    setup.model.vocab_size = vocab.size();

    let train_pairs = to_pairs(&vocab, &corpus.train);
    let mut trainer = Trainer::new(setup, &train_pairs)?;
    trainer.run(None)?;
    let epoch_losses = trainer.epoch_losses();
    let model = trainer.model;

    let mut r = evaluate_synthetic(&model, &vocab, &corpus, cfg)?;
    r.epoch_losses = epoch_losses;
    r.seconds = start.elapsed().as_secs_f64();
    Ok(r)
}

/// Retrieval on the test split and probe transfer from A to B.
pub fn evaluate_synthetic(
    model: &Model<f32>,
    vocab: &Vocab,
    corpus: &SyntheticCorpus,
    cfg: &RunConfig,
) -> Result<ExperimentResult, ExperimentError> {
    let bs = cfg.eval.batch_size;
    let scoring = cfg.eval.scoring();
    let test_a = model.embed(&encode_side(vocab, &corpus.test, false), bs).map_err(EvalError::from)?;
    let test_b = model.embed(&encode_side(vocab, &corpus.test, true), bs).map_err(EvalError::from)?;
    let ia = EvalIndex::with_line_ids(&test_a)?;
    let ib = EvalIndex::with_line_ids(&test_b)?;
    let p_at_1_ab = retrieve_p_at_1(&ia, &ib, scoring)?;
    let p_at_1_ba = retrieve_p_at_1(&ib, &ia, scoring)?;

    let labels = |s: &[SynthPair]| s.iter().map(|p| p.label).collect::<Vec<_>>();
    let train_a = model.embed(&encode_side(vocab, &corpus.train, false), bs).map_err(EvalError::from)?;
    let val_a = model.embed(&encode_side(vocab, &corpus.val, false), bs).map_err(EvalError::from)?;
    let probe = train_probe(&train_a, &labels(&corpus.train), &val_a, &labels(&corpus.val), &cfg.probe)?;
    let test_labels = labels(&corpus.test);
    let source_accuracy = probe.accuracy(&test_a, &test_labels);
    let transfer_accuracy = zero_shot_transfer(model, &probe, &encode_side(vocab, &corpus.test, true), &test_labels, bs)?;

    Ok(ExperimentResult {
        p_at_1_ab,
        p_at_1_ba,
        source_accuracy,
        transfer_accuracy,
        chance: 1.0 / cfg.synth.n_classes as f64,
        epoch_losses: Vec::new(),
        vocab_size: vocab.size(),
        seconds: 0.0,
    })
}
