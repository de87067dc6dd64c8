//! Lightweight dual-encoder sentence representations trained with a unified
//! generative task plus in-batch contrastive objectives, with everything
//! needed to run it end to end: tensors with reverse-mode autodiff, a BPE
//! tokenizer, parallel-corpus handling, the encoder, losses, training,
//! retrieval and transfer evaluation.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;
