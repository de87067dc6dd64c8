//! Training objectives: the generative task family (MLM, SMLM, XTR,
//! MLM+XTR, UGT), the in-batch alignment and similarity losses, and their
//! weighted sum.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{MlmTarget, PairBatch, Side, SideBatch, SparseDist};
use crate::model::{encode, generative_logits, BoundParams, EncoderConfig, Encoded, GenSource, ModelError};
use crate::tensor::{Float, Graph, Tensor, TensorError, Var};
use crate::tokenizer::TokenId;

/// Floor applied to `cos` before the log in the similarity loss.
pub const COS_FLOOR: f64 = 1e-7;
const LABEL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("label distribution {index} sums to {total}, not 1")]
    UnnormalizedLabel { index: usize, total: f64 },
    #[error("label mentions token {id} outside vocabulary of {vocab}")]
    LabelOutOfRange { id: TokenId, vocab: usize },
    #[error("{0} labels for a batch of {1}")]
    LabelCount(usize, usize),
    #[error("contrastive loss needs a non-empty batch")]
    EmptyBatch,
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

/// Which generative objective drives the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GenerativeMode {
    Mlm,
    Smlm,
    Xtr,
    MlmXtr,
    Ugt,
}

impl fmt::Display for GenerativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mlm => "MLM",
            Self::Smlm => "SMLM",
            Self::Xtr => "XTR",
            Self::MlmXtr => "MLM_XTR",
            Self::Ugt => "UGT",
        })
    }
}

impl FromStr for GenerativeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().replace('+', "_").as_str() {
            "MLM" => Ok(Self::Mlm),
            "SMLM" => Ok(Self::Smlm),
            "XTR" => Ok(Self::Xtr),
            "MLM_XTR" => Ok(Self::MlmXtr),
            "UGT" => Ok(Self::Ugt),
            _ => Err(format!("unknown generative mode {s:?} (MLM, SMLM, XTR, MLM_XTR, UGT)")),
        }
    }
}

/// How the contrastive sums are scaled before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Divide by batch size.
    #[default]
    Mean,
    /// Keep the plain sums over the batch.
    PaperSum,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::PaperSum => "paper_sum",
        })
    }
}

impl FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Self::Mean),
            "paper_sum" => Ok(Self::PaperSum),
            _ => Err(format!("unknown reduction {s:?} (mean, paper_sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub generative_mode: GenerativeMode,
    pub use_generative: bool,
    pub use_align: bool,
    pub use_sim: bool,
    /// Weights of (generative, align, sim).
    pub weights: [f64; 3],
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            generative_mode: GenerativeMode::Ugt,
            use_generative: true,
            use_align: true,
            use_sim: true,
            weights: [1.0, 2.0, 2.0],
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(LossError::InvalidConfig(format!("weights {:?} must be finite and non-negative", self.weights)));
        }
        if !(self.use_generative || self.use_align || self.use_sim) {
            return Err(LossError::InvalidConfig("at least one task must be enabled".into()));
        }
        Ok(())
    }

    /// True when no enabled component carries a positive weight.
    pub fn is_zero_gated(&self) -> bool {
        let on = [self.use_generative, self.use_align, self.use_sim];
        !on.iter().zip(self.weights).any(|(&e, w)| e && w > 0.0)
    }
}

/// Per-step loss values; disabled components report 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub generative: f64,
    pub align: f64,
    pub sim: f64,
    pub total: f64,
}

impl LossReport {
    pub fn nan() -> Self {
        Self {
            generative: f64::NAN,
            align: f64::NAN,
            sim: f64::NAN,
            total: f64::NAN,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.generative, self.align, self.sim, self.total].iter().all(|x| x.is_finite())
    }
}

fn dense_labels<T: Float>(q: &[SparseDist], vocab: usize) -> Result<Tensor<T>, LossError> {
    let mut data = vec![T::zero(); q.len() * vocab];
    for (i, dist) in q.iter().enumerate() {
        let total = dist.total();
        if (total - 1.0).abs() > LABEL_TOL {
            return Err(LossError::UnnormalizedLabel { index: i, total });
        }
        for &(id, p) in dist.entries() {
            if id >= vocab {
                return Err(LossError::LabelOutOfRange { id, vocab });
            }
            data[i * vocab + id] = T::of(p);
        }
    }
    Ok(Tensor::new(&[q.len(), vocab], data)?)
}

/// Batch-mean `KL(q || softmax(logits))` for `logits[b, V]`.
pub fn kl_divergence<T: Float>(g: &mut Graph<T>, logits: Var, q: &[SparseDist]) -> Result<Var, LossError> {
    let (b, vocab) = (g.shape(logits)[0], g.shape(logits)[1]);
    if q.len() != b {
        return Err(LossError::LabelCount(q.len(), b));
    }
    let labels = g.constant(dense_labels(q, vocab)?)?;
    let lsm = g.log_softmax(logits, 1)?;
    let cross = g.mul(labels, lsm)?;
    let cross = g.sum(cross)?;
    let neg_h: f64 = q.iter().map(SparseDist::neg_entropy).sum();
    let kl = g.scale(cross, -1.0 / b as f64)?;
    Ok(g.add_scalar(kl, neg_h / b as f64)?)
}

/// `KL(q_src || p_src) + KL(q_tgt || p_tgt)`, each averaged over the batch.
pub fn generative_loss<T: Float>(
    g: &mut Graph<T>,
    logits_src: Var,
    logits_tgt: Var,
    q_src: &[SparseDist],
    q_tgt: &[SparseDist],
) -> Result<Var, LossError> {
    let a = kl_divergence(g, logits_src, q_src)?;
    let b = kl_divergence(g, logits_tgt, q_tgt)?;
    Ok(g.add(a, b)?)
}

/// Batch-mean negative log-likelihood of `targets` under `softmax(logits)`.
pub fn cross_entropy<T: Float>(g: &mut Graph<T>, logits: Var, targets: &[TokenId]) -> Result<Var, LossError> {
    let lsm = g.log_softmax(logits, 1)?;
    let picked = g.pick(lsm, targets)?;
    let m = g.mean(picked)?;
    Ok(g.neg(m)?)
}

/// `-log p(w_t | masked sentence) - log p(w_t | translation)`, batch-averaged.
pub fn smlm_loss<T: Float>(
    g: &mut Graph<T>,
    masked_logits: Var,
    crosslingual_logits: Var,
    w_t: &[TokenId],
) -> Result<Var, LossError> {
    let a = cross_entropy(g, masked_logits, w_t)?;
    let b = cross_entropy(g, crosslingual_logits, w_t)?;
    Ok(g.add(a, b)?)
}

/// Mean cross-entropy at the selected positions of one side, read from the
/// per-position states through the generative head. `None` when nothing
/// was selected.
pub fn mlm_loss<T: Float>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &EncoderConfig,
    states: Var,
    len: usize,
    targets: &[MlmTarget],
) -> Result<Option<Var>, LossError> {
    if targets.is_empty() {
        return Ok(None);
    }
    let rows: Vec<usize> = targets.iter().map(|t| t.row * len + t.position).collect();
    let ids: Vec<TokenId> = targets.iter().map(|t| t.token).collect();
    let h = g.gather_rows(states, &rows)?;
    let logits = generative_logits(g, p, cfg, h)?;
    Ok(Some(cross_entropy(g, logits, &ids)?))
}

fn reduce<T: Float>(g: &mut Graph<T>, sum: Var, b: usize, reduction: Reduction) -> Result<Var, TensorError> {
    match reduction {
        Reduction::PaperSum => Ok(sum),
        Reduction::Mean => g.scale(sum, 1.0 / b as f64),
    }
}

/// In-batch alignment: row `j` of `u` is paired with row `j` of `v`; every
/// other row is a negative in both directions. Similarity is the raw inner
/// product.
pub fn align_loss<T: Float>(g: &mut Graph<T>, u: Var, v: Var, reduction: Reduction) -> Result<Var, LossError> {
    let b = g.shape(u)[0];
    if b == 0 || g.shape(u) != g.shape(v) {
        return Err(LossError::EmptyBatch);
    }
    let scores = g.matmul_nt(u, v)?;
    let diag: Vec<usize> = (0..b).collect();
    let by_row = g.log_softmax(scores, 1)?;
    let by_col = g.log_softmax(scores, 0)?;
    let r = g.pick(by_row, &diag)?;
    let c = g.pick(by_col, &diag)?;
    let both = g.add(r, c)?;
    let s = g.sum(both)?;
    let s = g.neg(s)?;
    Ok(reduce(g, s, b, reduction)?)
}

/// In-batch similarity: matches the softmax-normalised self-similarity rows
/// of `u` and `v` through `-log cos(pi/2 * (a - b))`, summed over all ordered
/// pairs including the diagonal.
pub fn sim_loss<T: Float>(g: &mut Graph<T>, u: Var, v: Var, reduction: Reduction) -> Result<Var, LossError> {
    let b = g.shape(u)[0];
    if b == 0 || g.shape(u) != g.shape(v) {
        return Err(LossError::EmptyBatch);
    }
    let su = g.matmul_nt(u, u)?;
    let sv = g.matmul_nt(v, v)?;
    let pu = g.softmax(su, 1)?;
    let pv = g.softmax(sv, 1)?;
    let diff = g.sub(pu, pv)?;
    let arg = g.scale(diff, FRAC_PI_2)?;
    let c = g.cos(arg)?;
    let c = g.clamp_min(c, COS_FLOOR)?;
    let l = g.log(c)?;
    let s = g.sum(l)?;
    let s = g.neg(s)?;
    Ok(reduce(g, s, b, reduction)?)
}

/// Component losses of one step, as graph nodes.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub generative: Option<Var>,
    pub align: Option<Var>,
    pub sim: Option<Var>,
}

/// Weighted sum of the enabled components; the report carries each
/// component's value (0 when disabled).
pub fn total_loss<T: Float>(g: &mut Graph<T>, parts: LossParts, cfg: &LossConfig) -> Result<(Var, LossReport), LossError> {
    let mut report = LossReport::default();
    let mut total: Option<Var> = None;
    let comps = [
        (parts.generative.filter(|_| cfg.use_generative), cfg.weights[0]),
        (parts.align.filter(|_| cfg.use_align), cfg.weights[1]),
        (parts.sim.filter(|_| cfg.use_sim), cfg.weights[2]),
    ];
    for (i, (var, w)) in comps.into_iter().enumerate() {
        let Some(var) = var else { continue };
        let value = g.value(var).item().as_f64();
        match i {
            0 => report.generative = value,
            1 => report.align = value,
            _ => report.sim = value,
        }
        let term = g.scale(var, w)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(T::zero()))?,
    };
    report.total = g.value(total).item().as_f64();
    Ok((total, report))
}

fn head_input<T: Float>(
    g: &mut Graph<T>,
    enc: &Encoded,
    side: &SideBatch,
    positions: Option<&[usize]>,
) -> Result<Var, TensorError> {
    match positions {
        Some(pos) => {
            let rows: Vec<usize> = pos.iter().enumerate().map(|(i, &p)| i * side.len + p).collect();
            g.gather_rows(enc.states, &rows)
        }
        None => Ok(enc.reps),
    }
}

/// Forward pass of both sides plus every enabled loss for one batch.
pub fn batch_objective<T: Float, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    p: &BoundParams,
    mcfg: &EncoderConfig,
    lcfg: &LossConfig,
    batch: &PairBatch,
    mut rng: Option<&mut R>,
) -> Result<(Var, LossReport, [Encoded; 2]), LossError> {
    let e1 = encode(g, p, mcfg, &batch.l1, rng.as_deref_mut())?;
    let e2 = encode(g, p, mcfg, &batch.l2, rng.as_deref_mut())?;
    let mut parts = LossParts::default();

    if lcfg.use_generative {
        let mask_pos: Vec<usize> = batch.masked.iter().map(|m| m.position).collect();
        let state_side = match (mcfg.gen_source, batch.masked_side) {
            (GenSource::MaskedState, Some(s)) => Some(s),
            _ => None,
        };
        let logits = |g: &mut Graph<T>, side: Side| -> Result<Var, LossError> {
            let (enc, sb) = match side {
                Side::L1 => (&e1, &batch.l1),
                Side::L2 => (&e2, &batch.l2),
            };
            let pos = (state_side == Some(side)).then_some(mask_pos.as_slice());
            let h = head_input(g, enc, sb, pos)?;
            Ok(generative_logits(g, p, mcfg, h)?)
        };
        let gen = match batch.mode {
            GenerativeMode::Smlm => {
                let side = batch.masked_side.expect("SMLM batches carry a masked side");
                let masked = logits(g, side)?;
                let cross = logits(g, side.other())?;
                let w_t: Vec<TokenId> = batch.masked.iter().map(|m| m.token).collect();
                Some(smlm_loss(g, masked, cross, &w_t)?)
            }
            GenerativeMode::Ugt | GenerativeMode::Xtr => {
                let a = logits(g, Side::L1)?;
                let b = logits(g, Side::L2)?;
                Some(generative_loss(g, a, b, &batch.q_l1, &batch.q_l2)?)
            }
            GenerativeMode::Mlm | GenerativeMode::MlmXtr => {
                let m1 = mlm_loss(g, p, mcfg, e1.states, batch.l1.len, &batch.mlm_l1)?;
                let m2 = mlm_loss(g, p, mcfg, e2.states, batch.l2.len, &batch.mlm_l2)?;
                let mut acc = match (m1, m2) {
                    (Some(a), Some(b)) => Some(g.add(a, b)?),
                    (a, b) => a.or(b),
                };
                if batch.mode == GenerativeMode::MlmXtr {
                    let a = logits(g, Side::L1)?;
                    let b = logits(g, Side::L2)?;
                    let x = generative_loss(g, a, b, &batch.q_l1, &batch.q_l2)?;
                    acc = Some(match acc {
                        Some(m) => g.add(m, x)?,
                        None => x,
                    });
                }
                acc
            }
        };
        parts.generative = gen;
    }
    if lcfg.use_align {
        parts.align = Some(align_loss(g, e1.reps, e2.reps, lcfg.reduction)?);
    }
    if lcfg.use_sim {
        parts.sim = Some(sim_loss(g, e1.reps, e2.reps, lcfg.reduction)?);
    }
    let (total, report) = total_loss(g, parts, lcfg)?;
    Ok((total, report, [e1, e2]))
}
