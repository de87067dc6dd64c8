use rand::seq::SliceRandom;
use rand::Rng;

use crate::losses::GenerativeMode;
use crate::tokenizer::{TokenId, MASK, PAD, SPECIAL_TOKENS};

use super::labels::{point_mass, ugt_label, xtr_label, LabelWeighting, SparseDist};
use super::{maskable_positions, CorpusError, SentencePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    L1,
    L2,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::L1 => Side::L2,
            Side::L2 => Side::L1,
        }
    }

    /// Even steps mask l1, odd steps mask l2.
    pub fn for_step(step: usize) -> Side {
        if step % 2 == 0 {
            Side::L1
        } else {
            Side::L2
        }
    }
}

/// Label used for the side whose sentence was not masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnmaskedLabel {
    /// Same half/half construction as the masked side.
    #[default]
    Unified,
    /// Plain reconstruction label over the masked sentence's tokens.
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub mode: GenerativeMode,
    pub weighting: LabelWeighting,
    pub unmasked_label: UnmaskedLabel,
    /// Fraction of positions selected in MLM modes.
    pub mlm_prob: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            mode: GenerativeMode::Ugt,
            weighting: LabelWeighting::Distinct,
            unmasked_label: UnmaskedLabel::Unified,
            mlm_prob: 0.15,
        }
    }
}

/// One side of a batch, right-padded to the longest sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideBatch {
    /// `batch * len` ids, row-major.
    pub ids: Vec<TokenId>,
    /// `true` at real positions, `false` at padding.
    pub attn: Vec<bool>,
    pub batch: usize,
    pub len: usize,
}

impl SideBatch {
    pub fn from_seqs<S: AsRef<[TokenId]>>(seqs: &[S]) -> Self {
        let len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut attn = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            attn.extend(std::iter::repeat_n(true, s.len()));
            ids.extend(std::iter::repeat_n(PAD, len - s.len()));
            attn.extend(std::iter::repeat_n(false, len - s.len()));
        }
        Self {
            ids,
            attn,
            batch: seqs.len(),
            len,
        }
    }

    pub fn row(&self, i: usize) -> &[TokenId] {
        &self.ids[i * self.len..(i + 1) * self.len]
    }
}

/// The single token replaced by MASK in pair `i` of the masked side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedToken {
    pub position: usize,
    pub token: TokenId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlmTarget {
    pub row: usize,
    pub position: usize,
    pub token: TokenId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub l1: SideBatch,
    pub l2: SideBatch,
    pub mode: GenerativeMode,
    /// Side that carries the single-token mask, for SMLM and UGT.
    pub masked_side: Option<Side>,
    /// Per-pair masked token, for SMLM and UGT.
    pub masked: Vec<MaskedToken>,
    /// Per-pair label distributions for the KL objective of each side.
    pub q_l1: Vec<SparseDist>,
    pub q_l2: Vec<SparseDist>,
    pub mlm_l1: Vec<MlmTarget>,
    pub mlm_l2: Vec<MlmTarget>,
}

impl PairBatch {
    pub fn size(&self) -> usize {
        self.l1.batch
    }

    pub fn side(&self, side: Side) -> &SideBatch {
        match side {
            Side::L1 => &self.l1,
            Side::L2 => &self.l2,
        }
    }

    pub fn labels(&self, side: Side) -> &[SparseDist] {
        match side {
            Side::L1 => &self.q_l1,
            Side::L2 => &self.q_l2,
        }
    }

    pub fn mlm_targets(&self, side: Side) -> &[MlmTarget] {
        match side {
            Side::L1 => &self.mlm_l1,
            Side::L2 => &self.mlm_l2,
        }
    }
}

/// Draws one maskable position uniformly; `None` when there is none.
pub fn sample_mask_position<R: Rng + ?Sized>(ids: &[TokenId], rng: &mut R) -> Option<usize> {
    let cand = maskable_positions(ids);
    if cand.is_empty() {
        None
    } else {
        Some(cand[rng.gen_range(0..cand.len())])
    }
}

pub fn shuffled_order<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// BERT-style corruption: each maskable position is selected with
/// probability `prob`; selected tokens become MASK (80%), a random real
/// token (10%) or stay unchanged (10%).
fn mlm_corrupt<R: Rng + ?Sized>(
    ids: &mut [TokenId],
    row: usize,
    prob: f64,
    vocab_size: usize,
    rng: &mut R,
    out: &mut Vec<MlmTarget>,
) {
    for pos in maskable_positions(ids) {
        if rng.gen::<f64>() >= prob {
            continue;
        }
        out.push(MlmTarget {
            row,
            position: pos,
            token: ids[pos],
        });
        let r: f64 = rng.gen();
        if r < 0.8 {
            ids[pos] = MASK;
        } else if r < 0.9 && vocab_size > SPECIAL_TOKENS.len() {
            ids[pos] = rng.gen_range(SPECIAL_TOKENS.len()..vocab_size);
        }
    }
}

/// Builds a training batch for `step`.
///
/// Pairs without a maskable token on the side that needs one are skipped
/// with a warning.
pub fn make_batch<R: Rng + ?Sized>(
    pairs: &[&SentencePair],
    vocab_size: usize,
    cfg: &BatchConfig,
    step: usize,
    rng: &mut R,
) -> Result<PairBatch, CorpusError> {
    let single = matches!(cfg.mode, GenerativeMode::Smlm | GenerativeMode::Ugt);
    let masked_side = single.then(|| Side::for_step(step));

    let mut l1 = Vec::with_capacity(pairs.len());
    let mut l2 = Vec::with_capacity(pairs.len());
    let mut masked = Vec::new();
    let (mut q_l1, mut q_l2) = (Vec::new(), Vec::new());
    let (mut mlm_l1, mut mlm_l2) = (Vec::new(), Vec::new());

    for (i, pair) in pairs.iter().enumerate() {
        let mut src = pair.src.clone();
        let mut tgt = pair.tgt.clone();
        let row = l1.len();
        match cfg.mode {
            GenerativeMode::Smlm | GenerativeMode::Ugt => {
                let side = masked_side.expect("single-token modes have a masked side");
                let Some(pos) = sample_mask_position(pair.side(side), rng) else {
                    log::warn!("batch pair {i}: no maskable token, skipped");
                    continue;
                };
                let token = pair.side(side)[pos];
                match side {
                    Side::L1 => src[pos] = MASK,
                    Side::L2 => tgt[pos] = MASK,
                }
                masked.push(MaskedToken { position: pos, token });
                if cfg.mode == GenerativeMode::Smlm {
                    q_l1.push(point_mass(token));
                    q_l2.push(point_mass(token));
                } else {
                    let masked_q = ugt_label(token, pair.side(side.other()), cfg.weighting);
                    let other_q = match cfg.unmasked_label {
                        UnmaskedLabel::Unified => ugt_label(token, pair.side(side), cfg.weighting),
                        UnmaskedLabel::Reconstruction => xtr_label(pair.side(side), cfg.weighting),
                    };
                    let (a, b) = match side {
                        Side::L1 => (masked_q, other_q),
                        Side::L2 => (other_q, masked_q),
                    };
                    q_l1.push(a);
                    q_l2.push(b);
                }
            }
            GenerativeMode::Xtr => {
                q_l1.push(xtr_label(&pair.tgt, cfg.weighting));
                q_l2.push(xtr_label(&pair.src, cfg.weighting));
            }
            GenerativeMode::Mlm | GenerativeMode::MlmXtr => {
                mlm_corrupt(&mut src, row, cfg.mlm_prob, vocab_size, rng, &mut mlm_l1);
                mlm_corrupt(&mut tgt, row, cfg.mlm_prob, vocab_size, rng, &mut mlm_l2);
                if cfg.mode == GenerativeMode::MlmXtr {
                    q_l1.push(xtr_label(&pair.tgt, cfg.weighting));
                    q_l2.push(xtr_label(&pair.src, cfg.weighting));
                }
            }
        }
        l1.push(src);
        l2.push(tgt);
    }
    if l1.is_empty() {
        return Err(CorpusError::EmptyBatch);
    }
    Ok(PairBatch {
        l1: SideBatch::from_seqs(&l1),
        l2: SideBatch::from_seqs(&l2),
        mode: cfg.mode,
        masked_side,
        masked,
        q_l1,
        q_l2,
        mlm_l1,
        mlm_l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(src: &[TokenId], tgt: &[TokenId]) -> SentencePair {
        SentencePair::new(src.to_vec(), tgt.to_vec()).unwrap()
    }

    #[test]
    fn ugt_batch_masks_one_token_and_builds_labels() {
        let p = pair(&[10, 11, 12], &[20, 21]);
        let cfg = BatchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = make_batch(&[&p], 100, &cfg, 0, &mut rng).unwrap();
        assert_eq!(b.masked_side, Some(Side::L1));
        let m = b.masked[0];
        assert_eq!(b.l1.ids[m.position], MASK);
        assert_eq!(b.l1.ids.iter().filter(|&&t| t == MASK).count(), 1);
        assert_eq!(p.src[m.position], m.token);
        assert_eq!(b.l2.ids, vec![20, 21]);
        let q = &b.q_l1[0];
        assert_eq!(q.prob(m.token), 0.5);
        assert_eq!(q.prob(20), 0.25);
        assert_eq!(q.prob(21), 0.25);
        // unmasked side: half on w_t, half over the masked sentence's types
        let q2 = &b.q_l2[0];
        assert!((q2.prob(m.token) - (0.5 + 0.5 / 3.0)).abs() < 1e-15);
        assert!((q2.total() - 1.0).abs() < 1e-12);

        let b = make_batch(&[&p], 100, &cfg, 1, &mut rng).unwrap();
        assert_eq!(b.masked_side, Some(Side::L2));
        assert_eq!(b.l1.ids, vec![10, 11, 12]);
    }

    #[test]
    fn reconstruction_label_for_unmasked_side() {
        let p = pair(&[10, 11], &[20, 21]);
        let cfg = BatchConfig {
            unmasked_label: UnmaskedLabel::Reconstruction,
            ..BatchConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = make_batch(&[&p], 100, &cfg, 0, &mut rng).unwrap();
        assert_eq!(b.q_l2[0].prob(10), 0.5);
        assert_eq!(b.q_l2[0].prob(11), 0.5);
    }

    #[test]
    fn xtr_batch_has_no_mask() {
        let p = pair(&[10, 11, 12], &[20, 21, 22]);
        let cfg = BatchConfig {
            mode: GenerativeMode::Xtr,
            ..BatchConfig::default()
        };
        let b = make_batch(&[&p], 100, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(b.masked_side.is_none());
        assert!(!b.l1.ids.contains(&MASK));
        for t in [20, 21, 22] {
            assert_eq!(b.q_l1[0].prob(t), 1.0 / 3.0);
        }
    }

    #[test]
    fn padding_and_attention_mask() {
        let p1 = pair(&[10], &[20, 21, 22]);
        let p2 = pair(&[10, 11, 12], &[20]);
        let cfg = BatchConfig {
            mode: GenerativeMode::Xtr,
            ..BatchConfig::default()
        };
        let b = make_batch(&[&p1, &p2], 100, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.l1.len, 3);
        assert_eq!(b.l1.row(0), &[10, PAD, PAD]);
        assert_eq!(&b.l1.attn[..3], &[true, false, false]);
    }

    #[test]
    fn pairs_without_maskable_tokens_are_skipped() {
        let ok = pair(&[10], &[20]);
        let bad = pair(&[crate::tokenizer::UNK], &[20]);
        let cfg = BatchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batch(&[&bad, &ok], 100, &cfg, 0, &mut rng).unwrap();
        assert_eq!(b.size(), 1);
        assert!(matches!(make_batch(&[&bad], 100, &cfg, 0, &mut rng), Err(CorpusError::EmptyBatch)));
    }

    #[test]
    fn mlm_corruption_rates() {
        let long: Vec<TokenId> = (10..110).collect();
        let p = pair(&long, &long);
        let cfg = BatchConfig {
            mode: GenerativeMode::Mlm,
            ..BatchConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut selected, mut masked) = (0, 0);
        for step in 0..50 {
            let b = make_batch(&[&p], 200, &cfg, step, &mut rng).unwrap();
            selected += b.mlm_l1.len();
            masked += b.l1.ids.iter().filter(|&&t| t == MASK).count();
            for t in &b.mlm_l1 {
                assert_eq!(t.token, long[t.position]);
            }
            assert!(b.q_l1.is_empty());
        }
        let rate = selected as f64 / 5000.0;
        assert!((rate - 0.15).abs() < 0.02, "selection rate {rate}");
        let mask_frac = masked as f64 / selected as f64;
        assert!((mask_frac - 0.8).abs() < 0.05, "mask fraction {mask_frac}");
    }

    #[test]
    fn shuffle_is_deterministic() {
        let a = shuffled_order(50, &mut ChaCha8Rng::seed_from_u64(9));
        let b = shuffled_order(50, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }
}
