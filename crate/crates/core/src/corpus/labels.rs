use std::collections::BTreeMap;

use crate::tokenizer::{TokenId, Vocab};

/// How token mass is spread over the opposite sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelWeighting {
    /// `1/D` for each of the `D` distinct token types.
    #[default]
    Distinct,
    /// `count/length`, the frequency-weighted reading.
    Frequency,
}

/// A probability distribution over token ids, stored sparsely and sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDist {
    entries: Vec<(TokenId, f64)>,
}

impl SparseDist {
    fn from_map(m: BTreeMap<TokenId, f64>) -> Self {
        Self {
            entries: m.into_iter().filter(|&(_, p)| p > 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.entries
            .binary_search_by_key(&id, |&(t, _)| t)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `sum q log q` over the support.
    pub fn neg_entropy(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p * p.ln()).sum()
    }
}

pub fn point_mass(token: TokenId) -> SparseDist {
    SparseDist {
        entries: vec![(token, 1.0)],
    }
}

fn spread(opposite: &[TokenId], weighting: LabelWeighting, mass: f64, into: &mut BTreeMap<TokenId, f64>) {
    let real: Vec<TokenId> = opposite.iter().copied().filter(|&t| !Vocab::is_special(t)).collect();
    if real.is_empty() {
        return;
    }
    let mut counts: BTreeMap<TokenId, usize> = BTreeMap::new();
    for &t in &real {
        *counts.entry(t).or_insert(0) += 1;
    }
    let distinct = counts.len() as f64;
    let length = real.len() as f64;
    for (t, c) in counts {
        let p = match weighting {
            LabelWeighting::Distinct => 1.0 / distinct,
            LabelWeighting::Frequency => c as f64 / length,
        };
        *into.entry(t).or_insert(0.0) += mass * p;
    }
}

/// Reconstruction label: mass spread over the opposite sentence's tokens.
pub fn xtr_label(opposite: &[TokenId], weighting: LabelWeighting) -> SparseDist {
    let mut m = BTreeMap::new();
    spread(opposite, weighting, 1.0, &mut m);
    SparseDist::from_map(m)
}

/// Unified label: half the mass on the masked token, half spread over the
/// opposite sentence. Overlapping mass adds.
pub fn ugt_label(masked: TokenId, opposite: &[TokenId], weighting: LabelWeighting) -> SparseDist {
    let mut m = BTreeMap::new();
    m.insert(masked, 0.5);
    spread(opposite, weighting, 0.5, &mut m);
    SparseDist::from_map(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    // ids >= 5 are real tokens
    const A: TokenId = 10;
    const B: TokenId = 11;
    const C: TokenId = 12;
    const X: TokenId = 20;

    #[test]
    fn ugt_with_three_distinct_types() {
        let q = ugt_label(X, &[A, B, C, A], LabelWeighting::Distinct);
        assert_eq!(q.prob(X), 0.5);
        for t in [A, B, C] {
            assert_eq!(q.prob(t), 1.0 / 6.0);
        }
        assert!((q.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn xtr_is_uniform_over_types() {
        let q = xtr_label(&[A, B, C, C], LabelWeighting::Distinct);
        for t in [A, B, C] {
            assert_eq!(q.prob(t), 1.0 / 3.0);
        }
    }

    #[test]
    fn overlapping_masses_add() {
        let q = ugt_label(X, &[X, B], LabelWeighting::Distinct);
        assert_eq!(q.prob(X), 0.75);
        assert_eq!(q.prob(B), 0.25);
        assert_eq!(q.total(), 1.0);
    }

    #[test]
    fn frequency_weighting_uses_counts() {
        let q = xtr_label(&[A, A, B, C], LabelWeighting::Frequency);
        assert_eq!(q.prob(A), 0.5);
        assert_eq!(q.prob(B), 0.25);
    }

    #[test]
    fn specials_never_get_mass() {
        let q = xtr_label(&[crate::tokenizer::MASK, A, crate::tokenizer::UNK], LabelWeighting::Distinct);
        assert_eq!(q.entries(), &[(A, 1.0)]);
    }
}
