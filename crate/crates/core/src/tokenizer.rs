//! Shared bilingual subword vocabulary trained by byte-pair encoding.
//!
//! Text is normalised (NFC, whitespace collapsed to single spaces) and split
//! into chunks at spaces; every chunk after the first keeps its leading space,
//! so merges never cross a word boundary and decoding is plain concatenation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const UNK: TokenId = 2;
pub const BOS: TokenId = 3;
pub const EOS: TokenId = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<mask>", "<unk>", "<s>", "</s>"];

const MERGES_SENTINEL: &str = "#MERGES";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot train a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("target size {target} is below the {base} base symbols plus specials")]
    TargetTooSmall { target: usize, base: usize },
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("malformed vocabulary file, line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// NFC normalisation plus whitespace collapse.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn chunks(normalized: &str) -> impl Iterator<Item = String> + '_ {
    normalized
        .split(' ')
        .filter(|w| !w.is_empty())
        .enumerate()
        .map(|(i, w)| if i == 0 { w.to_string() } else { format!(" {w}") })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub original_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self, TokenizerError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TokenizerError::Format {
                    line: i + 1,
                    detail: format!("duplicate token {t:?}"),
                });
            }
        }
        let mut merge_rank = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                index.get(s).copied().ok_or_else(|| TokenizerError::Format {
                    line: tokens.len() + 2 + rank,
                    detail: format!("merge references unknown token {s:?}"),
                })
            };
            let (li, ri, mi) = (lookup(l)?, lookup(r)?, lookup(&format!("{l}{r}"))?);
            merge_rank.entry((li, ri)).or_insert((rank, mi));
        }
        Ok(Self {
            tokens,
            index,
            merges,
            merge_rank,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn is_special(id: TokenId) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        let norm = normalize(text);
        let mut ids = Vec::new();
        for chunk in chunks(&norm) {
            self.encode_chunk(&chunk, &mut ids);
        }
        TokenSeq {
            ids,
            original_text: text.to_string(),
        }
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<TokenId>) {
        let mut buf = [0u8; 4];
        let mut syms: Vec<TokenId> = chunk
            .chars()
            .map(|c| self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK))
            .collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).map(|&(rank, _)| (rank, (w[0], w[1]))))
                .min();
            let Some((_, pair)) = best else { break };
            let merged = self.merge_rank[&pair].1;
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        out.extend(syms);
    }

    /// Concatenates token strings; padding is dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::IdOutOfRange { id, size: self.size() })?;
            if id != PAD {
                out.push_str(tok);
            }
        }
        Ok(out)
    }

    /// Line `k` is token `k`, then the `#MERGES` sentinel, then one
    /// tab-separated merge pair per line in application order.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s.push_str(MERGES_SENTINEL);
        s.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l}\t{r}");
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.split('\n');
        let mut tokens = Vec::new();
        let mut found = false;
        for line in lines.by_ref() {
            if line == MERGES_SENTINEL {
                found = true;
                break;
            }
            tokens.push(line.to_string());
        }
        if !found {
            return Err(TokenizerError::Format {
                line: tokens.len(),
                detail: format!("missing {MERGES_SENTINEL} line"),
            });
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(TokenizerError::Format {
                    line: i + 1,
                    detail: format!("expected special token {s}"),
                });
            }
        }
        let mut merges = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (l, r) = line.split_once('\t').ok_or_else(|| TokenizerError::Format {
                line: tokens.len() + 2 + k,
                detail: "merge line needs two tab-separated tokens".into(),
            })?;
            merges.push((l.to_string(), r.to_string()));
        }
        Self::from_parts(tokens, merges)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        crate::io::write_atomic(path, self.to_file_string().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_file_string(&std::fs::read_to_string(path)?)
    }
}

/// Learns merges in highest-frequency order, ties broken by the
/// lexicographically smallest (left, right) string pair. Stops at
/// `target_size` entries or when no pair is left to merge.
pub fn train_bpe<I, S>(corpus: I, target_size: usize) -> Result<Vocab, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: HashMap<String, i64> = HashMap::new();
    for sentence in corpus {
        let norm = normalize(sentence.as_ref());
        for c in chunks(&norm) {
            *word_counts.entry(c).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut words: Vec<(String, i64)> = word_counts.into_iter().collect();
    words.sort();

    let mut alphabet: Vec<char> = words.iter().flat_map(|(w, _)| w.chars()).collect::<HashSet<_>>().into_iter().collect();
    alphabet.sort_unstable();

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    let base = tokens.len();
    if target_size < base {
        return Err(TokenizerError::TargetTooSmall { target: target_size, base });
    }
    let mut index: HashMap<String, TokenId> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();

    let mut syms: Vec<Vec<TokenId>> = words
        .iter()
        .map(|(w, _)| w.chars().map(|c| index[&c.to_string()]).collect())
        .collect();
    let freq: Vec<i64> = words.iter().map(|(_, c)| *c).collect();

    let mut pair_counts: HashMap<(TokenId, TokenId), i64> = HashMap::new();
    let mut where_: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
    for (wi, s) in syms.iter().enumerate() {
        for p in s.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_insert(0) += freq[wi];
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    while tokens.len() < target_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&tokens[pa.0], &tokens[pa.1]);
                    let kb = (&tokens[pb.0], &tokens[pb.1]);
                    kb.cmp(&ka)
                })
            })
            .map(|(&p, _)| p);
        let Some((l, r)) = best else { break };
        let merged_str = format!("{}{}", tokens[l], tokens[r]);
        let merged = match index.get(&merged_str) {
            Some(&id) => id,
            None => {
                tokens.push(merged_str.clone());
                index.insert(merged_str, tokens.len() - 1);
                tokens.len() - 1
            }
        };
        merges.push((tokens[l].clone(), tokens[r].clone()));

        let mut affected: Vec<usize> = where_.remove(&(l, r)).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let s = &syms[wi];
            for p in s.windows(2) {
                *pair_counts.get_mut(&(p[0], p[1])).expect("pair counted") -= freq[wi];
            }
            let mut next = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == l && s[i + 1] == r {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(s[i]);
                    i += 1;
                }
            }
            for p in next.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_insert(0) += freq[wi];
                where_.entry((p[0], p[1])).or_default().insert(wi);
            }
            syms[wi] = next;
        }
        pair_counts.retain(|_, c| *c > 0);
    }
    Vocab::from_parts(tokens, merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base_size(corpus: &[&str]) -> usize {
        let chars: HashSet<char> = corpus.iter().flat_map(|s| normalize(s).chars().collect::<Vec<_>>()).collect();
        SPECIAL_TOKENS.len() + chars.len()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let corpus = ["aaab", "aaac"];
        let v = train_bpe(corpus, base_size(&corpus) + 1).unwrap();
        assert_eq!(v.merges(), &[("a".to_string(), "a".to_string())]);
        let got: Vec<&str> = v.encode("aaab").ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(got, ["aa", "a", "b"]);
    }

    #[test]
    fn zero_merges_gives_characters_and_specials() {
        let corpus = ["hello world", "abc"];
        let n = base_size(&corpus);
        let v = train_bpe(corpus, n).unwrap();
        assert_eq!(v.size(), n);
        assert!(v.merges().is_empty());
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.token(i), Some(*s));
        }
    }

    #[test]
    fn shared_vocabulary_covers_both_languages() {
        let corpus = ["the cat sat", "le chat dort", "the cat", "le chat"];
        let v = train_bpe(corpus, 60).unwrap();
        assert!(v.id(" cat").is_some() || v.id("cat").is_some());
        assert!(v.id(" chat").is_some() || v.id("chat").is_some());
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // "ab" and "cd" both occur once; ("a","b") sorts first.
        let corpus = ["ab cd"];
        let v = train_bpe(corpus, base_size(&corpus) + 1).unwrap();
        assert_eq!(v.merges()[0], (" ".to_string(), "c".to_string()));
        let corpus = ["abcd"];
        let v = train_bpe(corpus, base_size(&corpus) + 1).unwrap();
        assert_eq!(v.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn errors() {
        assert!(matches!(train_bpe(Vec::<String>::new(), 100), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(train_bpe(["   "], 100), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(train_bpe(["abc"], 3), Err(TokenizerError::TargetTooSmall { .. })));
        let v = train_bpe(["abc"], 20).unwrap();
        assert!(matches!(v.decode(&[999]), Err(TokenizerError::IdOutOfRange { .. })));
    }

    #[test]
    fn empty_and_unknown_input() {
        let v = train_bpe(["hello world"], 30).unwrap();
        assert!(v.encode("").ids.is_empty());
        assert_eq!(v.encode("z").ids, vec![UNK]);
        assert_eq!(v.decode(&v.encode("hello world").ids).unwrap(), "hello world");
        assert_eq!(v.decode(&v.encode("  hello \t world ").ids).unwrap(), "hello world");
    }

    #[test]
    fn file_roundtrip() {
        let v = train_bpe(["le chat", "the cat", "the hat"], 40).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("<pad>\n<mask>\n<unk>\n<s>\n</s>\n"));
        let back = Vocab::from_file_string(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_file_string(), text);
        assert!(Vocab::from_file_string("<pad>\n").is_err());
    }

    #[test]
    fn nfc_normalisation() {
        // decomposed e + combining acute vs precomposed
        assert_eq!(normalize("caf\u{65}\u{301}"), "caf\u{e9}");
    }

    proptest! {
        #[test]
        fn roundtrip_and_no_specials(corpus in proptest::collection::vec("[a-f ]{1,12}", 1..12)) {
            prop_assume!(corpus.iter().any(|s| !s.trim().is_empty()));
            let v = train_bpe(&corpus, 40).unwrap();
            for s in &corpus {
                let ids = v.encode(s).ids;
                prop_assert!(ids.iter().all(|&i| !Vocab::is_special(i)));
                prop_assert_eq!(v.decode(&ids).unwrap(), normalize(s));
            }
            let again = train_bpe(&corpus, 40).unwrap();
            prop_assert_eq!(again.to_file_string(), v.to_file_string());
        }
    }
}
