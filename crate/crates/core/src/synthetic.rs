//! A toy bilingual world for end-to-end checks.
//!
//! Language A writes two-letter Latin words, language B two-letter Cyrillic
//! words. B sentences are word-by-word translations through a fixed
//! bijective lexicon, with adjacent word pairs swapped. Each sentence has a
//! class; class sentences draw words from a class-specific pool (disjoint
//! across classes) mixed with a shared pool.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::CorpusError;
use crate::io::write_atomic;

const LATIN: [char; 15] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o'];
const CYRILLIC: [char; 15] = ['а', 'б', 'в', 'г', 'д', 'е', 'ж', 'з', 'и', 'к', 'л', 'м', 'н', 'п', 'р'];
pub const MAX_WORDS: usize = LATIN.len() * LATIN.len();

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub words_per_lang: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub n_classes: usize,
    /// Words reserved for each class.
    pub class_pool: usize,
    /// Probability that a word is drawn from the sentence's class pool.
    pub class_word_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub identity_mapping: bool,
    pub swap_adjacent: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            words_per_lang: 200,
            train_pairs: 2000,
            val_pairs: 500,
            test_pairs: 500,
            n_classes: 4,
            class_pool: 30,
            class_word_prob: 0.5,
            min_len: 5,
            max_len: 10,
            identity_mapping: false,
            swap_adjacent: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.words_per_lang == 0 || self.words_per_lang > MAX_WORDS {
            return Err(format!("synth.words_per_lang must be in 1..={MAX_WORDS}"));
        }
        if self.n_classes < 2 {
            return Err("synth.n_classes must be at least 2".into());
        }
        if self.class_pool == 0 || self.n_classes * self.class_pool >= self.words_per_lang {
            return Err("synth.class_pool * synth.n_classes must leave a non-empty shared pool".into());
        }
        if !(0.0..=1.0).contains(&self.class_word_prob) {
            return Err("synth.class_word_prob must lie in [0, 1]".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err("synth.min_len must be in 1..=synth.max_len".into());
        }
        if self.train_pairs == 0 || self.test_pairs == 0 || self.val_pairs == 0 {
            return Err("every split needs at least one pair".into());
        }
        Ok(())
    }

    /// Words owned by `class`.
    pub fn class_words(&self, class: usize) -> std::ops::Range<usize> {
        class * self.class_pool..(class + 1) * self.class_pool
    }

    pub fn shared_words(&self) -> std::ops::Range<usize> {
        self.n_classes * self.class_pool..self.words_per_lang
    }
}

/// One aligned pair; `a` and `b` hold word indices in A's lexicon order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPair {
    pub a: String,
    pub b: String,
    pub label: usize,
    pub words: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<SynthPair>,
    pub val: Vec<SynthPair>,
    pub test: Vec<SynthPair>,
    /// `lexicon[i]` is the B word translating A word `i`.
    pub lexicon: Vec<usize>,
}

pub fn word_a(i: usize) -> String {
    [LATIN[i / LATIN.len()], LATIN[i % LATIN.len()]].iter().collect()
}

pub fn word_b(i: usize) -> String {
    [CYRILLIC[i / CYRILLIC.len()], CYRILLIC[i % CYRILLIC.len()]].iter().collect()
}

fn sentence<R: Rng>(cfg: &SynthConfig, label: usize, rng: &mut R) -> Vec<usize> {
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    loop {
        let words: Vec<usize> = (0..len)
            .map(|_| {
                let pool = if rng.gen_bool(cfg.class_word_prob) {
                    cfg.class_words(label)
                } else {
                    cfg.shared_words()
                };
                rng.gen_range(pool)
            })
            .collect();
        // every sentence carries at least one class word
        if words.iter().any(|w| cfg.class_words(label).contains(w)) {
            return words;
        }
    }
}

fn translate(cfg: &SynthConfig, lexicon: &[usize], words: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = words.iter().map(|&w| lexicon[w]).collect();
    if cfg.swap_adjacent {
        for pair in out.chunks_mut(2) {
            pair.reverse();
        }
    }
    out
}

pub fn make_synthetic_corpus(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus, String> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lexicon: Vec<usize> = (0..cfg.words_per_lang).collect();
    if !cfg.identity_mapping {
        lexicon.shuffle(&mut rng);
    }
    let mut split = |n: usize| -> Vec<SynthPair> {
        (0..n)
            .map(|i| {
                let label = i % cfg.n_classes;
                let words = sentence(cfg, label, &mut rng);
                let b = translate(cfg, &lexicon, &words);
                SynthPair {
                    a: words.iter().map(|&w| word_a(w)).collect::<Vec<_>>().join(" "),
                    b: b.iter().map(|&w| word_b(w)).collect::<Vec<_>>().join(" "),
                    label,
                    words,
                }
            })
            .collect()
    };
    let train = split(cfg.train_pairs);
    let val = split(cfg.val_pairs);
    let test = split(cfg.test_pairs);
    Ok(SyntheticCorpus {
        train,
        val,
        test,
        lexicon,
    })
}

impl SyntheticCorpus {
    pub fn splits(&self) -> [(&'static str, &[SynthPair]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    /// Writes `<split>.l1`, `<split>.l2` and `<split>.labels` for each split.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        for (name, pairs) in self.splits() {
            let lines = |f: &dyn Fn(&SynthPair) -> String| pairs.iter().map(|p| f(p) + "\n").collect::<String>();
            for (ext, text) in [
                ("l1", lines(&|p| p.a.clone())),
                ("l2", lines(&|p| p.b.clone())),
                ("labels", lines(&|p| p.label.to_string())),
            ] {
                let path = dir.join(format!("{name}.{ext}"));
                write_atomic(&path, text.as_bytes()).map_err(|e| CorpusError::io(&path, e))?;
            }
        }
        Ok(())
    }
}

/// Reads a label file with one non-negative integer per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| CorpusError::Format {
                path: path.display().to_string(),
                line: i + 1,
                detail: format!("label {l:?} is not a non-negative integer"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn small() -> SynthConfig {
        SynthConfig {
            train_pairs: 300,
            val_pairs: 50,
            test_pairs: 100,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn identity_mapping_equal_up_to_reordering() {
        let cfg = SynthConfig {
            identity_mapping: true,
            ..small()
        };
        let c = make_synthetic_corpus(&cfg, 5).unwrap();
        let lat: String = LATIN.iter().collect();
        for p in &c.train {
            let mut a: Vec<String> = p.a.split(' ').map(String::from).collect();
            let mut b: Vec<String> = p
                .b
                .split(' ')
                .map(|w| {
                    w.chars()
                        .map(|ch| lat.chars().nth(CYRILLIC.iter().position(|&c| c == ch).unwrap()).unwrap())
                        .collect()
                })
                .collect();
            assert_eq!(a.len(), b.len());
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn b_is_the_translation_of_a_line_by_line() {
        let cfg = small();
        let c = make_synthetic_corpus(&cfg, 9).unwrap();
        for p in c.test.iter().take(20) {
            let expect: Vec<String> = translate(&cfg, &c.lexicon, &p.words).into_iter().map(word_b).collect();
            assert_eq!(p.b, expect.join(" "));
        }
        let mut seen = c.lexicon.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..cfg.words_per_lang).collect::<Vec<_>>());
    }

    #[test]
    fn bag_of_words_oracle_is_perfect() {
        let cfg = small();
        let c = make_synthetic_corpus(&cfg, 11).unwrap();
        // brute force: count words of each class pool, pick the majority
        let owner: BTreeMap<String, usize> = (0..cfg.n_classes)
            .flat_map(|k| cfg.class_words(k).map(move |w| (word_a(w), k)))
            .collect();
        for p in c.train.iter().chain(&c.test) {
            let mut votes = vec![0; cfg.n_classes];
            for w in p.a.split(' ') {
                if let Some(&k) = owner.get(w) {
                    votes[k] += 1;
                }
            }
            let pred = (0..cfg.n_classes).max_by_key(|&k| (votes[k], usize::MAX - k)).unwrap();
            assert_eq!(pred, p.label);
        }
    }

    #[test]
    fn deterministic_and_written_to_disk() {
        let cfg = small();
        assert_eq!(make_synthetic_corpus(&cfg, 1).unwrap(), make_synthetic_corpus(&cfg, 1).unwrap());
        assert_ne!(make_synthetic_corpus(&cfg, 1).unwrap(), make_synthetic_corpus(&cfg, 2).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let c = make_synthetic_corpus(&cfg, 1).unwrap();
        c.write(dir.path()).unwrap();
        let labels = read_labels(&dir.path().join("val.labels")).unwrap();
        assert_eq!(labels, c.val.iter().map(|p| p.label).collect::<Vec<_>>());
        let l2 = std::fs::read_to_string(dir.path().join("test.l2")).unwrap();
        assert_eq!(l2.lines().count(), cfg.test_pairs);
    }
}
