use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::tokenizer::{normalize, Vocab};

use super::CorpusError;

/// Inclusive codepoint ranges a sentence may draw from. An empty rule
/// accepts every character.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CharsetRule {
    ranges: Vec<(u32, u32)>,
    name: String,
}

/// Digits, ASCII punctuation and space are allowed under every script rule.
const COMMON: [(u32, u32); 4] = [(0x20, 0x40), (0x5B, 0x60), (0x7B, 0x7E), (0x2000, 0x206F)];

impl CharsetRule {
    pub fn any() -> Self {
        Self {
            ranges: Vec::new(),
            name: "any".into(),
        }
    }

    pub fn latin() -> Self {
        Self::with_common("latin", &[(0x41, 0x5A), (0x61, 0x7A), (0xC0, 0x24F)])
    }

    pub fn cyrillic() -> Self {
        Self::with_common("cyrillic", &[(0x400, 0x4FF)])
    }

    pub fn greek() -> Self {
        Self::with_common("greek", &[(0x370, 0x3FF)])
    }

    fn with_common(name: &str, ranges: &[(u32, u32)]) -> Self {
        let mut r = COMMON.to_vec();
        r.extend_from_slice(ranges);
        Self {
            ranges: r,
            name: name.into(),
        }
    }

    pub fn allows(&self, c: char) -> bool {
        let c = c as u32;
        self.ranges.is_empty() || self.ranges.iter().any(|&(lo, hi)| (lo..=hi).contains(&c))
    }

    pub fn accepts(&self, text: &str) -> bool {
        text.chars().all(|c| self.allows(c))
    }
}

impl fmt::Display for CharsetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for CharsetRule {
    type Err = String;

    /// A preset name (`any`, `latin`, `cyrillic`, `greek`) or a `+`-separated
    /// list of hex ranges such as `0041-005A+0061-007A`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "any" => return Ok(Self::any()),
            "latin" => return Ok(Self::latin()),
            "cyrillic" => return Ok(Self::cyrillic()),
            "greek" => return Ok(Self::greek()),
            _ => {}
        }
        let mut ranges = Vec::new();
        for part in s.split('+') {
            let (lo, hi) = part.split_once('-').unwrap_or((part, part));
            let parse = |h: &str| u32::from_str_radix(h.trim(), 16).map_err(|_| format!("bad codepoint range {part:?}"));
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            if lo > hi {
                return Err(format!("empty codepoint range {part:?}"));
            }
            ranges.push((lo, hi));
        }
        Ok(Self {
            ranges,
            name: s.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRules {
    /// Maximum subword length of either side (needs a vocabulary to apply).
    pub max_len: usize,
    pub src_charset: CharsetRule,
    pub tgt_charset: CharsetRule,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            max_len: 64,
            src_charset: CharsetRule::any(),
            tgt_charset: CharsetRule::any(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Empty,
    TooLong,
    Charset,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub total: usize,
    pub kept: usize,
    pub dropped_empty: usize,
    pub dropped_length: usize,
    pub dropped_charset: usize,
}

impl FilterReport {
    pub fn dropped(&self) -> usize {
        self.dropped_empty + self.dropped_length + self.dropped_charset
    }

    /// Plain-text `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "total={}\nkept={}\ndropped={}\ndropped_empty={}\ndropped_length={}\ndropped_charset={}\n",
            self.total,
            self.kept,
            self.dropped(),
            self.dropped_empty,
            self.dropped_length,
            self.dropped_charset
        )
    }
}

pub fn check_pair(src: &str, tgt: &str, rules: &FilterRules, vocab: Option<&Vocab>) -> Result<(), DropReason> {
    let (s, t) = (normalize(src), normalize(tgt));
    if s.is_empty() || t.is_empty() {
        return Err(DropReason::Empty);
    }
    if !rules.src_charset.accepts(&s) || !rules.tgt_charset.accepts(&t) {
        return Err(DropReason::Charset);
    }
    if let Some(v) = vocab {
        if v.encode(&s).ids.len() > rules.max_len || v.encode(&t).ids.len() > rules.max_len {
            return Err(DropReason::TooLong);
        }
    }
    Ok(())
}

/// Keeps the pairs passing every rule, in input order.
pub fn filter_pairs<I>(pairs: I, rules: &FilterRules, vocab: Option<&Vocab>) -> (Vec<(String, String)>, FilterReport)
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for (s, t) in pairs {
        report.total += 1;
        match check_pair(&s, &t, rules, vocab) {
            Ok(()) => {
                report.kept += 1;
                kept.push((s, t));
            }
            Err(DropReason::Empty) => report.dropped_empty += 1,
            Err(DropReason::TooLong) => report.dropped_length += 1,
            Err(DropReason::Charset) => report.dropped_charset += 1,
        }
    }
    (kept, report)
}

fn lines(text: &str) -> Vec<String> {
    let mut v: Vec<String> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect();
    if text.ends_with('\n') {
        v.pop();
    }
    v
}

/// Reads two line-aligned files.
pub fn read_parallel(src: &Path, tgt: &Path) -> Result<Vec<(String, String)>, CorpusError> {
    let a = lines(&fs::read_to_string(src).map_err(|e| CorpusError::io(src, e))?);
    let b = lines(&fs::read_to_string(tgt).map_err(|e| CorpusError::io(tgt, e))?);
    if a.len() != b.len() {
        return Err(CorpusError::Misaligned {
            src_lines: a.len(),
            tgt_lines: b.len(),
        });
    }
    Ok(a.into_iter().zip(b).collect())
}

/// Reads a two-column TSV file.
pub fn read_tsv(path: &Path) -> Result<Vec<(String, String)>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    lines(&text)
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let mut cols = l.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), None) => Ok((a.to_string(), b.to_string())),
                _ => Err(CorpusError::Format {
                    path: path.display().to_string(),
                    line: i + 1,
                    detail: "expected exactly two tab-separated columns".into(),
                }),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latin_rules() -> FilterRules {
        FilterRules {
            src_charset: CharsetRule::latin(),
            tgt_charset: CharsetRule::latin(),
            ..FilterRules::default()
        }
    }

    #[test]
    fn keeps_clean_pair_and_drops_empty() {
        let rules = latin_rules();
        assert_eq!(check_pair("hello", "bonjour", &rules, None), Ok(()));
        assert_eq!(check_pair("hello", "", &rules, None), Err(DropReason::Empty));
        assert_eq!(check_pair("hello", "   ", &rules, None), Err(DropReason::Empty));
        assert_eq!(check_pair("hello", "привет", &rules, None), Err(DropReason::Charset));
    }

    #[test]
    fn counts_match_direct_scan() {
        let src: Vec<String> = (0..10).map(|i| format!("sentence number {i}")).collect();
        let mut tgt: Vec<String> = (0..10).map(|i| format!("phrase numero {i}")).collect();
        tgt[3] = "phrase 日本".into();
        tgt[7] = "phrase ж".into();
        let pairs: Vec<_> = src.iter().cloned().zip(tgt.iter().cloned()).collect();
        let rules = latin_rules();
        // oracle: count lines with any codepoint outside the allowed ranges
        let bad = tgt.iter().filter(|t| t.chars().any(|c| !rules.tgt_charset.allows(c))).count();
        let (kept, report) = filter_pairs(pairs, &rules, None);
        assert_eq!(report.kept, 10 - bad);
        assert_eq!(report.kept, 8);
        assert_eq!(report.dropped(), 2);
        assert_eq!(kept.len(), 8);
        assert!(report.to_kv().contains("kept=8\ndropped=2\n"));
    }

    #[test]
    fn length_rule_uses_subwords() {
        let vocab = crate::tokenizer::train_bpe(["a b c d"], 20).unwrap();
        let rules = FilterRules {
            max_len: 3,
            ..FilterRules::default()
        };
        assert_eq!(check_pair("a b", "c", &rules, Some(&vocab)), Ok(()));
        assert_eq!(check_pair("a b c d", "c", &rules, Some(&vocab)), Err(DropReason::TooLong));
    }

    #[test]
    fn misaligned_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        fs::write(&a, "x\ny\n").unwrap();
        fs::write(&b, "x\n").unwrap();
        assert!(matches!(read_parallel(&a, &b), Err(CorpusError::Misaligned { .. })));
        fs::write(&b, "x\nz\n").unwrap();
        assert_eq!(read_parallel(&a, &b).unwrap().len(), 2);
    }

    #[test]
    fn tsv_reading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsv");
        fs::write(&p, "a\tb\nc\td\n").unwrap();
        assert_eq!(read_tsv(&p).unwrap()[1], ("c".into(), "d".into()));
        fs::write(&p, "a\tb\tc\n").unwrap();
        assert!(read_tsv(&p).is_err());
    }

    #[test]
    fn charset_parsing() {
        let r: CharsetRule = "0061-0063+0020".parse().unwrap();
        assert!(r.accepts("ab c"));
        assert!(!r.accepts("abd"));
        assert!("zz-1".parse::<CharsetRule>().is_err());
        assert!(CharsetRule::cyrillic().accepts("привет, мир 2"));
    }
}
