use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use super::EvalError;

/// Immutable set of L2-normalised vectors with string ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalIndex {
    ids: Vec<String>,
    dim: usize,
    /// Row-major unit vectors.
    unit: Vec<f64>,
    norms: Vec<f64>,
}

impl EvalIndex {
    pub fn new<V: AsRef<[f32]>>(ids: Vec<String>, vectors: &[V]) -> Result<Self, EvalError> {
        if vectors.is_empty() {
            return Err(EvalError::EmptyIndex);
        }
        if ids.len() != vectors.len() {
            return Err(EvalError::Mismatch(format!("{} ids for {} vectors", ids.len(), vectors.len())));
        }
        let dim = vectors[0].as_ref().len();
        let mut unit = Vec::with_capacity(dim * vectors.len());
        let mut norms = Vec::with_capacity(vectors.len());
        for (i, v) in vectors.iter().enumerate() {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(EvalError::Mismatch(format!("vector {} has dim {}, expected {dim}", ids[i], v.len())));
            }
            let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(EvalError::ZeroVector(ids[i].clone()));
            }
            unit.extend(v.iter().map(|&x| x as f64 / norm));
            norms.push(norm);
        }
        Ok(Self { ids, dim, unit, norms })
    }

    /// Ids `"0"`, `"1"`, ... in row order.
    pub fn with_line_ids<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Self, EvalError> {
        Self::new((0..vectors.len()).map(|i| i.to_string()).collect(), vectors)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine similarity of every row here against every row of `other`.
    pub fn cosines(&self, other: &EvalIndex) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| {
                let a = self.row(i);
                (0..other.len())
                    .map(|j| a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum())
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginKind {
    /// `cos / mean neighbourhood similarity`.
    #[default]
    Ratio,
    /// `cos - mean neighbourhood similarity`.
    Distance,
    /// Raw cosine.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scoring {
    Cosine,
    Margin { kind: MarginKind, k: usize },
}

impl Default for Scoring {
    fn default() -> Self {
        Scoring::Margin {
            kind: MarginKind::Ratio,
            k: 4,
        }
    }
}

impl fmt::Display for MarginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ratio => "ratio",
            Self::Distance => "distance",
            Self::Absolute => "absolute",
        })
    }
}

impl FromStr for MarginKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ratio" => Ok(Self::Ratio),
            "distance" => Ok(Self::Distance),
            "absolute" => Ok(Self::Absolute),
            _ => Err(format!("unknown margin {s:?} (ratio, distance, absolute)")),
        }
    }
}

/// Top-1 result for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub query: usize,
    pub top1: usize,
    pub score: f64,
}

/// Mean of the `k` largest values.
fn top_k_mean(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v[..k].iter().sum::<f64>() / k as f64
}

/// Exhaustive top-1 search of every query against all targets. Ties go to
/// the lowest target index.
pub fn retrieve(queries: &EvalIndex, targets: &EvalIndex, scoring: Scoring) -> Result<Vec<Hit>, EvalError> {
    if queries.dim != targets.dim {
        return Err(EvalError::Mismatch(format!(
            "query dim {} differs from target dim {}",
            queries.dim, targets.dim
        )));
    }
    let cos = queries.cosines(targets);
    let scores: Vec<Vec<f64>> = match scoring {
        Scoring::Cosine | Scoring::Margin { kind: MarginKind::Absolute, .. } => cos,
        Scoring::Margin { kind, k } => {
            if k == 0 || k > targets.len() || k > queries.len() {
                return Err(EvalError::BadK {
                    k,
                    queries: queries.len(),
                    targets: targets.len(),
                });
            }
            let fwd: Vec<f64> = cos.iter().map(|row| top_k_mean(row.iter().copied(), k)).collect();
            let bwd: Vec<f64> = (0..targets.len())
                .map(|j| top_k_mean(cos.iter().map(|row| row[j]), k))
                .collect();
            cos.iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, &c)| {
                            let denom = (fwd[i] + bwd[j]) / 2.0;
                            match kind {
                                MarginKind::Ratio => c / denom,
                                MarginKind::Distance => c - denom,
                                MarginKind::Absolute => c,
                            }
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let (top1, score) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, s)| if s > best.1 { (j, s) } else { best });
            Hit { query: i, top1, score }
        })
        .collect())
}

/// Retrieval outcome with the gold target of each query resolved by id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub query_id: String,
    pub gold_id: String,
    pub top1_id: String,
    pub score: f64,
    pub correct: bool,
}

impl RetrievalReport {
    pub fn p_at_1(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.correct).count() as f64 / self.rows.len() as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("query_id\tgold_id\ttop1_id\tscore\tcorrect\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.6}\t{}",
                r.query_id, r.gold_id, r.top1_id, r.score, r.correct as u8
            );
        }
        s
    }
}

/// Runs retrieval; the gold target of a query is the target with the same id.
pub fn evaluate_retrieval(queries: &EvalIndex, targets: &EvalIndex, scoring: Scoring) -> Result<RetrievalReport, EvalError> {
    let by_id: HashMap<&str, usize> = targets.ids.iter().enumerate().map(|(j, id)| (id.as_str(), j)).collect();
    let hits = retrieve(queries, targets, scoring)?;
    let rows = hits
        .into_iter()
        .map(|h| {
            let qid = &queries.ids[h.query];
            let gold = by_id.get(qid.as_str()).copied();
            ReportRow {
                query_id: qid.clone(),
                gold_id: gold.map_or_else(|| "-".to_string(), |g| targets.ids[g].clone()),
                top1_id: targets.ids[h.top1].clone(),
                score: h.score,
                correct: gold == Some(h.top1),
            }
        })
        .collect();
    Ok(RetrievalReport { rows })
}

pub fn retrieve_p_at_1(queries: &EvalIndex, targets: &EvalIndex, scoring: Scoring) -> Result<f64, EvalError> {
    Ok(evaluate_retrieval(queries, targets, scoring)?.p_at_1())
}
