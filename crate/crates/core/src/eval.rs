//! Intrinsic evaluation: graded hypernymy, cross-lingual analogy, closest
//! children, and the norm/frequency specificity statistic.
//!
//! Hypernymy scoring relies on norms encoding specificity, which only holds in
//! the Poincaré ball; those operations reject Euclidean embeddings. Analogy
//! uses cosine similarity of the raw coordinates in either geometry.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::geometry::{self, GeometryError};
use crate::model::{Geometry, ParameterStore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0:?} is out of vocabulary")]
    OutOfVocabulary(String),
    #[error("need at least two evaluable records, got {evaluated} ({skipped_oov} skipped as out of vocabulary)")]
    TooFewRecords { evaluated: usize, skipped_oov: usize },
    #[error("no evaluable analogy queries ({skipped_oov} skipped as out of vocabulary)")]
    NoEvaluableQueries { skipped_oov: usize },
    #[error("correlation is undefined: one side has zero rank variance")]
    UndefinedCorrelation,
    #[error("sequences differ in length ({0} vs {1}) or are shorter than 2")]
    BadLengths(usize, usize),
    #[error("non-finite value in correlation input")]
    NonFinite,
    #[error("{0} requires Poincaré embeddings")]
    NeedsPoincare(&'static str),
    #[error("zero vector")]
    ZeroVector,
    #[error("no candidate word left after excluding the query words")]
    NoCandidate,
    #[error("embeddings and vocabulary disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Read-only word vectors with a word index.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    geometry: Geometry,
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl Embeddings {
    pub fn new(geometry: Geometry, dim: usize, words: Vec<String>, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.len() != words.len() * dim {
            return Err(EvalError::Mismatch(format!(
                "{} words of dimension {dim} need {} values, got {}",
                words.len(),
                words.len() * dim,
                vectors.len()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(EvalError::Mismatch(format!("duplicate word {w:?}")));
            }
        }
        Ok(Embeddings {
            geometry,
            dim,
            words,
            index,
            vectors,
        })
    }

    /// The published embeddings of a trained store: its target vectors.
    pub fn from_store(store: &ParameterStore, vocab: &Vocabulary) -> Self {
        Embeddings::new(store.geometry, store.dim, vocab.words().to_vec(), store.target.clone())
            .expect("store and vocabulary sizes agree")
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn norm(&self, i: usize) -> f64 {
        geometry::norm(self.vector(i))
    }

    fn lookup(&self, word: &str) -> Result<usize> {
        self.index_of(word)
            .ok_or_else(|| EvalError::OutOfVocabulary(word.to_string()))
    }

    fn require_poincare(&self, op: &'static str) -> Result<()> {
        match self.geometry {
            Geometry::Poincare => Ok(()),
            Geometry::Euclidean => Err(EvalError::NeedsPoincare(op)),
        }
    }
}

/// 1-based ranks, ties sharing the average of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of tie-averaged ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::BadLengths(xs.len(), ys.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `is-a(u, v) = −(1 + α(||v|| − ||u||))·d(u, v)`: how much `u` is a kind of `v`.
pub fn is_a_score(u: &[f64], v: &[f64], alpha: f64) -> Result<f64> {
    let d = geometry::poincare_distance(u, v)?;
    Ok(-(1.0 + alpha * (geometry::norm(v) - geometry::norm(u))) * d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperLexRecord {
    pub word_u: String,
    pub word_v: String,
    pub gold_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalogyQuery {
    pub w1: String,
    pub w2: String,
    pub w3: String,
    pub w4: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: String,
    /// Spearman ρ or accuracy in [0, 1].
    pub metric: f64,
    pub evaluated: usize,
    pub skipped_oov: usize,
    pub alpha: Option<f64>,
    /// Extra key/value pairs, typically model metadata.
    pub extra: Vec<(String, String)>,
}

impl EvalReport {
    fn new(task: &str, metric: f64, evaluated: usize, skipped_oov: usize) -> Self {
        EvalReport {
            task: task.to_string(),
            metric,
            evaluated,
            skipped_oov,
            alpha: None,
            extra: Vec::new(),
        }
    }

    pub fn with_extra(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.extra.push((key.into(), value.into()));
        self
    }

    /// One line of `key=value` fields; values with whitespace are quoted.
    pub fn record_line(&self) -> String {
        let mut fields = vec![
            ("task".to_string(), self.task.clone()),
            ("metric".to_string(), format!("{}", self.metric)),
            ("evaluated".to_string(), self.evaluated.to_string()),
            ("skipped_oov".to_string(), self.skipped_oov.to_string()),
        ];
        if let Some(a) = self.alpha {
            fields.push(("alpha".to_string(), format!("{a}")));
        }
        fields.extend(self.extra.iter().cloned());
        fields
            .iter()
            .map(|(k, v)| {
                if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '"') {
                    format!("{k}={v:?}")
                } else {
                    format!("{k}={v}")
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task:        {}", self.task)?;
        writeln!(f, "metric:      {:.6}", self.metric)?;
        writeln!(f, "evaluated:   {}", self.evaluated)?;
        write!(f, "skipped_oov: {}", self.skipped_oov)?;
        if let Some(a) = self.alpha {
            write!(f, "\nalpha:       {a}")?;
        }
        for (k, v) in &self.extra {
            write!(f, "\n{k}: {v}")?;
        }
        Ok(())
    }
}

/// Spearman correlation between gold is-a ratings and [`is_a_score`] on the
/// embeddings. Records with an out-of-vocabulary word are skipped.
pub fn eval_hyperlex(records: &[HyperLexRecord], emb: &Embeddings, alpha: f64) -> Result<EvalReport> {
    emb.require_poincare("hypernymy evaluation")?;
    let mut gold = Vec::new();
    let mut predicted = Vec::new();
    let mut skipped = 0;
    for r in records {
        match (emb.index_of(&r.word_u), emb.index_of(&r.word_v)) {
            (Some(u), Some(v)) => {
                gold.push(r.gold_score);
                predicted.push(is_a_score(emb.vector(u), emb.vector(v), alpha)?);
            }
            _ => skipped += 1,
        }
    }
    if gold.len() < 2 {
        return Err(EvalError::TooFewRecords {
            evaluated: gold.len(),
            skipped_oov: skipped,
        });
    }
    let rho = spearman(&gold, &predicted)?;
    let mut report = EvalReport::new("hyperlex", rho, gold.len(), skipped);
    report.alpha = Some(alpha);
    Ok(report)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(GeometryError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        }
        .into());
    }
    let na = geometry::norm(a);
    let nb = geometry::norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok((geometry::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// 3CosAdd: the word maximising `cos(x, v(w2) − v(w1) + v(w3))`, excluding
/// the three query words. Ties go to the lower index; zero vectors are never
/// candidates.
pub fn analogy_predict<'e>(w1: &str, w2: &str, w3: &str, emb: &'e Embeddings) -> Result<&'e str> {
    let (i1, i2, i3) = (emb.lookup(w1)?, emb.lookup(w2)?, emb.lookup(w3)?);
    let target: Vec<f64> = (0..emb.dim())
        .map(|k| emb.vector(i2)[k] - emb.vector(i1)[k] + emb.vector(i3)[k])
        .collect();
    if geometry::norm(&target) == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    let mut best: Option<(usize, f64)> = None;
    for i in 0..emb.len() {
        if i == i1 || i == i2 || i == i3 || emb.norm(i) == 0.0 {
            continue;
        }
        let sim = cosine_similarity(emb.vector(i), &target)?;
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((i, sim));
        }
    }
    best.map(|(i, _)| emb.word(i)).ok_or(EvalError::NoCandidate)
}

/// Exact-match accuracy of [`analogy_predict`]; queries with any
/// out-of-vocabulary word (including the gold answer) are skipped.
pub fn eval_analogy(queries: &[AnalogyQuery], emb: &Embeddings) -> Result<EvalReport> {
    let mut correct = 0usize;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for q in queries {
        if [&q.w1, &q.w2, &q.w3, &q.w4].iter().any(|w| emb.index_of(w).is_none()) {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        match analogy_predict(&q.w1, &q.w2, &q.w3, emb) {
            Ok(pred) if pred == q.w4 => correct += 1,
            Ok(_) | Err(EvalError::ZeroVector) | Err(EvalError::NoCandidate) => {}
            Err(e) => return Err(e),
        }
    }
    if evaluated == 0 {
        return Err(EvalError::NoEvaluableQueries { skipped_oov: skipped });
    }
    Ok(EvalReport::new(
        "analogy",
        correct as f64 / evaluated as f64,
        evaluated,
        skipped,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub word: String,
    /// Poincaré distance, or cosine similarity for [`NeighborMetric::Cosine`].
    pub score: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborMetric {
    Cosine,
    Poincare,
}

impl std::str::FromStr for NeighborMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cosine" => Ok(NeighborMetric::Cosine),
            "poincare" => Ok(NeighborMetric::Poincare),
            _ => Err(format!("unknown metric {s:?} (expected cosine or poincare)")),
        }
    }
}

/// All other words ordered from nearest to farthest, ties by index.
fn ranked_neighbors(i: usize, emb: &Embeddings, metric: NeighborMetric) -> Result<Vec<(usize, f64)>> {
    let q = emb.vector(i);
    let mut scored = Vec::with_capacity(emb.len());
    for j in (0..emb.len()).filter(|&j| j != i) {
        let s = match metric {
            NeighborMetric::Poincare => geometry::poincare_distance(q, emb.vector(j))?,
            NeighborMetric::Cosine => match cosine_similarity(q, emb.vector(j)) {
                Ok(s) => s,
                Err(EvalError::ZeroVector) => continue,
                Err(e) => return Err(e),
            },
        };
        scored.push((j, s));
    }
    let ord = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        let by_score = match metric {
            NeighborMetric::Poincare => a.1.total_cmp(&b.1),
            NeighborMetric::Cosine => b.1.total_cmp(&a.1),
        };
        by_score.then(a.0.cmp(&b.0))
    };
    scored.sort_by(ord);
    Ok(scored)
}

pub fn nearest_neighbors(word: &str, k: usize, emb: &Embeddings, metric: NeighborMetric) -> Result<Vec<Neighbor>> {
    let i = emb.lookup(word)?;
    if metric == NeighborMetric::Poincare {
        emb.require_poincare("Poincaré neighbours")?;
    } else if emb.norm(i) == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    Ok(ranked_neighbors(i, emb, metric)?
        .into_iter()
        .take(k)
        .map(|(j, s)| Neighbor {
            word: emb.word(j).to_string(),
            score: s,
            norm: emb.norm(j),
        })
        .collect())
}

/// Candidate pool searched by [`closest_children`] for a request of `k`.
pub fn children_search_size(k: usize) -> usize {
    (5 * k).max(100)
}

/// Among the nearest neighbours (by Poincaré distance) of `word`, those with a
/// strictly larger norm, nearest first, at most `k`.
pub fn closest_children(word: &str, k: usize, emb: &Embeddings) -> Result<Vec<Neighbor>> {
    emb.require_poincare("closest children")?;
    let i = emb.lookup(word)?;
    let own = emb.norm(i);
    Ok(ranked_neighbors(i, emb, NeighborMetric::Poincare)?
        .into_iter()
        .take(children_search_size(k))
        .filter(|&(j, _)| emb.norm(j) > own)
        .take(k)
        .map(|(j, d)| Neighbor {
            word: emb.word(j).to_string(),
            score: d,
            norm: emb.norm(j),
        })
        .collect())
}

/// Spearman correlation between inverse corpus frequency `1/f` and embedding
/// norm over every word of the embeddings.
pub fn norm_frequency_correlation(emb: &Embeddings, vocab: &Vocabulary) -> Result<f64> {
    if emb.len() != vocab.len() {
        return Err(EvalError::Mismatch(format!(
            "{} embeddings vs {} vocabulary entries",
            emb.len(),
            vocab.len()
        )));
    }
    let mut inv_freq = Vec::with_capacity(emb.len());
    let mut norms = Vec::with_capacity(emb.len());
    for (i, w) in emb.words().iter().enumerate() {
        let id = vocab
            .id(w)
            .ok_or_else(|| EvalError::Mismatch(format!("{w:?} missing from vocabulary")))?;
        inv_freq.push(1.0 / vocab.count(id) as f64);
        norms.push(emb.norm(i));
    }
    spearman(&inv_freq, &norms)
}
