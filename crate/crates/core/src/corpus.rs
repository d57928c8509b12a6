//! Parallel-corpus ingestion and training-pair generation.
//!
//! Two line-aligned UTF-8 files feed a single vocabulary shared by both
//! languages. Each sentence pair contributes, in this order: skip-gram pairs
//! from the source side, skip-gram pairs from the target side, then the
//! index-aligned cross-lingual pairs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

pub type WordId = u32;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: invalid UTF-8", path.display())]
    Encoding { path: PathBuf, line: usize },
    #[error(
        "line count mismatch: {} has {src_lines} lines, {} has {tgt_lines}",
        src_path.display(),
        tgt_path.display()
    )]
    LineCountMismatch {
        src_path: PathBuf,
        src_lines: usize,
        tgt_path: PathBuf,
        tgt_lines: usize,
    },
    #[error("vocabulary is empty at min_count {min_count}")]
    EmptyVocabulary { min_count: u64 },
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error("smoothing power must lie in (0, 1], got {0}")]
    InvalidSmoothingPower(f64),
    #[error("negative sampling needs at least two candidate words")]
    DegenerateNegatives,
    #[error("vocabulary dump line {line}: {reason}")]
    MalformedVocabulary { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Lowercased whitespace tokens. No other normalization.
pub fn tokenize_line(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

/// Optional per-language token prefixes (e.g. `de:` / `en:`) that keep
/// identically spelled words of the two languages apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageTags {
    pub src: String,
    pub tgt: String,
}

impl LanguageTags {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        LanguageTags {
            src: format!("{}:", src.into()),
            tgt: format!("{}:", tgt.into()),
        }
    }
}

struct LineReader {
    path: PathBuf,
    inner: BufReader<File>,
    line: usize,
    buf: Vec<u8>,
}

impl LineReader {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(LineReader {
            path: path.to_path_buf(),
            inner: BufReader::new(file),
            line: 0,
            buf: Vec::new(),
        })
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        self.buf.clear();
        let n = self
            .inner
            .read_until(b'\n', &mut self.buf)
            .map_err(|source| CorpusError::Io {
                path: self.path.clone(),
                source,
            })?;
        if n == 0 {
            return Ok(None);
        }
        self.line += 1;
        while matches!(self.buf.last(), Some(b'\n' | b'\r')) {
            self.buf.pop();
        }
        String::from_utf8(std::mem::take(&mut self.buf))
            .map(Some)
            .map_err(|_| CorpusError::Encoding {
                path: self.path.clone(),
                line: self.line,
            })
    }

    fn count_remaining(&mut self) -> Result<usize> {
        let mut n = self.line;
        loop {
            self.buf.clear();
            let read = self
                .inner
                .read_until(b'\n', &mut self.buf)
                .map_err(|source| CorpusError::Io {
                    path: self.path.clone(),
                    source,
                })?;
            if read == 0 {
                return Ok(n);
            }
            n += 1;
        }
    }
}

/// Streams sentence pairs from two line-aligned files.
///
/// Pairs where either side tokenizes to nothing are skipped and counted in
/// [`ParallelReader::dropped`]. A length mismatch surfaces as an error once the
/// shorter file runs out.
pub struct ParallelReader {
    src: LineReader,
    tgt: LineReader,
    tags: Option<LanguageTags>,
    dropped: usize,
    done: bool,
}

impl ParallelReader {
    pub fn open(src: &Path, tgt: &Path, tags: Option<LanguageTags>) -> Result<Self> {
        Ok(ParallelReader {
            src: LineReader::open(src)?,
            tgt: LineReader::open(tgt)?,
            tags,
            dropped: 0,
            done: false,
        })
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn lines_read(&self) -> usize {
        self.src.line
    }

    fn mismatch(&mut self) -> Result<SentencePair> {
        let src_lines = self.src.count_remaining()?;
        let tgt_lines = self.tgt.count_remaining()?;
        Err(CorpusError::LineCountMismatch {
            src_path: self.src.path.clone(),
            src_lines,
            tgt_path: self.tgt.path.clone(),
            tgt_lines,
        })
    }

    fn read_pair(&mut self) -> Option<Result<SentencePair>> {
        loop {
            let s = match self.src.next_line() {
                Ok(s) => s,
                Err(e) => return Some(Err(e)),
            };
            let t = match self.tgt.next_line() {
                Ok(t) => t,
                Err(e) => return Some(Err(e)),
            };
            let (s, t) = match (s, t) {
                (None, None) => return None,
                (Some(_), None) | (None, Some(_)) => return Some(self.mismatch()),
                (Some(s), Some(t)) => (s, t),
            };
            let mut src = tokenize_line(&s);
            let mut tgt = tokenize_line(&t);
            if src.is_empty() || tgt.is_empty() {
                self.dropped += 1;
                continue;
            }
            if let Some(tags) = &self.tags {
                src.iter_mut().for_each(|w| w.insert_str(0, &tags.src));
                tgt.iter_mut().for_each(|w| w.insert_str(0, &tags.tgt));
            }
            return Some(Ok(SentencePair { src, tgt }));
        }
    }
}

impl Iterator for ParallelReader {
    type Item = Result<SentencePair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.read_pair();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

/// A fully read parallel corpus.
#[derive(Debug, Clone, Default)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub dropped: usize,
    pub lines: usize,
}

pub fn load_parallel_corpus(
    src: &Path,
    tgt: &Path,
    tags: Option<LanguageTags>,
) -> Result<ParallelCorpus> {
    let mut reader = ParallelReader::open(src, tgt, tags)?;
    let pairs = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(ParallelCorpus {
        pairs,
        dropped: reader.dropped(),
        lines: reader.lines_read(),
    })
}

/// Shared bilingual vocabulary. Ids run by descending count, ties broken
/// lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, WordId>,
    id_to_word: Vec<String>,
    counts: Vec<u64>,
    total_tokens: u64,
    min_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from raw counts, dropping words below `min_count`.
    pub fn from_counts<I>(counts: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        if min_count == 0 {
            return Err(CorpusError::InvalidMinCount);
        }
        let mut entries: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        if entries.is_empty() {
            return Err(CorpusError::EmptyVocabulary { min_count });
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_sorted(entries, min_count))
    }

    fn from_sorted(entries: Vec<(String, u64)>, min_count: u64) -> Self {
        let mut word_to_id = HashMap::with_capacity(entries.len());
        let mut id_to_word = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (id, (word, count)) in entries.into_iter().enumerate() {
            word_to_id.insert(word.clone(), id as WordId);
            id_to_word.push(word);
            counts.push(count);
        }
        let total_tokens = counts.iter().sum();
        Vocabulary {
            word_to_id,
            id_to_word,
            counts,
            total_tokens,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.id_to_word[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    pub fn count(&self, id: WordId) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<Option<WordId>> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Writes `word<TAB>count` lines in id order.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (word, count) in self.id_to_word.iter().zip(&self.counts) {
            writeln!(out, "{word}\t{count}")?;
        }
        Ok(())
    }

    /// Reads a dump produced by [`Vocabulary::write_dump`]; ids follow line order.
    pub fn read_dump<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let bad = |reason: &str| CorpusError::MalformedVocabulary {
                line: lineno,
                reason: reason.to_string(),
            };
            let line = line.map_err(|_| bad("unreadable or not UTF-8"))?;
            let (word, count) = line.split_once('\t').ok_or_else(|| bad("expected word<TAB>count"))?;
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(bad("word is empty or contains whitespace"));
            }
            let count: u64 = count.parse().map_err(|_| bad("count is not an integer"))?;
            if count == 0 {
                return Err(bad("count must be positive"));
            }
            if let Some((_, prev)) = entries.last() {
                if count > *prev {
                    return Err(bad("counts must be in descending order"));
                }
            }
            if seen.insert(word.to_string(), lineno).is_some() {
                return Err(bad("duplicate word"));
            }
            entries.push((word.to_string(), count));
        }
        let min_count = entries
            .last()
            .map(|(_, c)| *c)
            .ok_or(CorpusError::EmptyVocabulary { min_count: 1 })?;
        Ok(Self::from_sorted(entries, min_count))
    }
}

/// Counts tokens on both sides of the corpus into one merged vocabulary.
pub fn build_vocabulary<'a, I>(pairs: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a SentencePair>,
{
    if min_count == 0 {
        return Err(CorpusError::InvalidMinCount);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for pair in pairs {
        for tok in pair.src.iter().chain(&pair.tgt) {
            *counts.entry(tok.clone()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(counts, min_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairKind {
    Monolingual,
    CrossLingual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainingPair {
    pub center: WordId,
    pub context: WordId,
    pub kind: PairKind,
}

impl TrainingPair {
    pub fn new(center: WordId, context: WordId, kind: PairKind) -> Self {
        TrainingPair {
            center,
            context,
            kind,
        }
    }
}

fn skipgram_into<F>(tokens: &[WordId], mut span: F, out: &mut Vec<TrainingPair>)
where
    F: FnMut() -> usize,
{
    for (i, &center) in tokens.iter().enumerate() {
        let b = span();
        let lo = i.saturating_sub(b);
        let hi = (i + b).min(tokens.len().saturating_sub(1));
        for (j, &context) in tokens.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i {
                out.push(TrainingPair::new(center, context, PairKind::Monolingual));
            }
        }
    }
}

/// Skip-gram pairs with a dynamic window: each position draws its span
/// uniformly from `1..=window`.
pub fn skipgram_pairs<R: Rng + ?Sized>(
    tokens: &[WordId],
    window: usize,
    rng: &mut R,
) -> Result<Vec<TrainingPair>> {
    if window == 0 {
        return Err(CorpusError::InvalidWindow);
    }
    let mut out = Vec::new();
    skipgram_into(tokens, || rng.random_range(1..=window), &mut out);
    Ok(out)
}

/// Skip-gram pairs with the same span at every position.
pub fn skipgram_pairs_fixed(tokens: &[WordId], span: usize) -> Vec<TrainingPair> {
    let mut out = Vec::new();
    skipgram_into(tokens, || span, &mut out);
    out
}

/// Pairs source position `i` with every target position `j`, `|i − j| ≤ span`,
/// in both directions. `span = 0` is plain index alignment.
fn align_into(src: &[Option<WordId>], tgt: &[Option<WordId>], span: usize, out: &mut Vec<TrainingPair>) {
    for (i, s) in src.iter().enumerate() {
        let Some(s) = *s else { continue };
        let lo = i.saturating_sub(span);
        let hi = (i + span + 1).min(tgt.len());
        for t in tgt.get(lo..hi).unwrap_or(&[]).iter().flatten() {
            out.push(TrainingPair::new(s, *t, PairKind::CrossLingual));
            out.push(TrainingPair::new(*t, s, PairKind::CrossLingual));
        }
    }
}

fn aligned_count(src: usize, tgt: usize, present: impl Fn(usize, usize) -> bool, span: usize) -> usize {
    (0..src)
        .map(|i| {
            let hi = (i + span + 1).min(tgt);
            (i.saturating_sub(span)..hi).filter(|&j| present(i, j)).count()
        })
        .sum()
}

/// Pairs the i-th source token with the i-th target token, in both
/// directions, for every index where both are in the vocabulary.
pub fn index_align_pairs(pair: &SentencePair, vocab: &Vocabulary) -> Vec<TrainingPair> {
    let mut out = Vec::new();
    align_into(&vocab.encode(&pair.src), &vocab.encode(&pair.tgt), 0, &mut out);
    out
}

/// A sentence pair mapped to ids; OOV positions are kept as `None` so index
/// alignment still lines up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<Option<WordId>>,
    pub tgt: Vec<Option<WordId>>,
}

impl EncodedPair {
    pub fn new(pair: &SentencePair, vocab: &Vocabulary) -> Self {
        EncodedPair {
            src: vocab.encode(&pair.src),
            tgt: vocab.encode(&pair.tgt),
        }
    }

    fn kept<R: Rng + ?Sized>(
        side: &[Option<WordId>],
        subsampler: Option<&Subsampler>,
        rng: &mut R,
    ) -> Vec<WordId> {
        side.iter()
            .flatten()
            .copied()
            .filter(|&id| subsampler.is_none_or(|s| s.keep(id, rng)))
            .collect()
    }

    /// Appends this pair's training stream: source skip-grams, target
    /// skip-grams, then aligned pairs. `cross_window` widens alignment to
    /// target words within that many positions of the matching index.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        window: usize,
        cross_window: usize,
        subsampler: Option<&Subsampler>,
        rng: &mut R,
        out: &mut Vec<TrainingPair>,
    ) {
        let src = Self::kept(&self.src, subsampler, rng);
        skipgram_into(&src, || rng.random_range(1..=window), out);
        let tgt = Self::kept(&self.tgt, subsampler, rng);
        skipgram_into(&tgt, || rng.random_range(1..=window), out);
        align_into(&self.src, &self.tgt, cross_window, out);
    }

    /// Expected number of pairs [`EncodedPair::generate`] emits without
    /// subsampling.
    pub fn expected_pairs(&self, window: usize, cross_window: usize) -> f64 {
        let mono = |n: usize| -> f64 {
            let mut total = 0usize;
            for i in 0..n {
                for b in 1..=window {
                    total += b.min(i) + b.min(n - 1 - i);
                }
            }
            total as f64 / window as f64
        };
        let src = self.src.iter().flatten().count();
        let tgt = self.tgt.iter().flatten().count();
        let aligned = aligned_count(
            self.src.len(),
            self.tgt.len(),
            |i, j| self.src[i].is_some() && self.tgt[j].is_some(),
            cross_window,
        );
        mono(src) + mono(tgt) + 2.0 * aligned as f64
    }
}

/// Frequent-word subsampling with the word2vec keep probability
/// `(sqrt(f/(t·N)) + 1)·(t·N)/f`.
#[derive(Debug, Clone)]
pub struct Subsampler {
    keep: Vec<f64>,
}

impl Subsampler {
    pub fn new(vocab: &Vocabulary, threshold: f64) -> Self {
        let scaled = threshold * vocab.total_tokens() as f64;
        let keep = vocab
            .counts()
            .iter()
            .map(|&c| {
                let f = c as f64;
                (((f / scaled).sqrt() + 1.0) * scaled / f).min(1.0)
            })
            .collect();
        Subsampler { keep }
    }

    pub fn keep_probability(&self, id: WordId) -> f64 {
        self.keep[id as usize]
    }

    fn keep<R: Rng + ?Sized>(&self, id: WordId, rng: &mut R) -> bool {
        let p = self.keep[id as usize];
        p >= 1.0 || rng.random::<f64>() < p
    }
}

/// Noise distribution `P(id) ∝ count^power` over the whole vocabulary.
#[derive(Debug, Clone)]
pub struct NegativeTable {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

pub fn build_negative_table(vocab: &Vocabulary, smoothing_power: f64) -> Result<NegativeTable> {
    NegativeTable::from_counts(vocab.counts(), smoothing_power)
}

impl NegativeTable {
    pub fn from_counts(counts: &[u64], smoothing_power: f64) -> Result<Self> {
        if !(smoothing_power > 0.0 && smoothing_power <= 1.0) {
            return Err(CorpusError::InvalidSmoothingPower(smoothing_power));
        }
        let weights: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64).powf(smoothing_power))
            .collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc / total
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(NegativeTable { probs, cumulative })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WordId {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= u) as WordId
    }
}

/// Draws `k` noise words, redrawing any draw equal to `exclude`.
pub fn sample_negatives<R: Rng + ?Sized>(
    table: &NegativeTable,
    k: usize,
    exclude: Option<WordId>,
    rng: &mut R,
) -> Result<Vec<WordId>> {
    let mut out = Vec::with_capacity(k);
    sample_negatives_into(table, k, exclude, rng, &mut out)?;
    Ok(out)
}

pub(crate) fn sample_negatives_into<R: Rng + ?Sized>(
    table: &NegativeTable,
    k: usize,
    exclude: Option<WordId>,
    rng: &mut R,
    out: &mut Vec<WordId>,
) -> Result<()> {
    if exclude.is_some() && table.len() < 2 {
        return Err(CorpusError::DegenerateNegatives);
    }
    out.clear();
    while out.len() < k {
        let id = table.sample(rng);
        if Some(id) != exclude {
            out.push(id);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    fn write(dir: &Path, name: &str, body: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize_line("Das Haus ist groß"), toks("das haus ist groß"));
        assert!(tokenize_line("").is_empty());
        assert_eq!(tokenize_line("  a\tb "), toks("a b"));
    }

    #[test]
    fn load_corpus_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"a b\nc\nd e f\n");
        let t = write(dir.path(), "t", b"x\ny z\nw\n");
        let c = load_parallel_corpus(&s, &t, None).unwrap();
        assert_eq!(c.pairs.len(), 3);
        assert_eq!(c.pairs[1].tgt, toks("y z"));
        assert_eq!(c.dropped, 0);
    }

    #[test]
    fn load_corpus_drops_empty_lines() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"a\n  \nc\n");
        let t = write(dir.path(), "t", b"x\ny\nz\n");
        let c = load_parallel_corpus(&s, &t, None).unwrap();
        assert_eq!(c.pairs.len(), 2);
        assert_eq!(c.dropped, 1);
        assert_eq!(c.lines, 3);
    }

    #[test]
    fn load_corpus_line_mismatch_names_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"a\nb\nc\n");
        let t = write(dir.path(), "t", b"x\ny\nz\nw\n");
        match load_parallel_corpus(&s, &t, None) {
            Err(CorpusError::LineCountMismatch {
                src_lines,
                tgt_lines,
                ..
            }) => assert_eq!((src_lines, tgt_lines), (3, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_corpus_reports_bad_encoding_line() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"a\n\xff\xfe\n");
        let t = write(dir.path(), "t", b"x\ny\n");
        match load_parallel_corpus(&s, &t, None) {
            Err(CorpusError::Encoding { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let t = write(dir.path(), "t", b"x\n");
        assert!(matches!(
            load_parallel_corpus(&dir.path().join("nope"), &t, None),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn language_tags_prefix_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s", b"Hund\n");
        let t = write(dir.path(), "t", b"hund\n");
        let c = load_parallel_corpus(&s, &t, Some(LanguageTags::new("de", "en"))).unwrap();
        assert_eq!(c.pairs[0].src, toks("de:hund"));
        assert_eq!(c.pairs[0].tgt, toks("en:hund"));
    }

    fn corpus(src: &[&str], tgt: &[&str]) -> Vec<SentencePair> {
        src.iter()
            .zip(tgt)
            .map(|(s, t)| SentencePair {
                src: tokenize_line(s),
                tgt: tokenize_line(t),
            })
            .collect()
    }

    #[test]
    fn vocabulary_orders_by_count_then_word() {
        let c = corpus(&["a a a b", "a c"], &["a b", "z"]);
        // a×5 b×2 c×1 z×1
        let v = build_vocabulary(&c, 2).unwrap();
        assert_eq!(v.words(), &["a".to_string(), "b".to_string()]);
        assert_eq!(v.counts(), &[5, 2]);
        let v = build_vocabulary(&c, 1).unwrap();
        assert_eq!(v.words(), &toks("a b c z")[..]);
        assert_eq!(v.total_tokens(), 9);
        assert!(matches!(
            build_vocabulary(&c, 6),
            Err(CorpusError::EmptyVocabulary { min_count: 6 })
        ));
    }

    #[test]
    fn vocabulary_merges_languages() {
        let c = corpus(&["hund hund", "hund"], &["dog", "dog"]);
        let v = build_vocabulary(&c, 1).unwrap();
        assert_eq!(v.count(v.id("hund").unwrap()), 3);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn vocabulary_dump_round_trip() {
        let c = corpus(&["a a a b", "a c"], &["a b", "z"]);
        let v = build_vocabulary(&c, 1).unwrap();
        let mut buf = Vec::new();
        v.write_dump(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "a\t5\nb\t2\nc\t1\nz\t1\n");
        let back = Vocabulary::read_dump(&buf[..]).unwrap();
        assert_eq!(back.words(), v.words());
        assert_eq!(back.counts(), v.counts());
    }

    #[test]
    fn vocabulary_dump_rejects_malformed_lines() {
        let err = Vocabulary::read_dump(&b"a\t5\nb 2\n"[..]).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedVocabulary { line: 2, .. }));
        let err = Vocabulary::read_dump(&b"a\t1\nb\t2\n"[..]).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedVocabulary { line: 2, .. }));
        let err = Vocabulary::read_dump(&b"a\tx\n"[..]).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedVocabulary { line: 1, .. }));
    }

    #[test]
    fn skipgram_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(skipgram_pairs(&[7], 5, &mut rng).unwrap().is_empty());
        let p = skipgram_pairs(&[1, 2], 1, &mut rng).unwrap();
        let p: Vec<_> = p.iter().map(|p| (p.center, p.context)).collect();
        assert_eq!(p, vec![(1, 2), (2, 1)]);
        let p: Vec<_> = skipgram_pairs_fixed(&[1, 2, 3], 2)
            .iter()
            .map(|p| (p.center, p.context))
            .collect();
        assert_eq!(p, vec![(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)]);
        assert!(matches!(
            skipgram_pairs(&[1, 2], 0, &mut rng),
            Err(CorpusError::InvalidWindow)
        ));
    }

    #[test]
    fn dynamic_window_never_exceeds_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tokens: Vec<WordId> = (0..40).collect();
        for p in skipgram_pairs(&tokens, 5, &mut rng).unwrap() {
            let gap = (p.center as i64 - p.context as i64).abs();
            assert!((1..=5).contains(&gap));
        }
    }

    #[test]
    fn index_alignment_examples() {
        let v = build_vocabulary(&corpus(&["das haus x"], &["the house"]), 1).unwrap();
        let id = |w| v.id(w).unwrap();
        let pair = |s: &str, t: &str| SentencePair {
            src: tokenize_line(s),
            tgt: tokenize_line(t),
        };
        let got: Vec<_> = index_align_pairs(&pair("das haus", "the house"), &v)
            .iter()
            .map(|p| (p.center, p.context))
            .collect();
        assert_eq!(
            got,
            vec![
                (id("das"), id("the")),
                (id("the"), id("das")),
                (id("haus"), id("house")),
                (id("house"), id("haus"))
            ]
        );
        assert_eq!(index_align_pairs(&pair("das haus x", "the house"), &v).len(), 4);
        let got = index_align_pairs(&pair("das haus", "the unknown"), &v);
        assert_eq!(got.len(), 2);
        assert!(got.iter().all(|p| p.kind == PairKind::CrossLingual));
    }

    #[test]
    fn generate_orders_source_target_aligned() {
        let v = build_vocabulary(&corpus(&["a b"], &["c d"]), 1).unwrap();
        let enc = EncodedPair::new(&corpus(&["a b"], &["c d"])[0], &v);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = Vec::new();
        enc.generate(1, 0, None, &mut rng, &mut out);
        let w = |p: &TrainingPair| (v.word(p.center).to_string(), v.word(p.context).to_string());
        let got: Vec<_> = out.iter().map(w).collect();
        let expect: Vec<_> = [("a", "b"), ("b", "a"), ("c", "d"), ("d", "c"), ("a", "c"), ("c", "a"), ("b", "d"), ("d", "b")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(got, expect);
        assert_eq!(enc.expected_pairs(1, 0), 8.0);
    }

    #[test]
    fn expected_pairs_matches_enumeration() {
        // window 2, 3 tokens: spans (1,1,1)..(2,2,2) averaged per position
        // position 0: b=1 → 1, b=2 → 2; position 1: 2, 2; position 2: 1, 2
        let enc = EncodedPair {
            src: vec![Some(0), Some(1), Some(2)],
            tgt: vec![None],
        };
        assert_eq!(enc.expected_pairs(2, 0), (3.0 + 4.0 + 3.0) / 2.0);
    }

    #[test]
    fn cross_window_pairs_neighbours_of_the_aligned_index() {
        let pairs = corpus(&["a b c"], &["x y"]);
        let v = build_vocabulary(&pairs, 1).unwrap();
        let enc = EncodedPair::new(&pairs[0], &v);
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        enc.generate(1, 1, None, &mut rng, &mut out);
        let cross: Vec<_> = out
            .iter()
            .filter(|p| p.kind == PairKind::CrossLingual)
            .map(|p| (v.word(p.center), v.word(p.context)))
            .collect();
        // a↔x, a↔y, b↔x, b↔y, c↔y
        assert_eq!(cross.len(), 10);
        assert!(cross.contains(&("c", "y")) && !cross.contains(&("c", "x")));
        for &(c, x) in &cross {
            assert!(cross.contains(&(x, c)));
        }
        assert_eq!(enc.expected_pairs(1, 1), 4.0 + 2.0 + 10.0);
    }

    #[test]
    fn subsampling_keeps_rare_words() {
        let v = Vocabulary::from_counts(vec![("the".into(), 10_000), ("rare".into(), 1)], 1).unwrap();
        let s = Subsampler::new(&v, 1e-3);
        assert_eq!(s.keep_probability(v.id("rare").unwrap()), 1.0);
        assert!(s.keep_probability(v.id("the").unwrap()) < 0.5);
    }

    #[test]
    fn negative_table_probabilities() {
        let t = NegativeTable::from_counts(&[4, 1], 1.0).unwrap();
        assert!((t.probabilities()[0] - 0.8).abs() < 1e-15);
        assert!((t.probabilities()[1] - 0.2).abs() < 1e-15);
        let t = NegativeTable::from_counts(&[4, 1], 0.75).unwrap();
        // 4^0.75 / (4^0.75 + 1), mpmath
        assert!((t.probabilities()[0] - 0.738_796_125_036_258_6).abs() < 1e-15);
        let t = NegativeTable::from_counts(&[3, 3, 3, 3], 0.75).unwrap();
        assert!(t.probabilities().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!(NegativeTable::from_counts(&[1], 0.0).is_err());
        assert!(NegativeTable::from_counts(&[1], 1.5).is_err());
    }

    #[test]
    fn negatives_respect_exclusion() {
        let t = NegativeTable::from_counts(&[10, 1], 0.75).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = sample_negatives(&t, 50, Some(0), &mut rng).unwrap();
        assert!(s.iter().all(|&id| id == 1));
        let one = NegativeTable::from_counts(&[10], 0.75).unwrap();
        assert!(matches!(
            sample_negatives(&one, 1, Some(0), &mut rng),
            Err(CorpusError::DegenerateNegatives)
        ));
    }

    #[test]
    fn negatives_follow_distribution() {
        let t = NegativeTable::from_counts(&[4, 1], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = sample_negatives(&t, 1_000_000, None, &mut rng).unwrap();
        let ones = draws.iter().filter(|&&d| d == 1).count() as f64 / 1e6;
        assert!((ones - 0.2).abs() < 0.01, "{ones}");
    }

    #[test]
    fn negatives_are_deterministic() {
        let t = NegativeTable::from_counts(&[5, 4, 3, 2, 1], 0.75).unwrap();
        let a = sample_negatives(&t, 100, Some(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_negatives(&t, 100, Some(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aligned_pairs_closed_under_swap() {
        let c = corpus(&["a b c d"], &["w x y"]);
        let v = build_vocabulary(&c, 1).unwrap();
        let pairs = index_align_pairs(&c[0], &v);
        let set: HashSet<_> = pairs.iter().map(|p| (p.center, p.context)).collect();
        assert!(set.iter().all(|(a, b)| set.contains(&(*b, *a))));
    }
}
