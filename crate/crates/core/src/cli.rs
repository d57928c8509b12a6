//! Command-line entry points.
//!
//! Exit statuses: 0 on success, 1 on a runtime failure, 2 on a usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::corpus::{self, CorpusError, LanguageTags, Vocabulary};
use crate::datasets::{self, DatasetError};
use crate::eval::{self, Embeddings, EvalError, NeighborMetric};
use crate::model::{Checkpointing, Geometry, ModelConfig, ModelError, Retraction, TrainStats, Trainer};
use crate::persist::{self, Metadata, PersistError};

#[derive(Debug, Parser)]
#[command(name = "poincare-xling", version, about = "Cross-lingual word embeddings in the Poincaré ball")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train embeddings on a line-aligned parallel corpus.
    Train(TrainArgs),
    /// Spearman correlation against HyperLex is-a ratings.
    EvalHyperlex(EvalHyperlexArgs),
    /// 3CosAdd analogy accuracy.
    EvalAnalogy(EvalAnalogyArgs),
    /// Closest words with a larger norm than the query.
    QueryChildren(QueryChildrenArgs),
    /// Nearest neighbours of a word.
    QueryNeighbors(QueryNeighborsArgs),
    /// Spearman correlation between inverse frequency and norm.
    ReportNormFreq(ReportNormFreqArgs),
    /// Build the vocabulary of a corpus and print it as `word<TAB>count`.
    DumpVocab(DumpVocabArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Source-language side, one sentence per line.
    #[arg(long)]
    pub src_corpus: PathBuf,
    /// Target-language side, aligned line by line with the source.
    #[arg(long)]
    pub tgt_corpus: PathBuf,
    /// Words occurring fewer times are dropped.
    #[arg(long, default_value_t = 100)]
    pub min_count: u64,
    /// Prefix tokens with language tags, e.g. `de,en` gives `de:haus`.
    #[arg(long, value_name = "SRC,TGT")]
    pub lang_tags: Option<String>,
}

impl CorpusArgs {
    fn tags(&self) -> Result<Option<LanguageTags>, CliError> {
        let Some(spec) = &self.lang_tags else { return Ok(None) };
        match spec.split_once(',') {
            Some((s, t)) if !s.is_empty() && !t.is_empty() && !t.contains(',') => {
                Ok(Some(LanguageTags::new(s, t)))
            }
            _ => Err(CliError::Invalid(format!("--lang-tags expects SRC,TGT, got {spec:?}"))),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value = "poincare", value_parser = parse_geometry)]
    pub geometry: Geometry,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Learn a scalar bias per context word.
    #[arg(long)]
    pub bias: bool,
    /// Also learn a scalar bias per center word.
    #[arg(long)]
    pub target_bias: bool,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Initial learning rate [default: 0.025 euclidean, 0.05 poincare].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate floor [default: 1e-4 × lr].
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Pair each aligned word with target words up to N positions from its
    /// index (0 keeps strict index alignment).
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub cross_window: usize,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "exp", value_parser = parse_retraction)]
    pub retraction: Retraction,
    /// Default α recorded for later hypernymy evaluation.
    #[arg(long, default_value_t = 1000.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = crate::geometry::BALL_EPSILON)]
    pub ball_epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub init_radius: f64,
    /// Exponent applied to unigram counts for negative sampling.
    #[arg(long, default_value_t = 0.75)]
    pub smoothing_power: f64,
    /// Frequent-word subsampling threshold (off when absent).
    #[arg(long)]
    pub subsample: Option<f64>,
    /// Write a checkpoint to `<out>.ckpt` after every N epochs.
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Embedding file; metadata goes to `<out>.meta`, vocabulary to `<out>.vocab`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalHyperlexArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = datasets::DEFAULT_SCORE_COLUMN)]
    pub score_column: String,
    #[arg(long, default_value_t = 1000.0)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct EvalAnalogyArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryChildrenArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub word: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct QueryNeighborsArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub word: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value = "cosine", value_parser = parse_metric)]
    pub metric: NeighborMetric,
}

#[derive(Debug, Args)]
pub struct ReportNormFreqArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Vocabulary dump with counts [default: `<embeddings>.vocab`].
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpVocabArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Write to a file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_geometry(s: &str) -> Result<Geometry, String> {
    s.parse()
}

fn parse_retraction(s: &str) -> Result<Retraction, String> {
    s.parse()
}

fn parse_metric(s: &str) -> Result<NeighborMetric, String> {
    s.parse()
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{}: {source}", path.display())]
    Dataset {
        path: PathBuf,
        #[source]
        source: DatasetError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status. Reports go to `out`, diagnostics to `err`.
pub fn run_command<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().ansi().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Train(a) => train(a, out, err),
        Command::EvalHyperlex(a) => eval_hyperlex(a, out),
        Command::EvalAnalogy(a) => eval_analogy(a, out),
        Command::QueryChildren(a) => query_children(a, out),
        Command::QueryNeighbors(a) => query_neighbors(a, out),
        Command::ReportNormFreq(a) => report_norm_freq(a, out),
        Command::DumpVocab(a) => dump_vocab(a, out),
    }
}

fn stdout_io(e: io::Error) -> CliError {
    CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

impl TrainArgs {
    fn config(&self) -> Result<ModelConfig, CliError> {
        let mut c = ModelConfig::new(self.geometry);
        c.dim = self.dim;
        c.use_bias = self.bias;
        c.target_bias = self.target_bias;
        c.epochs = self.epochs;
        if let Some(lr) = self.lr {
            c.learning_rate = lr;
            c.lr_min = 1e-4 * lr;
        }
        if let Some(m) = self.lr_min {
            c.lr_min = m;
        }
        c.window = self.window;
        c.cross_window = self.cross_window;
        c.negatives_per_pair = self.negatives;
        c.threads = self.threads;
        c.seed = self.seed;
        c.retraction = self.retraction;
        c.ball_epsilon = self.ball_epsilon;
        c.init_radius = self.init_radius;
        c.smoothing_power = self.smoothing_power;
        c.subsample = self.subsample;
        c.validate()?;
        if self.corpus.min_count == 0 {
            return Err(CorpusError::InvalidMinCount.into());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(CliError::Invalid(format!("--alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(CliError::Invalid("--checkpoint-every must be positive".into()));
        }
        Ok(c)
    }
}

/// Every setting of the run, defaults included, in a fixed order.
fn run_metadata(args: &TrainArgs, c: &ModelConfig) -> Metadata {
    let mut m = Metadata::new();
    m.set("geometry", c.geometry)
        .set("dim", c.dim)
        .set("use_bias", c.use_bias)
        .set("target_bias", c.target_bias)
        .set(
            "h_function",
            match c.geometry {
                Geometry::Poincare => "cosh2",
                Geometry::Euclidean => "none",
            },
        )
        .set("min_count", args.corpus.min_count)
        .set("window", c.window)
        .set("cross_window", c.cross_window)
        .set("negatives", c.negatives_per_pair)
        .set("seed", c.seed)
        .set("alpha", args.alpha)
        .set("ball_epsilon", c.ball_epsilon)
        .set("learning_rate", c.learning_rate)
        .set("lr_min", c.lr_min)
        .set("epochs", c.epochs)
        .set("retraction", c.retraction)
        .set("init_radius", c.init_radius)
        .set("smoothing_power", c.smoothing_power)
        .set("subsample", c.subsample.map_or("off".to_string(), |t| t.to_string()))
        .set("threads", c.threads)
        .set("lang_tags", args.corpus.lang_tags.as_deref().unwrap_or("off"))
        .set("src_corpus", args.corpus.src_corpus.display())
        .set("tgt_corpus", args.corpus.tgt_corpus.display());
    m
}

fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_at(path))?;
    let mut w = BufWriter::new(file);
    vocab
        .write_dump(&mut w)
        .and_then(|_| w.flush())
        .map_err(io_at(path))
}

fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let file = File::open(path).map_err(io_at(path))?;
    Ok(Vocabulary::read_dump(BufReader::new(file))?)
}

fn train(args: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = args.config()?;
    let tags = args.corpus.tags()?;
    let corpus = corpus::load_parallel_corpus(&args.corpus.src_corpus, &args.corpus.tgt_corpus, tags)?;
    let vocab = corpus::build_vocabulary(&corpus.pairs, args.corpus.min_count)?;
    let _ = writeln!(
        err,
        "corpus: {} sentence pairs ({} empty dropped), vocabulary {} words",
        corpus.pairs.len(),
        corpus.dropped,
        vocab.len()
    );
    let trainer = Trainer::new(&corpus.pairs, &vocab, &config)?;
    let mut meta = run_metadata(&args, &config);
    meta.set("corpus_pairs", corpus.pairs.len())
        .set("corpus_dropped", corpus.dropped);

    let (store, stats) = match &args.resume {
        Some(path) => {
            let ck = persist::load_checkpoint(path)?;
            if ck.words != vocab.words() {
                return Err(CliError::Invalid(format!(
                    "checkpoint {} was built from a different vocabulary",
                    path.display()
                )));
            }
            let _ = writeln!(err, "resuming from epoch {}", ck.stats.epoch);
            (ck.store, ck.stats)
        }
        None => (trainer.init(), TrainStats::default()),
    };

    let ckpt_path = persist::with_suffix(&args.out, ".ckpt");
    let mut sink = |s: &crate::model::ParameterStore, st: &TrainStats| -> io::Result<()> {
        persist::save_checkpoint(&ckpt_path, s, vocab.words(), st, &meta).map_err(io::Error::other)?;
        let _ = writeln!(err, "epoch {}: mean loss {:.6}, checkpoint written", st.epoch, st.mean_loss);
        Ok(())
    };
    let checkpoint = args.checkpoint_every.map(|every| Checkpointing {
        every,
        sink: &mut sink,
    });
    let (store, stats) = trainer.run(store, stats, checkpoint)?;

    meta.set("pairs_processed", stats.pairs_processed)
        .set("skipped_singular", stats.skipped_singular)
        .set("skipped_saturated", stats.skipped_saturated)
        .set("final_mean_loss", stats.mean_loss);
    let emb = Embeddings::from_store(&store, &vocab);
    persist::save_embeddings(&args.out, &emb, &meta)?;
    write_vocab(&persist::with_suffix(&args.out, ".vocab"), &vocab)?;

    for (i, l) in stats.epoch_losses.iter().enumerate() {
        writeln!(out, "epoch {}: loss {l:.6}", i + 1).map_err(stdout_io)?;
    }
    writeln!(
        out,
        "trained {} pairs; skipped {} near-singular, {} saturated; wrote {}",
        stats.pairs_processed,
        stats.skipped_singular,
        stats.skipped_saturated,
        args.out.display()
    )
    .map_err(stdout_io)
}

fn load(path: &Path) -> Result<(Embeddings, Metadata), CliError> {
    Ok(persist::load_embeddings(path)?)
}

fn with_model_info(mut report: eval::EvalReport, meta: &Metadata) -> eval::EvalReport {
    for key in ["geometry", "dim", "use_bias", "epochs", "seed"] {
        if let Some(v) = meta.get(key) {
            report = report.with_extra(key, v);
        }
    }
    report
}

fn eval_hyperlex(args: EvalHyperlexArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (emb, meta) = load(&args.embeddings)?;
    let records = datasets::parse_hyperlex_file(&args.dataset, &args.score_column).map_err(|source| {
        CliError::Dataset {
            path: args.dataset.clone(),
            source,
        }
    })?;
    let report = eval::eval_hyperlex(&records, &emb, args.alpha)?;
    let report = with_model_info(report, &meta).with_extra("dataset", args.dataset.display().to_string());
    writeln!(out, "{}", report.record_line()).map_err(stdout_io)
}

fn eval_analogy(args: EvalAnalogyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (emb, meta) = load(&args.embeddings)?;
    let queries = datasets::parse_analogy_file(&args.dataset).map_err(|source| CliError::Dataset {
        path: args.dataset.clone(),
        source,
    })?;
    let report = eval::eval_analogy(&queries, &emb)?;
    let report = with_model_info(report, &meta).with_extra("dataset", args.dataset.display().to_string());
    writeln!(out, "{}", report.record_line()).map_err(stdout_io)
}

fn query_children(args: QueryChildrenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (emb, _) = load(&args.embeddings)?;
    let children = eval::closest_children(&args.word, args.k, &emb)?;
    for n in children {
        writeln!(out, "{}\t{:.6}\t{:.6}", n.word, n.score, n.norm).map_err(stdout_io)?;
    }
    Ok(())
}

fn query_neighbors(args: QueryNeighborsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (emb, _) = load(&args.embeddings)?;
    let neighbors = eval::nearest_neighbors(&args.word, args.k, &emb, args.metric)?;
    for n in neighbors {
        writeln!(out, "{}\t{:.6}\t{:.6}", n.word, n.score, n.norm).map_err(stdout_io)?;
    }
    Ok(())
}

fn report_norm_freq(args: ReportNormFreqArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (emb, meta) = load(&args.embeddings)?;
    let vocab_path = args
        .vocab
        .clone()
        .unwrap_or_else(|| persist::with_suffix(&args.embeddings, ".vocab"));
    let vocab = read_vocab(&vocab_path)?;
    let rho = eval::norm_frequency_correlation(&emb, &vocab)?;
    let mut line = format!("task=norm-frequency metric={rho} words={}", emb.len());
    for key in ["geometry", "dim"] {
        if let Some(v) = meta.get(key) {
            line.push_str(&format!(" {key}={v}"));
        }
    }
    writeln!(out, "{line}").map_err(stdout_io)
}

fn dump_vocab(args: DumpVocabArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let tags = args.corpus.tags()?;
    let corpus = corpus::load_parallel_corpus(&args.corpus.src_corpus, &args.corpus.tgt_corpus, tags)?;
    let vocab = corpus::build_vocabulary(&corpus.pairs, args.corpus.min_count)?;
    match &args.out {
        Some(path) => write_vocab(path, &vocab),
        None => vocab.write_dump(out).map_err(stdout_io),
    }
}
