//! Skip-gram with negative sampling in Euclidean space or in the Poincaré ball.
//!
//! The score of a (center, context) pair is `⟨u, v⟩ + b` in the Euclidean
//! model and `−cosh²(d(u, v)) + b` in the Poincaré model. Training minimises
//! the logistic loss of the positive pair against `k` sampled noise words.
//! Euclidean rows take plain SGD steps; Poincaré rows take Riemannian steps
//! (rescaled gradient, exponential-map retraction).

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::corpus::{
    self, CorpusError, EncodedPair, NegativeTable, SentencePair, Subsampler, TrainingPair,
    Vocabulary, WordId,
};
use crate::geometry::{self, GeometryError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("sample skipped: {0}")]
    Skipped(GeometryError),
    #[error("non-finite update for sample (center {center:?}, context {context:?})")]
    NonFiniteUpdate { center: String, context: String },
    #[error("non-finite parameter update")]
    NonFiniteStep,
    #[error("the corpus produces no training pairs")]
    EmptyStream,
    #[error("word id {0} out of range")]
    BadId(WordId),
    #[error("checkpoint failed: {0}")]
    Checkpoint(#[source] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    Euclidean,
    Poincare,
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Euclidean => "euclidean",
            Geometry::Poincare => "poincare",
        })
    }
}

impl FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euclidean" => Ok(Geometry::Euclidean),
            "poincare" => Ok(Geometry::Poincare),
            _ => Err(format!("unknown geometry {s:?} (expected euclidean or poincare)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Retraction {
    ExpMap,
    FirstOrder,
}

impl fmt::Display for Retraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Retraction::ExpMap => "exp",
            Retraction::FirstOrder => "first-order",
        })
    }
}

impl FromStr for Retraction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exp" => Ok(Retraction::ExpMap),
            "first-order" => Ok(Retraction::FirstOrder),
            _ => Err(format!("unknown retraction {s:?} (expected exp or first-order)")),
        }
    }
}

/// Weight of the newest sample in [`TrainStats::mean_loss`].
pub const LOSS_EMA_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub geometry: Geometry,
    pub dim: usize,
    /// Scalar bias on the context word.
    pub use_bias: bool,
    /// Additional scalar bias on the center word.
    pub target_bias: bool,
    pub negatives_per_pair: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub seed: u64,
    pub ball_epsilon: f64,
    pub retraction: Retraction,
    /// Largest initial norm of a Poincaré row.
    pub init_radius: f64,
    pub window: usize,
    /// Aligned source words also pair with target words this many positions
    /// around the matching index; 0 keeps strict index alignment.
    pub cross_window: usize,
    pub smoothing_power: f64,
    /// Frequent-word subsampling threshold; `None` disables subsampling.
    pub subsample: Option<f64>,
    pub threads: usize,
}

impl ModelConfig {
    pub fn new(geometry: Geometry) -> Self {
        let learning_rate = match geometry {
            Geometry::Euclidean => 0.025,
            Geometry::Poincare => 0.05,
        };
        ModelConfig {
            geometry,
            dim: 100,
            use_bias: false,
            target_bias: false,
            negatives_per_pair: 5,
            learning_rate,
            lr_min: 1e-4 * learning_rate,
            epochs: 5,
            seed: 1,
            ball_epsilon: geometry::BALL_EPSILON,
            retraction: Retraction::ExpMap,
            init_radius: 1e-3,
            window: 5,
            cross_window: 0,
            smoothing_power: 0.75,
            subsample: None,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.negatives_per_pair < 1 {
            return bad("negatives must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.learning_rate) {
            return bad("lr_min must be positive and at most the learning rate");
        }
        if !(self.ball_epsilon > 0.0 && self.ball_epsilon < 1.0) {
            return bad("ball epsilon must lie in (0, 1)");
        }
        if !(self.init_radius >= 0.0 && self.init_radius <= 1.0 - self.ball_epsilon) {
            return bad("init radius must lie in [0, 1 - ball_epsilon]");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if !(self.smoothing_power > 0.0 && self.smoothing_power <= 1.0) {
            return bad("smoothing power must lie in (0, 1]");
        }
        if let Some(t) = self.subsample {
            if !(t > 0.0 && t.is_finite()) {
                return bad("subsampling threshold must be positive");
            }
        }
        if self.threads < 1 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}

/// Trainable state. Rows are stored contiguously, `dim` values per word.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub geometry: Geometry,
    pub dim: usize,
    pub target: Vec<f64>,
    pub context: Vec<f64>,
    pub context_bias: Option<Vec<f64>>,
    pub target_bias: Option<Vec<f64>>,
}

impl ParameterStore {
    pub fn zeros(geometry: Geometry, vocab_size: usize, dim: usize, context_bias: bool, target_bias: bool) -> Self {
        ParameterStore {
            geometry,
            dim,
            target: vec![0.0; vocab_size * dim],
            context: vec![0.0; vocab_size * dim],
            context_bias: context_bias.then(|| vec![0.0; vocab_size]),
            target_bias: target_bias.then(|| vec![0.0; vocab_size]),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.target.len() / self.dim
    }

    pub fn target_row(&self, id: WordId) -> &[f64] {
        let i = id as usize * self.dim;
        &self.target[i..i + self.dim]
    }

    pub fn context_row(&self, id: WordId) -> &[f64] {
        let i = id as usize * self.dim;
        &self.context[i..i + self.dim]
    }

    pub fn target_row_mut(&mut self, id: WordId) -> &mut [f64] {
        let i = id as usize * self.dim;
        &mut self.target[i..i + self.dim]
    }

    pub fn context_row_mut(&mut self, id: WordId) -> &mut [f64] {
        let i = id as usize * self.dim;
        &mut self.context[i..i + self.dim]
    }

    fn bias_of(biases: &Option<Vec<f64>>, id: WordId) -> f64 {
        biases.as_ref().map_or(0.0, |b| b[id as usize])
    }

    fn check_id(&self, id: WordId) -> Result<()> {
        if (id as usize) < self.vocab_size() {
            Ok(())
        } else {
            Err(ModelError::BadId(id))
        }
    }
}

pub fn init_parameters<R: Rng + ?Sized>(vocab_size: usize, config: &ModelConfig, rng: &mut R) -> ParameterStore {
    let dim = config.dim;
    let mut store = ParameterStore::zeros(config.geometry, vocab_size, dim, config.use_bias, config.target_bias);
    match config.geometry {
        Geometry::Euclidean => {
            let bound = 0.5 / dim as f64;
            store
                .target
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-bound..=bound));
        }
        Geometry::Poincare => {
            let mut fill = |rows: &mut [f64]| {
                for row in rows.chunks_exact_mut(dim) {
                    let mut n = 0.0;
                    while n == 0.0 {
                        row.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut *rng));
                        n = geometry::norm(row);
                    }
                    let radius = rng.random::<f64>() * config.init_radius;
                    row.iter_mut().for_each(|x| *x *= radius / n);
                }
            };
            fill(&mut store.target);
            fill(&mut store.context);
        }
    }
    store
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)`, i.e. `−ln σ(−x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `⟨u, v⟩ + b` (Euclidean) or `−cosh²(d(u, v)) + b` (Poincaré); the bias is
/// only added when `config.use_bias` is set.
pub fn score_pair(u: &[f64], v: &[f64], bias: f64, config: &ModelConfig) -> Result<f64> {
    let b = if config.use_bias { bias } else { 0.0 };
    Ok(match config.geometry {
        Geometry::Euclidean => geometry::dot(u, v) + b,
        Geometry::Poincare => -geometry::h_apply(geometry::poincare_distance(u, v)?)?.0 + b,
    })
}

/// Rows touched by one (center, context, negatives) sample, copied out of a
/// store so the loss and its gradients can be formed without holding borrows.
struct Sample {
    dim: usize,
    center_id: WordId,
    center: Vec<f64>,
    center_bias: f64,
    ctx_ids: Vec<WordId>,
    ctx: Vec<f64>,
    ctx_bias: Vec<f64>,
    /// (slot into ctx_ids, positive?) per loss term.
    terms: Vec<(usize, bool)>,
    loss: f64,
    grad_center: Vec<f64>,
    grad_ctx: Vec<f64>,
    grad_ctx_bias: Vec<f64>,
    grad_center_bias: f64,
    grad_u: Vec<f64>,
    grad_v: Vec<f64>,
}

/// Read access to rows; implemented by the plain and the shared store.
trait RowSource {
    fn read_target(&self, id: WordId, out: &mut [f64]);
    fn read_context(&self, id: WordId, out: &mut [f64]);
    fn context_bias(&self, id: WordId) -> f64;
    fn target_bias(&self, id: WordId) -> f64;
}

impl RowSource for ParameterStore {
    fn read_target(&self, id: WordId, out: &mut [f64]) {
        out.copy_from_slice(self.target_row(id));
    }
    fn read_context(&self, id: WordId, out: &mut [f64]) {
        out.copy_from_slice(self.context_row(id));
    }
    fn context_bias(&self, id: WordId) -> f64 {
        Self::bias_of(&self.context_bias, id)
    }
    fn target_bias(&self, id: WordId) -> f64 {
        Self::bias_of(&self.target_bias, id)
    }
}

impl Sample {
    fn new(dim: usize) -> Self {
        Sample {
            dim,
            center_id: 0,
            center: vec![0.0; dim],
            center_bias: 0.0,
            ctx_ids: Vec::new(),
            ctx: Vec::new(),
            ctx_bias: Vec::new(),
            terms: Vec::new(),
            loss: 0.0,
            grad_center: vec![0.0; dim],
            grad_ctx: Vec::new(),
            grad_ctx_bias: Vec::new(),
            grad_center_bias: 0.0,
            grad_u: vec![0.0; dim],
            grad_v: vec![0.0; dim],
        }
    }

    fn gather<S: RowSource>(&mut self, src: &S, center: WordId, context: WordId, negatives: &[WordId]) {
        let dim = self.dim;
        self.center_id = center;
        src.read_target(center, &mut self.center);
        self.center_bias = src.target_bias(center);
        self.ctx_ids.clear();
        self.terms.clear();
        for (id, positive) in std::iter::once((context, true)).chain(negatives.iter().map(|&n| (n, false))) {
            let slot = match self.ctx_ids.iter().position(|&c| c == id) {
                Some(slot) => slot,
                None => {
                    self.ctx_ids.push(id);
                    self.ctx_ids.len() - 1
                }
            };
            self.terms.push((slot, positive));
        }
        let n = self.ctx_ids.len();
        self.ctx.resize(n * dim, 0.0);
        self.ctx_bias.resize(n, 0.0);
        for (slot, &id) in self.ctx_ids.iter().enumerate() {
            src.read_context(id, &mut self.ctx[slot * dim..(slot + 1) * dim]);
            self.ctx_bias[slot] = src.context_bias(id);
        }
    }

    /// Pulls rows back inside the ball; a no-op unless concurrent writers
    /// left a torn row behind.
    fn sanitize(&mut self, ball_epsilon: f64) -> Result<()> {
        geometry::project_in_place(&mut self.center, ball_epsilon)?;
        for row in self.ctx.chunks_exact_mut(self.dim) {
            geometry::project_in_place(row, ball_epsilon)?;
        }
        Ok(())
    }

    /// Fills `loss` and, when `with_grad`, all gradient buffers.
    fn compute(&mut self, config: &ModelConfig, with_grad: bool) -> Result<()> {
        let dim = self.dim;
        let n = self.ctx_ids.len();
        self.loss = 0.0;
        self.grad_center.iter_mut().for_each(|g| *g = 0.0);
        self.grad_ctx.clear();
        self.grad_ctx.resize(n * dim, 0.0);
        self.grad_ctx_bias.clear();
        self.grad_ctx_bias.resize(n, 0.0);
        self.grad_center_bias = 0.0;

        let skip = |e: GeometryError| match e {
            GeometryError::Singular { .. } | GeometryError::Saturated { .. } => ModelError::Skipped(e),
            other => ModelError::Geometry(other),
        };

        for &(slot, positive) in &self.terms {
            let v = &self.ctx[slot * dim..(slot + 1) * dim];
            let mut bias = 0.0;
            if config.use_bias {
                bias += self.ctx_bias[slot];
            }
            if config.target_bias {
                bias += self.center_bias;
            }
            // ds/du and ds/dv go to grad_u / grad_v.
            let score = match config.geometry {
                Geometry::Euclidean => {
                    if with_grad {
                        self.grad_u.copy_from_slice(v);
                        self.grad_v.copy_from_slice(&self.center);
                    }
                    geometry::dot(&self.center, v) + bias
                }
                Geometry::Poincare => {
                    let d = geometry::poincare_distance(&self.center, v)?;
                    if d < geometry::DERIVATIVE_GUARD {
                        return Err(ModelError::Skipped(GeometryError::Singular { distance: d }));
                    }
                    let (h, dh) = geometry::h_apply(d).map_err(skip)?;
                    if with_grad {
                        let gu = geometry::distance_gradient(&self.center, v).map_err(skip)?;
                        let gv = geometry::distance_gradient(v, &self.center).map_err(skip)?;
                        for i in 0..dim {
                            self.grad_u[i] = -dh * gu[i];
                            self.grad_v[i] = -dh * gv[i];
                        }
                    }
                    -h + bias
                }
            };
            // dL/ds: σ(s) − 1 for the positive term, σ(s) for noise terms.
            let (term_loss, dl) = if positive {
                (softplus(-score), sigmoid(score) - 1.0)
            } else {
                (softplus(score), sigmoid(score))
            };
            self.loss += term_loss;
            if with_grad {
                for i in 0..dim {
                    self.grad_center[i] += dl * self.grad_u[i];
                    self.grad_ctx[slot * dim + i] += dl * self.grad_v[i];
                }
                if config.use_bias {
                    self.grad_ctx_bias[slot] += dl;
                }
                if config.target_bias {
                    self.grad_center_bias += dl;
                }
            }
        }
        if !self.loss.is_finite() {
            return Err(ModelError::NonFiniteStep);
        }
        Ok(())
    }

    /// Applies the computed gradients to the local row copies.
    fn step(&mut self, lr: f64, config: &ModelConfig) -> Result<()> {
        let dim = self.dim;
        let apply = |row: &mut [f64], grad: &[f64]| match config.geometry {
            Geometry::Euclidean => sgd_step(row, grad, lr),
            Geometry::Poincare => rsgd_step(row, grad, lr, config),
        };
        apply(&mut self.center, &self.grad_center)?;
        for slot in 0..self.ctx_ids.len() {
            let r = slot * dim..(slot + 1) * dim;
            apply(&mut self.ctx[r.clone()], &self.grad_ctx[r])?;
        }
        if config.use_bias {
            for (b, g) in self.ctx_bias.iter_mut().zip(&self.grad_ctx_bias) {
                *b = scalar_step(*b, *g, lr)?;
            }
        }
        if config.target_bias {
            self.center_bias = scalar_step(self.center_bias, self.grad_center_bias, lr)?;
        }
        Ok(())
    }
}

fn scalar_step(b: f64, g: f64, lr: f64) -> Result<f64> {
    let out = b - lr * g;
    if out.is_finite() {
        Ok(out)
    } else {
        Err(ModelError::NonFiniteStep)
    }
}

fn check_sample(store: &ParameterStore, config: &ModelConfig, ids: impl IntoIterator<Item = WordId>) -> Result<()> {
    if store.geometry != config.geometry || store.dim != config.dim {
        return Err(ModelError::Config("store does not match the configuration".into()));
    }
    ids.into_iter().try_for_each(|id| store.check_id(id))
}

/// Negative log-likelihood of one positive pair and its noise words:
/// `−ln σ(s(u, v)) − Σ ln σ(−s(u, v'))`.
pub fn sgns_loss(
    center: WordId,
    context: WordId,
    negatives: &[WordId],
    store: &ParameterStore,
    config: &ModelConfig,
) -> Result<f64> {
    check_sample(store, config, [center, context].into_iter().chain(negatives.iter().copied()))?;
    let mut s = Sample::new(store.dim);
    s.gather(store, center, context, negatives);
    s.compute(config, false)?;
    Ok(s.loss)
}

/// Ambient gradients of [`sgns_loss`] for every row and bias the sample
/// touches. Repeated noise words are merged into one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradients {
    pub loss: f64,
    pub center: (WordId, Vec<f64>),
    /// Context rows, positive context first.
    pub contexts: Vec<(WordId, Vec<f64>)>,
    /// Empty unless the context bias is enabled.
    pub context_bias: Vec<(WordId, f64)>,
    pub center_bias: Option<(WordId, f64)>,
}

pub fn sgns_gradients(
    center: WordId,
    context: WordId,
    negatives: &[WordId],
    store: &ParameterStore,
    config: &ModelConfig,
) -> Result<SampleGradients> {
    check_sample(store, config, [center, context].into_iter().chain(negatives.iter().copied()))?;
    let dim = store.dim;
    let mut s = Sample::new(dim);
    s.gather(store, center, context, negatives);
    s.compute(config, true)?;
    Ok(SampleGradients {
        loss: s.loss,
        center: (center, s.grad_center.clone()),
        contexts: s
            .ctx_ids
            .iter()
            .enumerate()
            .map(|(slot, &id)| (id, s.grad_ctx[slot * dim..(slot + 1) * dim].to_vec()))
            .collect(),
        context_bias: if config.use_bias {
            s.ctx_ids.iter().copied().zip(s.grad_ctx_bias.iter().copied()).collect()
        } else {
            Vec::new()
        },
        center_bias: config.target_bias.then_some((center, s.grad_center_bias)),
    })
}

/// `row ← row − lr·grad`. The row is left untouched if the result would not be finite.
pub fn sgd_step(row: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if row.len() != grad.len() {
        return Err(GeometryError::DimensionMismatch {
            left: row.len(),
            right: grad.len(),
        }
        .into());
    }
    if row.iter().zip(grad).any(|(x, g)| !(x - lr * g).is_finite()) {
        return Err(ModelError::NonFiniteStep);
    }
    row.iter_mut().zip(grad).for_each(|(x, g)| *x -= lr * g);
    Ok(())
}

/// Riemannian step: rescale the ambient gradient by `1/λ²`, then retract
/// along `−lr·grad_R` with the exponential map (or a projected first-order
/// step). The result always satisfies `||row|| ≤ 1 − ball_epsilon`.
pub fn rsgd_step(row: &mut [f64], grad: &[f64], lr: f64, config: &ModelConfig) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteStep);
    }
    let riem = geometry::riemannian_rescale(row, grad)?;
    let step: Vec<f64> = riem.iter().map(|g| -lr * g).collect();
    let next = match config.retraction {
        Retraction::ExpMap => geometry::exp_map_with_epsilon(row, &step, config.ball_epsilon)?,
        Retraction::FirstOrder => {
            let moved: Vec<f64> = row.iter().zip(&step).map(|(x, s)| x + s).collect();
            geometry::project_to_ball(&moved, config.ball_epsilon).map_err(|e| match e {
                GeometryError::NonFinite => ModelError::NonFiniteStep,
                e => e.into(),
            })?
        }
    };
    row.copy_from_slice(&next);
    Ok(())
}

/// `max(lr_min, lr₀·(1 − t/T))`.
pub fn learning_rate_at(pairs_done: u64, total_pairs: f64, lr0: f64, lr_min: f64) -> f64 {
    if total_pairs <= 0.0 {
        return lr0;
    }
    (lr0 * (1.0 - pairs_done as f64 / total_pairs)).max(lr_min)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub pairs_processed: u64,
    /// Exponential moving average of the per-sample loss.
    pub mean_loss: f64,
    /// Completed epochs.
    pub epoch: usize,
    pub skipped_singular: u64,
    pub skipped_saturated: u64,
    /// Exact mean sample loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
}

/// Lock-free view of a [`ParameterStore`] for concurrent workers. Each value
/// is an `f64` bit pattern; loads and stores are relaxed, so concurrent
/// updates to the same row may be lost.
struct SharedStore {
    geometry: Geometry,
    dim: usize,
    target: Vec<AtomicU64>,
    context: Vec<AtomicU64>,
    context_bias: Option<Vec<AtomicU64>>,
    target_bias: Option<Vec<AtomicU64>>,
}

fn to_atomic(v: &[f64]) -> Vec<AtomicU64> {
    v.iter().map(|x| AtomicU64::new(x.to_bits())).collect()
}

fn from_atomic(v: &[AtomicU64]) -> Vec<f64> {
    v.iter().map(|x| f64::from_bits(x.load(Ordering::Relaxed))).collect()
}

fn load_into(src: &[AtomicU64], out: &mut [f64]) {
    for (o, a) in out.iter_mut().zip(src) {
        *o = f64::from_bits(a.load(Ordering::Relaxed));
    }
}

fn store_from(dst: &[AtomicU64], values: &[f64]) {
    for (a, v) in dst.iter().zip(values) {
        a.store(v.to_bits(), Ordering::Relaxed);
    }
}

impl SharedStore {
    fn new(store: &ParameterStore) -> Self {
        SharedStore {
            geometry: store.geometry,
            dim: store.dim,
            target: to_atomic(&store.target),
            context: to_atomic(&store.context),
            context_bias: store.context_bias.as_deref().map(to_atomic),
            target_bias: store.target_bias.as_deref().map(to_atomic),
        }
    }

    fn snapshot(&self) -> ParameterStore {
        ParameterStore {
            geometry: self.geometry,
            dim: self.dim,
            target: from_atomic(&self.target),
            context: from_atomic(&self.context),
            context_bias: self.context_bias.as_deref().map(from_atomic),
            target_bias: self.target_bias.as_deref().map(from_atomic),
        }
    }

    fn rows(v: &[AtomicU64], id: WordId, dim: usize) -> &[AtomicU64] {
        &v[id as usize * dim..(id as usize + 1) * dim]
    }

    fn write_back(&self, s: &Sample) {
        let dim = self.dim;
        store_from(Self::rows(&self.target, s.center_id, dim), &s.center);
        for (slot, &id) in s.ctx_ids.iter().enumerate() {
            store_from(Self::rows(&self.context, id, dim), &s.ctx[slot * dim..(slot + 1) * dim]);
        }
        if let Some(b) = &self.context_bias {
            for (slot, &id) in s.ctx_ids.iter().enumerate() {
                b[id as usize].store(s.ctx_bias[slot].to_bits(), Ordering::Relaxed);
            }
        }
        if let Some(b) = &self.target_bias {
            b[s.center_id as usize].store(s.center_bias.to_bits(), Ordering::Relaxed);
        }
    }
}

impl RowSource for SharedStore {
    fn read_target(&self, id: WordId, out: &mut [f64]) {
        load_into(Self::rows(&self.target, id, self.dim), out);
    }
    fn read_context(&self, id: WordId, out: &mut [f64]) {
        load_into(Self::rows(&self.context, id, self.dim), out);
    }
    fn context_bias(&self, id: WordId) -> f64 {
        self.context_bias
            .as_ref()
            .map_or(0.0, |b| f64::from_bits(b[id as usize].load(Ordering::Relaxed)))
    }
    fn target_bias(&self, id: WordId) -> f64 {
        self.target_bias
            .as_ref()
            .map_or(0.0, |b| f64::from_bits(b[id as usize].load(Ordering::Relaxed)))
    }
}

/// Periodic snapshot hook: called with the store after every `every`-th epoch.
pub struct Checkpointing<'a> {
    pub every: usize,
    pub sink: &'a mut dyn FnMut(&ParameterStore, &TrainStats) -> std::io::Result<()>,
}

#[derive(Default)]
struct WorkerTally {
    pairs: u64,
    loss_sum: f64,
    ema: Option<f64>,
    singular: u64,
    saturated: u64,
}

/// Holds everything derived from the corpus that stays fixed across epochs.
pub struct Trainer<'a> {
    config: &'a ModelConfig,
    vocab: &'a Vocabulary,
    encoded: Vec<EncodedPair>,
    table: NegativeTable,
    subsampler: Option<Subsampler>,
    pairs_per_epoch: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &[SentencePair], vocab: &'a Vocabulary, config: &'a ModelConfig) -> Result<Self> {
        config.validate()?;
        if vocab.len() < 2 {
            return Err(ModelError::Config("vocabulary needs at least two words".into()));
        }
        let encoded: Vec<EncodedPair> = corpus.iter().map(|p| EncodedPair::new(p, vocab)).collect();
        let pairs_per_epoch: f64 = encoded.iter().map(|e| e.expected_pairs(config.window, config.cross_window)).sum();
        if pairs_per_epoch == 0.0 {
            return Err(ModelError::EmptyStream);
        }
        Ok(Trainer {
            config,
            vocab,
            table: corpus::build_negative_table(vocab, config.smoothing_power)?,
            subsampler: config.subsample.map(|t| Subsampler::new(vocab, t)),
            encoded,
            pairs_per_epoch,
        })
    }

    /// Expected number of training pairs over the whole run.
    pub fn total_pairs(&self) -> f64 {
        self.pairs_per_epoch * self.config.epochs as f64
    }

    pub fn init(&self) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        init_parameters(self.vocab.len(), self.config, &mut rng)
    }

    fn epoch_rng(&self, epoch: usize, worker: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1 + ((epoch as u64) << 16) + worker as u64);
        rng
    }

    /// Runs the remaining epochs `stats.epoch..config.epochs` starting from
    /// `store`. Each epoch derives its random stream from (seed, epoch,
    /// worker), so a run resumed from a checkpoint matches an uninterrupted one.
    pub fn run(
        &self,
        store: ParameterStore,
        mut stats: TrainStats,
        mut checkpoint: Option<Checkpointing<'_>>,
    ) -> Result<(ParameterStore, TrainStats)> {
        if store.vocab_size() != self.vocab.len() || store.dim != self.config.dim {
            return Err(ModelError::Config("store does not match vocabulary or dimension".into()));
        }
        let shared = SharedStore::new(&store);
        drop(store);
        let counter = AtomicU64::new(stats.pairs_processed);
        let threads = self.config.threads.min(self.encoded.len()).max(1);

        for epoch in stats.epoch..self.config.epochs {
            let chunk = self.encoded.len().div_ceil(threads);
            let tallies: Vec<Result<WorkerTally>> = if threads == 1 {
                vec![self.run_worker(&shared, &self.encoded, epoch, 0, &counter)]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = self
                        .encoded
                        .chunks(chunk)
                        .enumerate()
                        .map(|(w, part)| {
                            let shared = &shared;
                            let counter = &counter;
                            scope.spawn(move || self.run_worker(shared, part, epoch, w, counter))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
                })
            };
            let mut pairs = 0u64;
            let mut loss_sum = 0.0;
            let mut ema_weighted = 0.0;
            for t in tallies {
                let t = t?;
                pairs += t.pairs;
                loss_sum += t.loss_sum;
                stats.skipped_singular += t.singular;
                stats.skipped_saturated += t.saturated;
                if let Some(ema) = t.ema {
                    ema_weighted += ema * t.pairs as f64;
                }
            }
            if pairs > 0 {
                // With several workers this is the pair-weighted mean of their EMAs.
                stats.mean_loss = ema_weighted / pairs as f64;
                stats.epoch_losses.push(loss_sum / pairs as f64);
            } else {
                stats.epoch_losses.push(f64::NAN);
            }
            stats.pairs_processed = counter.load(Ordering::Relaxed);
            stats.epoch = epoch + 1;
            if let Some(cp) = checkpoint.as_mut() {
                if cp.every > 0 && stats.epoch.is_multiple_of(cp.every) {
                    (cp.sink)(&shared.snapshot(), &stats).map_err(ModelError::Checkpoint)?;
                }
            }
        }
        Ok((shared.snapshot(), stats))
    }

    fn run_worker(
        &self,
        shared: &SharedStore,
        part: &[EncodedPair],
        epoch: usize,
        worker: usize,
        counter: &AtomicU64,
    ) -> Result<WorkerTally> {
        let config = self.config;
        let mut rng = self.epoch_rng(epoch, worker);
        let mut tally = WorkerTally::default();
        let mut pairs: Vec<TrainingPair> = Vec::new();
        let mut negatives = Vec::with_capacity(config.negatives_per_pair);
        let mut sample = Sample::new(config.dim);
        let total = self.total_pairs();
        for sentence in part {
            pairs.clear();
            sentence.generate(config.window, config.cross_window, self.subsampler.as_ref(), &mut rng, &mut pairs);
            for pair in &pairs {
                corpus::sample_negatives_into(
                    &self.table,
                    config.negatives_per_pair,
                    Some(pair.context),
                    &mut rng,
                    &mut negatives,
                )?;
                let t = counter.fetch_add(1, Ordering::Relaxed);
                let lr = learning_rate_at(t, total, config.learning_rate, config.lr_min);
                sample.gather(shared, pair.center, pair.context, &negatives);
                if config.geometry == Geometry::Poincare {
                    sample.sanitize(config.ball_epsilon)?;
                }
                match sample.compute(config, true) {
                    Ok(()) => {}
                    Err(ModelError::Skipped(GeometryError::Saturated { .. })) => {
                        tally.saturated += 1;
                        continue;
                    }
                    Err(ModelError::Skipped(_)) => {
                        tally.singular += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
                sample.step(lr, config).map_err(|e| match e {
                    ModelError::NonFiniteStep => ModelError::NonFiniteUpdate {
                        center: self.vocab.word(pair.center).to_string(),
                        context: self.vocab.word(pair.context).to_string(),
                    },
                    e => e,
                })?;
                shared.write_back(&sample);
                tally.pairs += 1;
                tally.loss_sum += sample.loss;
                tally.ema = Some(match tally.ema {
                    None => sample.loss,
                    Some(m) => m + LOSS_EMA_WEIGHT * (sample.loss - m),
                });
            }
        }
        Ok(tally)
    }
}

/// Trains from a fresh initialization for `config.epochs` epochs.
pub fn train(corpus: &[SentencePair], vocab: &Vocabulary, config: &ModelConfig) -> Result<(ParameterStore, TrainStats)> {
    let trainer = Trainer::new(corpus, vocab, config)?;
    trainer.run(trainer.init(), TrainStats::default(), None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(geometry: Geometry) -> ModelConfig {
        ModelConfig {
            dim: 2,
            ..ModelConfig::new(geometry)
        }
    }

    #[test]
    fn score_examples() {
        let c = cfg(Geometry::Euclidean);
        assert_eq!(score_pair(&[1.0, 0.0], &[1.0, 0.0], 0.0, &c).unwrap(), 1.0);
        let c = cfg(Geometry::Poincare);
        assert_eq!(score_pair(&[0.2, 0.1], &[0.2, 0.1], 0.0, &c).unwrap(), -1.0);
        // y on the x axis at distance 1 from the origin: tanh(1/2)
        let y = [0.5f64.tanh(), 0.0];
        let c = ModelConfig { use_bias: true, ..c };
        let s = score_pair(&[0.0, 0.0], &y, 0.5, &c).unwrap();
        assert!((s - (-1.881_097_845_541_815_7)).abs() < 1e-12, "{s}");
    }

    #[test]
    fn bias_ignored_when_disabled() {
        let c = cfg(Geometry::Euclidean);
        assert_eq!(score_pair(&[1.0, 0.0], &[1.0, 0.0], 3.0, &c).unwrap(), 1.0);
    }

    #[test]
    fn loss_with_zero_scores_is_two_ln_two() {
        let c = cfg(Geometry::Euclidean);
        let mut s = ParameterStore::zeros(Geometry::Euclidean, 3, 2, false, false);
        s.target_row_mut(0).copy_from_slice(&[1.0, 0.0]);
        s.context_row_mut(1).copy_from_slice(&[0.0, 1.0]);
        s.context_row_mut(2).copy_from_slice(&[0.0, -1.0]);
        let l = sgns_loss(0, 1, &[2], &s, &c).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_vanishes_at_extreme_scores() {
        let c = ModelConfig {
            use_bias: true,
            ..cfg(Geometry::Euclidean)
        };
        let mut s = ParameterStore::zeros(Geometry::Euclidean, 3, 2, true, false);
        s.context_bias.as_mut().unwrap()[1] = 30.0;
        s.context_bias.as_mut().unwrap()[2] = -30.0;
        assert!(sgns_loss(0, 1, &[2], &s, &c).unwrap() < 1e-6);
    }

    #[test]
    fn positive_bias_gradient_is_sigma_minus_one() {
        let c = ModelConfig {
            use_bias: true,
            ..cfg(Geometry::Euclidean)
        };
        let mut s = ParameterStore::zeros(Geometry::Euclidean, 3, 2, true, false);
        s.target_row_mut(0).copy_from_slice(&[0.3, -0.2]);
        s.context_row_mut(1).copy_from_slice(&[0.5, 0.4]);
        s.context_bias.as_mut().unwrap()[1] = 0.1;
        let g = sgns_gradients(0, 1, &[2], &s, &c).unwrap();
        let score: f64 = 0.3 * 0.5 - 0.2 * 0.4 + 0.1;
        let expect = 1.0 / (1.0 + (-score).exp()) - 1.0;
        assert_eq!(g.context_bias[0].0, 1);
        assert!((g.context_bias[0].1 - expect).abs() < 1e-15);
    }

    #[test]
    fn gradients_touch_only_sample_rows() {
        let c = cfg(Geometry::Poincare);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = init_parameters(10, &ModelConfig { init_radius: 0.5, ..c.clone() }, &mut rng);
        let g = sgns_gradients(3, 4, &[7, 7, 1], &s, &c).unwrap();
        assert_eq!(g.center.0, 3);
        let ids: Vec<_> = g.contexts.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, vec![4, 7, 1]);
    }

    #[test]
    fn coincident_poincare_rows_are_skipped() {
        let c = cfg(Geometry::Poincare);
        let mut s = ParameterStore::zeros(Geometry::Poincare, 3, 2, false, false);
        s.target_row_mut(0).copy_from_slice(&[0.1, 0.1]);
        s.context_row_mut(1).copy_from_slice(&[0.1, 0.1]);
        s.context_row_mut(2).copy_from_slice(&[-0.4, 0.1]);
        assert!(matches!(
            sgns_gradients(0, 1, &[2], &s, &c),
            Err(ModelError::Skipped(GeometryError::Singular { .. }))
        ));
    }

    #[test]
    fn sgd_examples() {
        let mut row = [1.0, 0.0];
        sgd_step(&mut row, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(row, [1.0, 0.0]);
        sgd_step(&mut row, &[1.0, 0.0], 0.1).unwrap();
        assert!((row[0] - 0.9).abs() < 1e-15);
        assert!(matches!(sgd_step(&mut row, &[f64::INFINITY, 0.0], 0.1), Err(ModelError::NonFiniteStep)));
        assert!((row[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_is_linear_for_fixed_gradients() {
        let (g1, g2) = ([0.3, -0.1], [0.2, 0.5]);
        let mut a = [0.4, 0.7];
        sgd_step(&mut a, &g1, 0.1).unwrap();
        sgd_step(&mut a, &g2, 0.1).unwrap();
        let mut b = [0.4, 0.7];
        sgd_step(&mut b, &[g1[0] + g2[0], g1[1] + g2[1]], 0.1).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
    }

    #[test]
    fn rsgd_examples() {
        let c = cfg(Geometry::Poincare);
        let mut row = [0.3, -0.2];
        rsgd_step(&mut row, &[0.0, 0.0], 0.05, &c).unwrap();
        assert_eq!(row, [0.3, -0.2]);

        // At the origin: exp_0(−η·g/4) = −tanh(η·||g||/4)·ĝ.
        let g = [3.0, 4.0];
        let lr = 0.2;
        let mut row = [0.0, 0.0];
        rsgd_step(&mut row, &g, lr, &c).unwrap();
        let r = (lr * 5.0 / 4.0f64).tanh();
        assert!((row[0] + r * 0.6).abs() < 1e-15);
        assert!((row[1] + r * 0.8).abs() < 1e-15);
    }

    #[test]
    fn first_order_retraction_projects() {
        let c = ModelConfig {
            retraction: Retraction::FirstOrder,
            ..cfg(Geometry::Poincare)
        };
        let mut row = [0.9, 0.0];
        rsgd_step(&mut row, &[-1e9, 0.0], 1.0, &c).unwrap();
        assert!(geometry::norm(&row) <= 1.0 - c.ball_epsilon);
    }

    #[test]
    fn learning_rate_decays_linearly_to_floor() {
        assert_eq!(learning_rate_at(0, 100.0, 0.05, 1e-4), 0.05);
        assert!((learning_rate_at(50, 100.0, 0.05, 1e-4) - 0.025).abs() < 1e-15);
        assert_eq!(learning_rate_at(100, 100.0, 0.05, 1e-4), 1e-4);
        assert_eq!(learning_rate_at(500, 100.0, 0.05, 1e-4), 1e-4);
    }

    #[test]
    fn init_examples() {
        let c = ModelConfig {
            dim: 10,
            ..ModelConfig::new(Geometry::Poincare)
        };
        let s = init_parameters(50, &c, &mut ChaCha8Rng::seed_from_u64(4));
        for row in s.target.chunks(10).chain(s.context.chunks(10)) {
            assert!(geometry::norm(row) <= 1e-3);
        }
        assert_eq!(s, init_parameters(50, &c, &mut ChaCha8Rng::seed_from_u64(4)));

        let c = ModelConfig {
            dim: 10,
            use_bias: true,
            ..ModelConfig::new(Geometry::Euclidean)
        };
        let s = init_parameters(50, &c, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(s.context.iter().all(|&x| x == 0.0));
        assert!(s.context_bias.as_ref().unwrap().iter().all(|&x| x == 0.0));
        assert!(s.target.iter().all(|x| x.abs() <= 0.05));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(Geometry::Poincare).validate().is_ok());
        let bad = ModelConfig {
            lr_min: 1.0,
            ..ModelConfig::new(Geometry::Poincare)
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            dim: 1,
            ..ModelConfig::new(Geometry::Poincare)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parse_enums() {
        assert_eq!("poincare".parse::<Geometry>().unwrap(), Geometry::Poincare);
        assert_eq!("first-order".parse::<Retraction>().unwrap(), Retraction::FirstOrder);
        assert!("hyperboloid".parse::<Geometry>().is_err());
        assert_eq!(Retraction::ExpMap.to_string(), "exp");
    }
}
