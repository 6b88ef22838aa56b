//! Position-conditioned training with a tabular predictor.
//!
//! The objective is a sum of per-context cross-entropies, so its minimizer
//! over unconstrained tables is the empirical conditional of each context.
//! Training therefore counts: for every corrupted position `j` of a drawn
//! `(x_0, t, x_t)`, the context `(t, j, x_0^{<j} ⊕ x_t^{≥j})` gains one
//! observation of `x_0^j`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::decode::TargetModel;
use crate::error::{Error, Result};
use crate::forward::{sample_forward, KernelSchedule};
use crate::oracle::{DataLaw, HybridContext};
use crate::types::{Categorical, SeededRng, Token, Vocabulary};

pub const PREDICTOR_FORMAT: &str = "dlmlab-predictor/1";

/// Distribution of the training timestep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeSampler {
    Fixed { t: usize },
    /// Uniform over `1..=T`.
    #[default]
    Uniform,
}

impl TimeSampler {
    pub fn sample(&self, steps: usize, rng: &mut SeededRng) -> usize {
        match *self {
            TimeSampler::Fixed { t } => t,
            TimeSampler::Uniform => 1 + rng.below(steps),
        }
    }

    /// `(t, probability)` pairs.
    pub fn support(&self, steps: usize) -> Vec<(usize, f64)> {
        match *self {
            TimeSampler::Fixed { t } => vec![(t, 1.0)],
            TimeSampler::Uniform => (1..=steps).map(|t| (t, 1.0 / steps as f64)).collect(),
        }
    }

    pub fn validate(&self, sched: &KernelSchedule) -> Result<()> {
        match *self {
            TimeSampler::Fixed { t } => sched
                .check_time(t)
                .map_err(|e| Error::invariant("train.t_sampler.t", e.to_string())),
            TimeSampler::Uniform => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_samples: usize,
    #[serde(default)]
    pub t_sampler: TimeSampler,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_smoothing() -> f64 {
    0.5
}

impl TrainConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        TrainConfig {
            n_samples,
            t_sampler: TimeSampler::Uniform,
            smoothing: default_smoothing(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invariant("train.n_samples", "must be at least 1"));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::invariant("train.smoothing", "must be a finite value ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextKey {
    pub t: usize,
    pub pivot: usize,
    /// Clean prefix followed by the corrupted suffix.
    pub tokens: Vec<Token>,
}

impl ContextKey {
    pub fn of(ctx: &HybridContext) -> Self {
        let mut tokens = Vec::with_capacity(ctx.dim());
        tokens.extend_from_slice(&ctx.clean_prefix);
        tokens.extend_from_slice(&ctx.corrupted_suffix);
        ContextKey {
            t: ctx.t,
            pivot: ctx.pivot(),
            tokens,
        }
    }

    pub fn context(&self) -> HybridContext {
        HybridContext::split(&self.tokens, self.pivot, self.t)
    }
}

/// Count table over position-conditioned contexts with additive smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPredictor {
    vocab: Vocabulary,
    dim: usize,
    smoothing: f64,
    counts: HashMap<ContextKey, Vec<u64>>,
}

impl LearnedPredictor {
    pub fn empty(vocab: Vocabulary, dim: usize, smoothing: f64) -> Self {
        LearnedPredictor {
            vocab,
            dim,
            smoothing,
            counts: HashMap::new(),
        }
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn with_smoothing(mut self, smoothing: f64) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn observe(&mut self, key: ContextKey, token: Token) {
        let s = self.vocab.size();
        self.counts.entry(key).or_insert_with(|| vec![0; s])[token] += 1;
    }

    /// Adds another predictor's counts.
    pub fn merge(&mut self, other: &LearnedPredictor) {
        for (k, v) in &other.counts {
            let slot = self
                .counts
                .entry(k.clone())
                .or_insert_with(|| vec![0; v.len()]);
            slot.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
    }

    pub fn counts(&self, key: &ContextKey) -> Option<&[u64]> {
        self.counts.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Seen contexts in key order.
    pub fn contexts(&self) -> Vec<(&ContextKey, &[u64])> {
        let mut v: Vec<_> = self.counts.iter().map(|(k, c)| (k, c.as_slice())).collect();
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    /// `(counts + λ)` normalized.
    pub fn predict(&self, ctx: &HybridContext) -> Result<Categorical> {
        ctx.validate(self.vocab, self.dim)?;
        let key = ContextKey::of(ctx);
        let lambda = self.smoothing;
        let weights: Vec<f64> = match self.counts.get(&key) {
            Some(c) => c.iter().map(|&n| n as f64 + lambda).collect(),
            None => vec![lambda; self.vocab.size()],
        };
        Categorical::normalize(&weights).map_err(|_| Error::UnseenContext)
    }

    pub fn to_json(&self) -> String {
        let file = PredictorFile {
            format: PREDICTOR_FORMAT.to_string(),
            vocab_size: self.vocab.size(),
            dim: self.dim,
            smoothing: self.smoothing,
            entries: self
                .contexts()
                .into_iter()
                .map(|(k, c)| PredictorEntry {
                    t: k.t,
                    pivot: k.pivot,
                    tokens: k.tokens.clone(),
                    counts: c.to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("predictor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PredictorFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if file.format != PREDICTOR_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported predictor format `{}`",
                file.format
            )));
        }
        let vocab = Vocabulary::new(file.vocab_size)?;
        let mut model = LearnedPredictor::empty(vocab, file.dim, file.smoothing);
        for (n, e) in file.entries.into_iter().enumerate() {
            if e.counts.len() != vocab.size() || e.tokens.len() != file.dim || e.pivot >= file.dim {
                return Err(Error::Schema(format!("entry {n} does not match the predictor shape")));
            }
            let key = ContextKey {
                t: e.t,
                pivot: e.pivot,
                tokens: e.tokens,
            };
            key.context().validate(vocab, file.dim)?;
            model.counts.insert(key, e.counts);
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictorFile {
    format: String,
    vocab_size: usize,
    dim: usize,
    smoothing: f64,
    entries: Vec<PredictorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictorEntry {
    t: usize,
    pivot: usize,
    tokens: Vec<Token>,
    counts: Vec<u64>,
}

impl TargetModel for LearnedPredictor {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn target(&self, ctx: &HybridContext) -> Result<Categorical> {
        self.predict(ctx)
    }
}

/// Positions whose corrupted value differs from the clean one.
pub fn corrupted_positions(x0: &[Token], xt: &[Token]) -> Vec<usize> {
    x0.iter()
        .zip(xt)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i)
        .collect()
}

/// Draws `n_samples` training triples and counts every position-conditioned
/// target they contain.
pub fn train_position_conditioned(
    law: &DataLaw,
    sched: &KernelSchedule,
    cfg: &TrainConfig,
) -> Result<LearnedPredictor> {
    cfg.validate()?;
    cfg.t_sampler.validate(sched)?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut model = LearnedPredictor::empty(law.vocab(), law.dim(), cfg.smoothing);
    for _ in 0..cfg.n_samples {
        let x0 = law.sample(&mut rng);
        let t = cfg.t_sampler.sample(sched.steps(), &mut rng);
        let xt = sample_forward(&x0, t, sched, &mut rng)?;
        for j in corrupted_positions(&x0, &xt) {
            let mut tokens = x0[..j].to_vec();
            tokens.extend_from_slice(&xt[j..]);
            model.observe(ContextKey { t, pivot: j, tokens }, x0[j]);
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEstimate {
    /// Mean over draws of the summed negative log-likelihood.
    pub per_sequence: f64,
    /// Mean over predicted tokens.
    pub per_token: f64,
    pub sequences: usize,
    pub tokens: usize,
}

/// Monte Carlo estimate of the position-conditioned cross-entropy of `model`.
pub fn loss_eval(
    model: &dyn TargetModel,
    law: &DataLaw,
    sched: &KernelSchedule,
    t_sampler: TimeSampler,
    n_eval: usize,
    rng: &mut SeededRng,
) -> Result<LossEstimate> {
    if n_eval == 0 {
        return Err(Error::EmptySampleSet);
    }
    t_sampler.validate(sched)?;
    let mut total = 0.0;
    let mut tokens = 0;
    for _ in 0..n_eval {
        let x0 = law.sample(rng);
        let t = t_sampler.sample(sched.steps(), rng);
        let xt = sample_forward(&x0, t, sched, rng)?;
        for j in corrupted_positions(&x0, &xt) {
            let mut state = x0[..j].to_vec();
            state.extend_from_slice(&xt[j..]);
            let p = model.target(&HybridContext::split(&state, j, t))?;
            total -= p.prob(x0[j]).ln();
            tokens += 1;
        }
    }
    Ok(LossEstimate {
        per_sequence: total / n_eval as f64,
        per_token: if tokens > 0 { total / tokens as f64 } else { 0.0 },
        sequences: n_eval,
        tokens,
    })
}
