//! Next-token distributions, sampling and perplexity.

mod hash;
mod ngram;
mod remote;

pub use hash::HashLm;
pub use ngram::{train_ngram, NGramLm};
pub use remote::{serve_connection, spawn_tcp_server, RemoteLm};

use crate::tokenizer::{TokenId, Tokenizer, TokenizerError};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("remote model error: {0}")]
    Remote(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("history id {id} at position {position} outside vocabulary of {vocab}")]
    BadHistory {
        position: usize,
        id: TokenId,
        vocab: usize,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("nothing to score")]
    NothingToScore,
    #[error("model file: {0}")]
    File(String),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// A probability vector over the vocabulary plus the logits it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmDistribution {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub step_index: usize,
}

impl LmDistribution {
    pub fn from_logits(logits: Vec<f64>, step_index: usize) -> Result<Self, LmError> {
        if logits.is_empty() {
            return Err(LmError::InvalidDistribution("empty logits".into()));
        }
        if logits.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(LmError::InvalidDistribution("NaN or +inf logit".into()));
        }
        let probs = softmax(&logits);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(LmError::InvalidDistribution("all logits are -inf".into()));
        }
        Ok(LmDistribution { logits, probs, step_index })
    }

    /// Normalizes `probs`; logits become natural logs (`-inf` for zeros).
    pub fn from_probs(mut probs: Vec<f64>, step_index: usize) -> Result<Self, LmError> {
        if probs.is_empty() {
            return Err(LmError::InvalidDistribution("empty probs".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(LmError::InvalidDistribution("negative or non-finite probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(LmError::InvalidDistribution("zero total mass".into()));
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        let logits = probs.iter().map(|p| p.ln()).collect();
        Ok(LmDistribution { logits, probs, step_index })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        if temperature == 1.0 {
            return self.clone();
        }
        let scaled: Vec<f64> = self.logits.iter().map(|l| l / temperature).collect();
        let probs = softmax(&scaled);
        LmDistribution {
            logits: self.logits.clone(),
            probs,
            step_index: self.step_index,
        }
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.log2())
            .sum()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn next_distribution(&self, history: &[TokenId]) -> Result<LmDistribution, LmError>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_distribution(&self, history: &[TokenId]) -> Result<LmDistribution, LmError> {
        (**self).next_distribution(history)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_distribution(&self, history: &[TokenId]) -> Result<LmDistribution, LmError> {
        (**self).next_distribution(history)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_distribution(&self, history: &[TokenId]) -> Result<LmDistribution, LmError> {
        (**self).next_distribution(history)
    }
}

pub(crate) fn check_history(history: &[TokenId], vocab: usize) -> Result<(), LmError> {
    match history.iter().position(|&id| id as usize >= vocab) {
        Some(position) => Err(LmError::BadHistory {
            position,
            id: history[position],
            vocab,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub top_k: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            top_k: 64,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn with_top_k(top_k: usize) -> Self {
        SamplingConfig {
            top_k,
            ..Self::default()
        }
    }
}

/// Renormalized candidates, ordered by (probability desc, id asc).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub entries: Vec<(TokenId, f64)>,
    /// Mass these entries held in the distribution they were cut from.
    pub parent_mass: f64,
}

impl CandidatePool {
    /// Builds a pool from unnormalized weights, sorting and renormalizing.
    pub fn from_weights(mut entries: Vec<(TokenId, f64)>) -> Self {
        entries.retain(|e| e.1 > 0.0);
        let total: f64 = entries.iter().map(|e| e.1).sum();
        entries.iter_mut().for_each(|e| e.1 /= total);
        sort_pool(&mut entries);
        CandidatePool {
            entries,
            parent_mass: total,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.entries.iter().any(|e| e.0 == id)
    }

    pub fn prob(&self, id: TokenId) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == id).map(|e| e.1)
    }

    /// Keeps entries passing `keep` and renormalizes.
    pub fn restrict(&self, mut keep: impl FnMut(TokenId) -> bool) -> CandidatePool {
        let kept: Vec<(TokenId, f64)> = self.entries.iter().copied().filter(|e| keep(e.0)).collect();
        let mass: f64 = kept.iter().map(|e| e.1).sum();
        CandidatePool {
            entries: kept.into_iter().map(|(id, p)| (id, p / mass)).collect(),
            parent_mass: self.parent_mass * mass,
        }
    }
}

pub(crate) fn sort_pool(entries: &mut [(TokenId, f64)]) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Ids ordered by (probability desc, id asc).
pub fn ranked_ids(probs: &[f64]) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..probs.len() as TokenId).collect();
    ids.sort_by(|&a, &b| probs[b as usize].total_cmp(&probs[a as usize]).then(a.cmp(&b)));
    ids
}

pub fn top_k_pool(dist: &LmDistribution, cfg: &SamplingConfig) -> CandidatePool {
    let probs = if cfg.temperature == 1.0 {
        std::borrow::Cow::Borrowed(&dist.probs)
    } else {
        std::borrow::Cow::Owned(dist.with_temperature(cfg.temperature).probs)
    };
    let k = cfg.top_k.clamp(1, probs.len());
    let mut entries: Vec<(TokenId, f64)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as TokenId, p))
        .collect();
    let cmp = |a: &(TokenId, f64), b: &(TokenId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < entries.len() {
        entries.select_nth_unstable_by(k - 1, cmp);
        entries.truncate(k);
    }
    entries.sort_by(cmp);
    let mass: f64 = entries.iter().map(|e| e.1).sum();
    entries.iter_mut().for_each(|e| e.1 /= mass);
    CandidatePool {
        entries,
        parent_mass: mass,
    }
}

/// Uniform double in `[0, 1)` with 53 random bits.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF draw over id-ascending cumulative order.
pub fn multinomial_sample(probs: &[f64], rng: &mut impl RngCore) -> TokenId {
    let u = unit_f64(rng);
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i as TokenId;
            }
        }
    }
    last as TokenId
}

/// Draw from a pool, walking entries in pool order.
pub fn sample_pool(pool: &CandidatePool, rng: &mut impl RngCore) -> TokenId {
    let u = unit_f64(rng);
    let mut acc = 0.0;
    for &(id, p) in &pool.entries {
        acc += p;
        if u < acc {
            return id;
        }
    }
    pool.entries.last().expect("non-empty pool").0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub value: f64,
    pub tokens: usize,
    /// First scored position given probability zero, if any.
    pub zero_at: Option<usize>,
}

/// `exp(-(1/N) Σ ln P(s_i | s_<i))` over `ids`, conditioned on `context`.
pub fn perplexity_of_ids(
    model: &dyn LanguageModel,
    context: &[TokenId],
    ids: &[TokenId],
) -> Result<Perplexity, LmError> {
    if ids.is_empty() {
        return Err(LmError::NothingToScore);
    }
    let mut hist = context.to_vec();
    let mut nll = 0.0;
    for (i, &id) in ids.iter().enumerate() {
        let d = model.next_distribution(&hist)?;
        let p = d.probs.get(id as usize).copied().unwrap_or(0.0);
        if p <= 0.0 {
            return Ok(Perplexity {
                value: f64::INFINITY,
                tokens: ids.len(),
                zero_at: Some(i),
            });
        }
        nll -= p.ln();
        hist.push(id);
    }
    Ok(Perplexity {
        value: (nll / ids.len() as f64).exp(),
        tokens: ids.len(),
        zero_at: None,
    })
}

/// Perplexity of `text` as the receiver would see it: the concatenation of
/// prompt and text is retokenized and the prompt's tokens condition the rest.
pub fn perplexity(
    model: &dyn LanguageModel,
    tk: &Tokenizer,
    text: &str,
    prompt: Option<&str>,
) -> Result<Perplexity, LmError> {
    let prompt = prompt.unwrap_or("");
    let full = tk.encode_ids(&format!("{prompt}{text}"))?;
    let p = tk.encode_ids(prompt)?;
    let shared = full.iter().zip(&p).take_while(|(a, b)| a == b).count();
    perplexity_of_ids(model, &full[..shared], &full[shared..])
}
