//! Steganographic embedding and extraction over a shared model and
//! tokenizer.
//!
//! Each step builds the top-k pool, applies the configured filter and lets
//! the codec pick a token from the filtered pool. The receiver re-derives
//! the same pools from the text it sees; any mismatch between the token it
//! reads and the pool it rebuilds is reported as desynchronization.

pub mod arithmetic;
mod filter;
pub mod huffman;
mod message;

pub use filter::{filter_basic, filter_mwis, filter_stepwise, pool_kld, Filtered};
pub use message::SecretMessage;

use crate::consistency::ConsistencyTracker;
use crate::lm::{top_k_pool, CandidatePool, LanguageModel, LmError, SamplingConfig};
use crate::tokenizer::{TokenId, Tokenizer, TokenizerError};
use arithmetic::{check_precision, quantize, ArithmeticDecoder, ArithmeticEncoder};
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

pub const LENGTH_PREFIX_BITS: usize = 16;

#[derive(Debug, Error)]
pub enum StegoError {
    #[error("no consistent continuation at step {step}")]
    NoConsistentContinuation { step: usize },
    #[error("token budget of {budget} exhausted after embedding {committed} of {needed} bits")]
    Budget {
        budget: usize,
        committed: usize,
        needed: usize,
    },
    #[error("desynchronization at step {step}: observed token {token} is not in the rebuilt pool")]
    Desync { step: usize, token: TokenId },
    #[error("stegotext ended after {recovered} of {needed} bits")]
    Truncated { recovered: usize, needed: usize },
    #[error("modified pool contains id {id} outside the original support")]
    SupportViolation { id: TokenId },
    #[error("prompt does not survive decode/encode")]
    InconsistentPrompt,
    #[error("out-of-band length mode needs a length hint")]
    MissingLength,
    #[error("message of {0} bits does not fit the 16-bit length prefix")]
    MessageTooLong(usize),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    #[serde(alias = "arith")]
    Arithmetic,
    Huffman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    None,
    Stepwise,
    Basic,
    Mwis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthMode {
    OutOfBand,
    LengthPrefixed,
}

macro_rules! parse_enum {
    ($t:ty { $($s:literal => $v:expr),* $(,)? }) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)*
                    other => Err(format!("unknown value {other:?}")),
                }
            }
        }
    };
}

parse_enum!(Codec { "arith" => Codec::Arithmetic, "arithmetic" => Codec::Arithmetic, "huffman" => Codec::Huffman });
parse_enum!(FilterKind {
    "none" => FilterKind::None,
    "stepwise" => FilterKind::Stepwise,
    "basic" => FilterKind::Basic,
    "mwis" => FilterKind::Mwis,
});
parse_enum!(LengthMode { "out-of-band" => LengthMode::OutOfBand, "length-prefixed" => LengthMode::LengthPrefixed });

impl Codec {
    pub fn name(self) -> &'static str {
        match self {
            Codec::Arithmetic => "arith",
            Codec::Huffman => "huffman",
        }
    }
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::None => "none",
            FilterKind::Stepwise => "stepwise",
            FilterKind::Basic => "basic",
            FilterKind::Mwis => "mwis",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StegoConfig {
    pub codec: Codec,
    pub filter: FilterKind,
    pub sampling: SamplingConfig,
    pub length_mode: LengthMode,
    /// Arithmetic-coder register width in bits.
    pub precision: u32,
    pub max_tokens: usize,
}

impl Default for StegoConfig {
    fn default() -> Self {
        StegoConfig {
            codec: Codec::Arithmetic,
            filter: FilterKind::Stepwise,
            sampling: SamplingConfig::default(),
            length_mode: LengthMode::OutOfBand,
            precision: 32,
            max_tokens: 4096,
        }
    }
}

impl StegoConfig {
    pub fn new(codec: Codec, filter: FilterKind, top_k: usize) -> Self {
        StegoConfig {
            codec,
            filter,
            sampling: SamplingConfig::with_top_k(top_k),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), StegoError> {
        check_precision(self.precision)?;
        if self.sampling.top_k == 0 {
            return Err(StegoError::Config("top_k must be at least 1".into()));
        }
        if self.sampling.temperature.is_nan() || self.sampling.temperature <= 0.0 {
            return Err(StegoError::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResult {
    pub stegotext: String,
    pub tokens: Vec<TokenId>,
    pub token_count: usize,
    pub message_bits: usize,
    pub bpt: f64,
    /// Per-step `D(filtered ‖ original)` in bits.
    pub kld_trace: Vec<f64>,
    pub fallback_steps: usize,
    pub runtime_secs: f64,
}

impl EmbedResult {
    pub fn mean_kld(&self) -> f64 {
        if self.kld_trace.is_empty() {
            0.0
        } else {
            self.kld_trace.iter().sum::<f64>() / self.kld_trace.len() as f64
        }
    }
}

pub(crate) struct StepPools {
    pub filtered: CandidatePool,
    pub fallback: bool,
    pub kld: f64,
}

pub(crate) fn step_pools(
    lm: &dyn LanguageModel,
    tk: &Tokenizer,
    tracker: &ConsistencyTracker<'_>,
    cfg: &StegoConfig,
) -> Result<StepPools, StegoError> {
    let dist = lm.next_distribution(tracker.ids())?;
    let original = top_k_pool(&dist, &cfg.sampling);
    let (filtered, fallback) = match cfg.filter {
        FilterKind::None => (original.clone(), false),
        FilterKind::Stepwise => {
            let f = filter_stepwise(tracker, &original, &dist)?;
            (f.pool, f.fallback)
        }
        FilterKind::Basic => (filter_basic(tk, &original), false),
        FilterKind::Mwis => (filter_mwis(tk, &original), false),
    };
    let kld = if fallback {
        // the substitute lies outside the pool; measure against the full model
        -dist.probs[filtered.entries[0].0 as usize].log2()
    } else {
        pool_kld(&original, &filtered)?
    };
    Ok(StepPools { filtered, fallback, kld })
}

fn payload(message: &SecretMessage, mode: LengthMode) -> Result<Vec<bool>, StegoError> {
    match mode {
        LengthMode::OutOfBand => Ok(message.bits.clone()),
        LengthMode::LengthPrefixed => {
            let l = message.len();
            if l >= 1 << LENGTH_PREFIX_BITS {
                return Err(StegoError::MessageTooLong(l));
            }
            let mut bits: Vec<bool> = (0..LENGTH_PREFIX_BITS).rev().map(|i| (l >> i) & 1 == 1).collect();
            bits.extend_from_slice(&message.bits);
            Ok(bits)
        }
    }
}

enum Sender<'a> {
    Arith { dec: ArithmeticDecoder<'a>, precision: u32 },
    Huff { bits: &'a [bool], pos: usize },
}

impl Sender<'_> {
    fn committed(&self) -> usize {
        match self {
            Sender::Arith { dec, .. } => dec.committed(),
            Sender::Huff { pos, .. } => *pos,
        }
    }

    fn choose(&mut self, pool: &CandidatePool) -> Result<usize, StegoError> {
        let probs: Vec<f64> = pool.entries.iter().map(|e| e.1).collect();
        match self {
            Sender::Arith { dec, precision } => Ok(dec.decode(&quantize(&probs, *precision)?)),
            Sender::Huff { bits, pos } => {
                let codes = huffman::canonical_codes(&probs);
                let (i, len) = huffman::match_prefix(&codes, bits, *pos);
                *pos += len;
                Ok(i)
            }
        }
    }
}

enum Receiver {
    Arith { enc: ArithmeticEncoder, precision: u32 },
    Huff { out: Vec<bool> },
}

impl Receiver {
    fn new(codec: Codec, precision: u32) -> Self {
        match codec {
            Codec::Arithmetic => Receiver::Arith { enc: ArithmeticEncoder::new(precision), precision },
            Codec::Huffman => Receiver::Huff { out: Vec::new() },
        }
    }

    fn absorb(&mut self, pool: &CandidatePool, index: usize) -> Result<(), StegoError> {
        let probs: Vec<f64> = pool.entries.iter().map(|e| e.1).collect();
        match self {
            Receiver::Arith { enc, precision } => enc.encode(&quantize(&probs, *precision)?, index),
            Receiver::Huff { out } => out.extend_from_slice(&huffman::canonical_codes(&probs)[index]),
        }
        Ok(())
    }

    fn bits(&self) -> &[bool] {
        match self {
            Receiver::Arith { enc, .. } => enc.bits(),
            Receiver::Huff { out } => out,
        }
    }
}

pub fn embed(
    lm: &dyn LanguageModel,
    tk: &Tokenizer,
    prompt: &[TokenId],
    message: &SecretMessage,
    cfg: &StegoConfig,
) -> Result<EmbedResult, StegoError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut tracker = ConsistencyTracker::with_history(tk, prompt);
    if !tracker.is_consistent() {
        return Err(StegoError::InconsistentPrompt);
    }
    let bits = payload(message, cfg.length_mode)?;
    let mut sender = match cfg.codec {
        Codec::Arithmetic => Sender::Arith {
            dec: ArithmeticDecoder::new(&bits, cfg.precision),
            precision: cfg.precision,
        },
        Codec::Huffman => Sender::Huff { bits: &bits, pos: 0 },
    };
    let mut tokens = Vec::new();
    let mut kld_trace = Vec::new();
    let mut fallback_steps = 0;
    while sender.committed() < bits.len() {
        if tokens.len() >= cfg.max_tokens {
            return Err(StegoError::Budget {
                budget: cfg.max_tokens,
                committed: sender.committed(),
                needed: bits.len(),
            });
        }
        let step = step_pools(lm, tk, &tracker, cfg)?;
        let i = sender.choose(&step.filtered)?;
        let token = step.filtered.entries[i].0;
        tracker.push(token);
        tokens.push(token);
        kld_trace.push(step.kld);
        fallback_steps += usize::from(step.fallback);
    }
    let stegotext = tk.decode(&tokens)?;
    let token_count = tokens.len();
    Ok(EmbedResult {
        stegotext,
        tokens,
        token_count,
        message_bits: message.len(),
        bpt: if token_count == 0 { 0.0 } else { message.len() as f64 / token_count as f64 },
        kld_trace,
        fallback_steps,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn extract(
    lm: &dyn LanguageModel,
    tk: &Tokenizer,
    prompt: &[TokenId],
    stegotext: &str,
    cfg: &StegoConfig,
    length_hint: Option<usize>,
) -> Result<SecretMessage, StegoError> {
    cfg.validate()?;
    let mut needed = match cfg.length_mode {
        LengthMode::OutOfBand => length_hint.ok_or(StegoError::MissingLength)?,
        LengthMode::LengthPrefixed => LENGTH_PREFIX_BITS,
    };
    let mut know_length = cfg.length_mode == LengthMode::OutOfBand;
    let mut tracker = ConsistencyTracker::with_history(tk, prompt);
    let mut receiver = Receiver::new(cfg.codec, cfg.precision);

    let update = |receiver: &Receiver, needed: &mut usize, know: &mut bool| -> bool {
        let got = receiver.bits();
        if !*know && got.len() >= LENGTH_PREFIX_BITS {
            let l = got[..LENGTH_PREFIX_BITS].iter().fold(0usize, |a, &b| (a << 1) | usize::from(b));
            *needed = LENGTH_PREFIX_BITS + l;
            *know = true;
        }
        *know && got.len() >= *needed
    };
    let mut done = update(&receiver, &mut needed, &mut know_length);

    match cfg.filter {
        FilterKind::None | FilterKind::Stepwise => {
            let prompt_text = tk.decode(prompt)?;
            let full = tk.encode_ids(&format!("{prompt_text}{stegotext}"))?;
            if !full.starts_with(prompt) {
                return Err(StegoError::Desync { step: 0, token: full.get(prompt.len().min(full.len().saturating_sub(1))).copied().unwrap_or(0) });
            }
            for (step, &token) in full[prompt.len()..].iter().enumerate() {
                if done {
                    break;
                }
                let pools = step_pools(lm, tk, &tracker, cfg)?;
                let i = pools
                    .filtered
                    .entries
                    .iter()
                    .position(|e| e.0 == token)
                    .ok_or(StegoError::Desync { step, token })?;
                receiver.absorb(&pools.filtered, i)?;
                tracker.push(token);
                done = update(&receiver, &mut needed, &mut know_length);
            }
        }
        FilterKind::Basic | FilterKind::Mwis => {
            let mut rest = stegotext.as_bytes();
            let mut step = 0;
            while !done && !rest.is_empty() {
                let pools = step_pools(lm, tk, &tracker, cfg)?;
                let hit = pools
                    .filtered
                    .entries
                    .iter()
                    .position(|e| tk.rendered(e.0).is_some_and(|s| rest.starts_with(s)));
                let Some(i) = hit else {
                    let token = tk.encode_ids(&String::from_utf8_lossy(rest))?.first().copied().unwrap_or(0);
                    return Err(StegoError::Desync { step, token });
                };
                let token = pools.filtered.entries[i].0;
                receiver.absorb(&pools.filtered, i)?;
                tracker.push(token);
                rest = &rest[tk.rendered(token).map_or(0, <[u8]>::len)..];
                step += 1;
                done = update(&receiver, &mut needed, &mut know_length);
            }
        }
    }
    if !done {
        return Err(StegoError::Truncated {
            recovered: receiver.bits().len(),
            needed,
        });
    }
    let bits = receiver.bits();
    let start = match cfg.length_mode {
        LengthMode::OutOfBand => 0,
        LengthMode::LengthPrefixed => LENGTH_PREFIX_BITS,
    };
    Ok(SecretMessage::new(bits[start..needed].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_cli_names() {
        assert_eq!("arith".parse::<Codec>().unwrap(), Codec::Arithmetic);
        assert_eq!("MWIS".parse::<FilterKind>().unwrap(), FilterKind::Mwis);
        assert_eq!("length-prefixed".parse::<LengthMode>().unwrap(), LengthMode::LengthPrefixed);
        assert!("x".parse::<Codec>().is_err());
    }

    #[test]
    fn length_prefix_layout() {
        let m = SecretMessage::new(vec![true, false, true]);
        let p = payload(&m, LengthMode::LengthPrefixed).unwrap();
        assert_eq!(p.len(), 19);
        assert_eq!(&p[13..16], &[false, true, true]);
        assert_eq!(&p[16..], &m.bits[..]);
    }
}
