use super::WatermarkError;
use crate::rng::{below, keyed_rng, open_unit};
use crate::tokenizer::TokenId;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    LeftHash,
    SelfHash,
    Unigram,
    Gumbel,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [SchemeKind::LeftHash, SchemeKind::SelfHash, SchemeKind::Unigram, SchemeKind::Gumbel];

    pub fn default_h(self) -> usize {
        match self {
            SchemeKind::LeftHash => 1,
            SchemeKind::SelfHash => 4,
            SchemeKind::Unigram => 0,
            SchemeKind::Gumbel => 5,
        }
    }

    /// Green-list schemes that bias logits, as opposed to the sampling race.
    pub fn is_logit_based(self) -> bool {
        self != SchemeKind::Gumbel
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::LeftHash => "lefthash",
            SchemeKind::SelfHash => "selfhash",
            SchemeKind::Unigram => "unigram",
            SchemeKind::Gumbel => "gumbel",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = WatermarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| WatermarkError::Config(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    #[serde(with = "hex::serde")]
    pub key: Vec<u8>,
    pub gamma: f64,
    pub delta: f64,
    /// Context width in tokens; 0 for unigram.
    pub h: usize,
    pub vocab_size: usize,
}

impl SchemeConfig {
    /// γ = 0.5, δ = 2 and the scheme's usual context width.
    pub fn new(kind: SchemeKind, key: &[u8], vocab_size: usize) -> Self {
        SchemeConfig {
            kind,
            key: key.to_vec(),
            gamma: 0.5,
            delta: 2.0,
            h: kind.default_h(),
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), WatermarkError> {
        let bad = |m: String| Err(WatermarkError::Config(m));
        if self.vocab_size == 0 {
            return bad("empty vocabulary".into());
        }
        if self.kind.is_logit_based() {
            if !(self.gamma > 0.0 && self.gamma <= 1.0) {
                return bad(format!("gamma {} outside (0, 1]", self.gamma));
            }
            if !(self.delta >= 0.0 && self.delta.is_finite()) {
                return bad(format!("delta {} must be finite and >= 0", self.delta));
            }
        }
        if self.kind != SchemeKind::Unigram && self.h == 0 {
            return bad(format!("{} needs a context width >= 1", self.kind));
        }
        Ok(())
    }

    /// Context width actually hashed.
    pub fn width(&self) -> usize {
        if self.kind == SchemeKind::Unigram {
            0
        } else {
            self.h
        }
    }

    pub fn green_count(&self) -> usize {
        (self.gamma * self.vocab_size as f64).floor() as usize
    }
}

/// The per-step vector: a 0/1 green indicator for logit-based schemes, or
/// uniforms in (0, 1) for the Gumbel race.
///
/// `context` must hold the last `h` ids; unigram ignores it.
pub fn derive_vector(cfg: &SchemeConfig, context: &[TokenId]) -> Vec<f64> {
    let ctx = if cfg.kind == SchemeKind::Unigram { &[][..] } else { context };
    match cfg.kind {
        SchemeKind::Gumbel => {
            let mut rng = keyed_rng(b"wm-gumbel", &cfg.key, ctx);
            (0..cfg.vocab_size).map(|_| open_unit(&mut rng)).collect()
        }
        _ => {
            let mut rng = keyed_rng(b"wm-green", &cfg.key, ctx);
            let n = cfg.vocab_size;
            let g = cfg.green_count().min(n);
            // the first g slots of a partial Fisher-Yates shuffle are green
            let mut perm: Vec<u32> = (0..n as u32).collect();
            let mut out = vec![0.0; n];
            for i in 0..g {
                let j = i + below(&mut rng, (n - i) as u64) as usize;
                perm.swap(i, j);
                out[perm[i] as usize] = 1.0;
            }
            out
        }
    }
}
