//! Token-replacement attack: each position is independently selected with
//! probability ε and resampled from the model given the left context.

use crate::lm::{multinomial_sample, unit_f64, LanguageModel, LmError};
use crate::rng::sample_rng;
use crate::tokenizer::{TokenId, Tokenizer, TokenizerError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("epsilon {0} outside [0, 1]")]
    Epsilon(f64),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Clone, Copy)]
pub struct AttackConfig<'m> {
    pub epsilon: f64,
    pub seed: u64,
    pub model: &'m dyn LanguageModel,
}

impl std::fmt::Debug for AttackConfig<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttackConfig")
            .field("epsilon", &self.epsilon)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attacked {
    pub ids: Vec<TokenId>,
    /// Positions drawn for resampling, including those that kept their token.
    pub selected: usize,
    pub changed: usize,
}

/// Scans `ids` left to right; a resample conditions on `context` followed
/// by the already mutated prefix. `context` itself is never touched.
pub fn replace_ids(cfg: &AttackConfig<'_>, context: &[TokenId], ids: &[TokenId]) -> Result<Attacked, AttackError> {
    if !(0.0..=1.0).contains(&cfg.epsilon) {
        return Err(AttackError::Epsilon(cfg.epsilon));
    }
    let mut rng = sample_rng(cfg.seed, 0);
    let mut out = context.to_vec();
    let (mut selected, mut changed) = (0, 0);
    for &id in ids {
        if unit_f64(&mut rng) < cfg.epsilon {
            let dist = cfg.model.next_distribution(&out)?;
            let new = multinomial_sample(&dist.probs, &mut rng);
            selected += 1;
            changed += usize::from(new != id);
            out.push(new);
        } else {
            out.push(id);
        }
    }
    out.drain(..context.len());
    Ok(Attacked { ids: out, selected, changed })
}

pub fn replacement_attack(cfg: &AttackConfig<'_>, tk: &Tokenizer, text: &str) -> Result<String, AttackError> {
    Ok(replacement_attack_detailed(cfg, tk, text)?.0)
}

/// The attacked text plus the id-level record.
pub fn replacement_attack_detailed(
    cfg: &AttackConfig<'_>,
    tk: &Tokenizer,
    text: &str,
) -> Result<(String, Attacked), AttackError> {
    let a = replace_ids(cfg, &[], &tk.encode_ids(text)?)?;
    Ok((tk.decode(&a.ids)?, a))
}
