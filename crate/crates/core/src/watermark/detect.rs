use super::scheme::{derive_vector, SchemeConfig, SchemeKind};
use super::WatermarkError;
use crate::tokenizer::{TokenId, Tokenizer};
use serde::{Deserialize, Serialize};

/// Per-position scores and the aggregate statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    /// Index of each scored token in the scored sequence.
    pub positions: Vec<usize>,
    pub tokens: Vec<TokenId>,
    pub phis: Vec<f64>,
    pub scored_positions: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Line {
    pos: usize,
    token: TokenId,
    phi: f64,
}

impl ScoreTrace {
    pub fn from_phis(
        cfg: &SchemeConfig,
        positions: Vec<usize>,
        tokens: Vec<TokenId>,
        phis: Vec<f64>,
    ) -> Result<Self, WatermarkError> {
        let strength = strength_of(&phis, cfg)?;
        Ok(ScoreTrace {
            scored_positions: phis.len(),
            positions,
            tokens,
            phis,
            strength,
        })
    }

    /// One `{pos, token, phi}` object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for i in 0..self.phis.len() {
            let line = Line {
                pos: self.positions[i],
                token: self.tokens[i],
                phi: self.phis[i],
            };
            out.push_str(&serde_json::to_string(&line).expect("plain struct"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(cfg: &SchemeConfig, s: &str) -> Result<Self, WatermarkError> {
        let (mut positions, mut tokens, mut phis) = (Vec::new(), Vec::new(), Vec::new());
        for (n, l) in s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: Line = serde_json::from_str(l).map_err(|e| WatermarkError::Config(format!("trace line {}: {e}", n + 1)))?;
            positions.push(line.pos);
            tokens.push(line.token);
            phis.push(line.phi);
        }
        Self::from_phis(cfg, positions, tokens, phis)
    }
}

/// One-token score of `token` against the step vector.
pub fn phi(kind: SchemeKind, vector: &[f64], token: TokenId) -> f64 {
    let v = vector[token as usize];
    match kind {
        SchemeKind::Gumbel => -(1.0 - v).ln(),
        _ => v,
    }
}

pub fn strength(trace: &ScoreTrace, cfg: &SchemeConfig) -> Result<f64, WatermarkError> {
    strength_of(&trace.phis, cfg)
}

/// Standardized green count for logit-based schemes; `(Σφ − T)/√T` for
/// Gumbel, which equals `Σφ/√T − √T`.
pub fn strength_of(phis: &[f64], cfg: &SchemeConfig) -> Result<f64, WatermarkError> {
    if phis.is_empty() {
        return Err(WatermarkError::NoScoredPositions);
    }
    let t = phis.len() as f64;
    let sum: f64 = phis.iter().sum();
    Ok(match cfg.kind {
        SchemeKind::Gumbel => (sum - t) / t.sqrt(),
        _ => {
            let g = cfg.gamma;
            (sum - g * t) / (t * g * (1.0 - g)).sqrt()
        }
    })
}

/// Scores `ids[i]` for every `i >= first` that has `h` ids before it.
pub fn score_ids(cfg: &SchemeConfig, ids: &[TokenId], first: usize) -> Result<ScoreTrace, WatermarkError> {
    cfg.validate()?;
    let h = cfg.width();
    let (mut positions, mut tokens, mut phis) = (Vec::new(), Vec::new(), Vec::new());
    for i in first.max(h)..ids.len() {
        let token = ids[i];
        if token as usize >= cfg.vocab_size {
            return Err(WatermarkError::Config(format!("token {token} outside vocabulary")));
        }
        let v = derive_vector(cfg, &ids[i - h..i]);
        positions.push(i);
        tokens.push(token);
        phis.push(phi(cfg.kind, &v, token));
    }
    if phis.is_empty() {
        return Err(WatermarkError::InsufficientContext { tokens: ids.len(), needed: h + 1 });
    }
    ScoreTrace::from_phis(cfg, positions, tokens, phis)
}

/// Detector view: retokenize and score. With a prompt, the two are encoded
/// together and only tokens starting inside `text` are scored.
pub fn score_text(cfg: &SchemeConfig, tk: &Tokenizer, text: &str, prompt: Option<&str>) -> Result<ScoreTrace, WatermarkError> {
    match prompt {
        None => score_ids(cfg, &tk.encode_ids(text)?, 0),
        Some(p) => {
            let seq = tk.encode(&format!("{p}{text}"))?;
            let first = seq.spans.iter().position(|s| s.start >= p.len()).unwrap_or(seq.ids.len());
            score_ids(cfg, &seq.ids, first)
        }
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64, WatermarkError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(WatermarkError::Config("auroc needs two non-empty lists".into()));
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in pos {
        let below = sorted.partition_point(|&n| n < p);
        let ties = sorted[below..].partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * ties as f64;
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: SchemeKind) -> SchemeConfig {
        SchemeConfig::new(kind, b"k", 16)
    }

    #[test]
    fn strength_closed_forms() {
        assert_eq!(strength_of(&[1.0; 100], &cfg(SchemeKind::LeftHash)).unwrap(), 10.0);
        let half: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        assert_eq!(strength_of(&half, &cfg(SchemeKind::Unigram)).unwrap(), 0.0);
        let g = strength_of(&[2.0, 2.0], &cfg(SchemeKind::Gumbel)).unwrap();
        assert!((g - std::f64::consts::SQRT_2).abs() < 1e-6);
        assert_eq!(strength_of(&[1.0; 7], &cfg(SchemeKind::Gumbel)).unwrap(), 0.0);
        assert!(matches!(strength_of(&[], &cfg(SchemeKind::Gumbel)), Err(WatermarkError::NoScoredPositions)));
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[1.0, 2.5]).unwrap(), 0.75);
        assert_eq!(auroc(&[5.0, 6.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn short_input_lacks_context() {
        let c = cfg(SchemeKind::SelfHash);
        assert!(matches!(score_ids(&c, &[1, 2, 3, 4], 0), Err(WatermarkError::InsufficientContext { .. })));
        assert_eq!(score_ids(&c, &[1, 2, 3, 4, 5], 0).unwrap().scored_positions, 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let c = cfg(SchemeKind::Gumbel);
        let t = score_ids(&c, &[3, 1, 4, 1, 5, 9, 2, 6, 5, 3], 0).unwrap();
        let back = ScoreTrace::from_jsonl(&c, &t.to_jsonl()).unwrap();
        assert!((back.strength - t.strength).abs() < 1e-9);
        assert_eq!(back.tokens, t.tokens);
    }
}
