use super::{check_history, LanguageModel, LmDistribution, LmError};
use crate::rng::{keyed_rng, std_normal};
use crate::tokenizer::TokenId;

/// Deterministic pseudo-model: logits are `sharpness * z` with `z` standard
/// normals drawn from a generator keyed by the last `context` history ids.
///
/// `sharpness = 0` gives the uniform distribution; entropy falls as it grows.
#[derive(Debug, Clone, PartialEq)]
pub struct HashLm {
    vocab_size: usize,
    context: usize,
    sharpness: f64,
    key: Vec<u8>,
}

impl HashLm {
    pub fn new(vocab_size: usize, context: usize, sharpness: f64, key: &[u8]) -> Self {
        assert!(vocab_size > 0, "empty vocabulary");
        assert!(sharpness >= 0.0 && sharpness.is_finite(), "sharpness must be finite and >= 0");
        HashLm {
            vocab_size,
            context,
            sharpness,
            key: key.to_vec(),
        }
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }
}

impl LanguageModel for HashLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, history: &[TokenId]) -> Result<LmDistribution, LmError> {
        check_history(history, self.vocab_size)?;
        let ctx = &history[history.len().saturating_sub(self.context)..];
        let mut rng = keyed_rng(b"hash-lm", &self.key, ctx);
        let logits = (0..self.vocab_size)
            .map(|_| self.sharpness * std_normal(&mut rng))
            .collect();
        LmDistribution::from_logits(logits, history.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sharpness_is_uniform() {
        let m = HashLm::new(16, 2, 0.0, b"k");
        let d = m.next_distribution(&[3, 4, 5]).unwrap();
        assert!(d.probs.iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn deterministic_and_context_limited() {
        let m = HashLm::new(50, 2, 1.5, b"k");
        let a = m.next_distribution(&[1, 2, 3]).unwrap();
        assert_eq!(a, m.next_distribution(&[1, 2, 3]).unwrap());
        assert_eq!(a.probs, m.next_distribution(&[9, 2, 3]).unwrap().probs);
        assert_ne!(a.probs, m.next_distribution(&[1, 3, 2]).unwrap().probs);
    }

    #[test]
    fn entropy_falls_with_sharpness() {
        let mut last = f64::INFINITY;
        for s in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let m = HashLm::new(200, 1, s, b"k");
            let h: f64 = (0..50)
                .map(|c| m.next_distribution(&[c]).unwrap().entropy_bits())
                .sum::<f64>()
                / 50.0;
            assert!(h < last, "sharpness {s}: {h} !< {last}");
            last = h;
        }
    }
}
