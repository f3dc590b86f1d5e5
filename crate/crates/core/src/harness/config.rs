use super::HarnessError;
use crate::fixtures::{self, prompt_text};
use crate::lm::{HashLm, LanguageModel, NGramLm};
use crate::rng::{below, sample_rng};
use crate::stego::{Codec, FilterKind};
use crate::tokenizer::{TokenId, Tokenizer};
use crate::watermark::SchemeKind;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// A whole experiment, usually read from a TOML file. Relative paths are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub prompts: PromptSpec,
    #[serde(default)]
    pub investigate: InvestigateSpec,
    #[serde(default)]
    pub stego: StegoSpec,
    #[serde(default)]
    pub watermark: WatermarkSpec,
    /// Replace the desk-scale grids by the full ones.
    #[serde(default)]
    pub full_grid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureName {
    Ambiguous,
    Temporary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Built-in tokenizer, model and corpus.
    pub fixture: Option<FixtureName>,
    /// Tokenizer file; overrides the fixture's.
    pub tokenizer: Option<PathBuf>,
    /// N-gram model file; overrides the fixture's.
    pub ngram: Option<PathBuf>,
    /// Keyed pseudo-model over the tokenizer's vocabulary.
    pub hash: Option<HashSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashSpec {
    #[serde(default = "two")]
    pub context: usize,
    #[serde(default = "one")]
    pub sharpness: f64,
    #[serde(default)]
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    /// One prompt source per line; the fixture corpus when absent.
    pub corpus: Option<PathBuf>,
    #[serde(default = "ten")]
    pub words: usize,
    /// Take this many leading characters instead of words.
    pub chars: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec {
            corpus: None,
            words: 10,
            chars: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvestigateSpec {
    #[serde(default = "lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "two_hundred")]
    pub samples: usize,
    #[serde(default = "sixty_four")]
    pub top_m: usize,
}

impl Default for InvestigateSpec {
    fn default() -> Self {
        InvestigateSpec {
            lengths: lengths(),
            samples: 200,
            top_m: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StegoSpec {
    #[serde(default = "top_ks")]
    pub top_k: Vec<usize>,
    #[serde(default = "filters")]
    pub filters: Vec<FilterKind>,
    #[serde(default = "codecs")]
    pub codecs: Vec<Codec>,
    #[serde(default = "two_hundred")]
    pub samples: usize,
    #[serde(default = "message_bits")]
    pub message_bits: usize,
    #[serde(default = "precision")]
    pub precision: u32,
    /// Ascending BPT boundaries; consecutive pairs form the buckets.
    #[serde(default = "bpt_bounds")]
    pub bpt_bounds: Vec<f64>,
}

impl Default for StegoSpec {
    fn default() -> Self {
        StegoSpec {
            top_k: top_ks(),
            filters: filters(),
            codecs: codecs(),
            samples: 200,
            message_bits: 128,
            precision: 32,
            bpt_bounds: bpt_bounds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSpec {
    #[serde(default = "schemes")]
    pub schemes: Vec<SchemeKind>,
    /// Hex-encoded secret key.
    #[serde(default = "wm_key")]
    pub key: String,
    #[serde(default = "half")]
    pub gamma: f64,
    #[serde(default = "two_f")]
    pub delta: f64,
    #[serde(default = "two_hundred")]
    pub tokens: usize,
    #[serde(default = "five_hundred")]
    pub samples: usize,
    #[serde(default = "epsilons")]
    pub epsilons: Vec<f64>,
    /// Observation period; chosen from the calibration run when absent.
    pub rollback_q: Option<usize>,
    #[serde(default = "thirty_two")]
    pub rollback_max: usize,
    #[serde(default = "two_hundred")]
    pub calibration_samples: usize,
    /// Score prompt-conditioned positions (the prompt is known to the
    /// detector) rather than the text alone.
    #[serde(default = "yes")]
    pub score_with_prompt: bool,
}

impl Default for WatermarkSpec {
    fn default() -> Self {
        WatermarkSpec {
            schemes: schemes(),
            key: wm_key(),
            gamma: 0.5,
            delta: 2.0,
            tokens: 200,
            samples: 500,
            epsilons: epsilons(),
            rollback_q: None,
            rollback_max: 32,
            calibration_samples: 200,
            score_with_prompt: true,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn two_f() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}
fn ten() -> usize {
    10
}
fn thirty_two() -> usize {
    32
}
fn sixty_four() -> usize {
    64
}
fn two_hundred() -> usize {
    200
}
fn five_hundred() -> usize {
    500
}
fn message_bits() -> usize {
    128
}
fn precision() -> u32 {
    32
}
fn lengths() -> Vec<usize> {
    vec![25, 50, 100, 200, 400]
}
fn top_ks() -> Vec<usize> {
    vec![4, 16, 64, 256]
}
fn filters() -> Vec<FilterKind> {
    vec![FilterKind::None, FilterKind::Stepwise, FilterKind::Basic, FilterKind::Mwis]
}
fn codecs() -> Vec<Codec> {
    vec![Codec::Arithmetic, Codec::Huffman]
}
fn bpt_bounds() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
}
fn schemes() -> Vec<SchemeKind> {
    SchemeKind::ALL.to_vec()
}
fn wm_key() -> String {
    hex::encode(b"retok-watermark")
}
fn epsilons() -> Vec<f64> {
    vec![0.0, 0.2, 0.4]
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.model.tokenizer);
        fix(&mut cfg.model.ngram);
        fix(&mut cfg.prompts.corpus);
        cfg.validate()?;
        Ok(cfg)
    }

    /// The full grids: 1000 samples per investigation length and top-k
    /// over powers of two from 4 to 4096.
    pub fn effective(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if c.full_grid {
            c.investigate.samples = c.investigate.samples.max(1000);
            c.stego.top_k = (2..=12).map(|e| 1usize << e).collect();
        }
        c
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let m = &self.model;
        if m.fixture.is_none() && m.tokenizer.is_none() {
            return bad("model needs a fixture or a tokenizer file");
        }
        if m.fixture.is_none() && m.ngram.is_none() && m.hash.is_none() {
            return bad("model needs a fixture, an ngram file or a hash spec");
        }
        if m.ngram.is_some() && m.hash.is_some() {
            return bad("ngram and hash are exclusive");
        }
        if m.fixture.is_none() && self.prompts.corpus.is_none() {
            return bad("prompts.corpus is required without a fixture");
        }
        for (name, p) in [("tokenizer", &m.tokenizer), ("ngram", &m.ngram), ("prompts.corpus", &self.prompts.corpus)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(HarnessError::Config(format!("{name}: {} does not exist", p.display())));
                }
            }
        }
        if self.investigate.samples == 0 || self.stego.samples == 0 || self.watermark.samples == 0 {
            return bad("sample counts must be at least 1");
        }
        if self.stego.top_k.contains(&0) {
            return bad("top_k values must be at least 1");
        }
        if self.stego.bpt_bounds.windows(2).any(|w| w[0] >= w[1]) {
            return bad("bpt_bounds must ascend");
        }
        if self.watermark.epsilons.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return bad("epsilons must lie in [0, 1]");
        }
        hex::decode(&self.watermark.key).map_err(|e| HarnessError::Config(format!("watermark.key: {e}")))?;
        Ok(())
    }

    pub fn resources(&self) -> Result<Resources, HarnessError> {
        let m = &self.model;
        let fixture = m.fixture.map(|f| match f {
            FixtureName::Ambiguous => fixtures::ambiguous(),
            FixtureName::Temporary => fixtures::temporary(),
        });
        let tokenizer = match (&m.tokenizer, fixture) {
            (Some(p), _) => Tokenizer::load(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
            (None, Some(f)) => f.tokenizer.clone(),
            (None, None) => unreachable!("validated"),
        };
        let model: Arc<dyn LanguageModel> = match (&m.ngram, &m.hash, fixture) {
            (Some(p), _, _) => Arc::new(NGramLm::load(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?),
            (None, Some(h), _) => Arc::new(HashLm::new(tokenizer.vocab_size(), h.context, h.sharpness, h.key.as_bytes())),
            (None, None, Some(f)) => Arc::new(f.model.clone()),
            (None, None, None) => unreachable!("validated"),
        };
        if model.vocab_size() != tokenizer.vocab_size() {
            return Err(HarnessError::Config(format!(
                "model vocabulary {} differs from tokenizer vocabulary {}",
                model.vocab_size(),
                tokenizer.vocab_size()
            )));
        }
        let corpus = match (&self.prompts.corpus, fixture) {
            (Some(p), _) => std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?,
            (None, Some(f)) => f.corpus.clone(),
            (None, None) => unreachable!("validated"),
        };
        let lines: Vec<String> = corpus.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect();
        if lines.is_empty() {
            return Err(HarnessError::Config("prompt corpus has no lines".into()));
        }
        Ok(Resources { tokenizer, model, lines })
    }
}

pub struct Resources {
    pub tokenizer: Tokenizer,
    pub model: Arc<dyn LanguageModel>,
    pub lines: Vec<String>,
}

impl Resources {
    /// Prompt `index`: a seeded line pick cut to the configured prefix.
    pub fn prompt(&self, spec: &PromptSpec, index: u64) -> Result<(String, Vec<TokenId>), HarnessError> {
        let mut rng = sample_rng(spec.seed, index);
        let line = below(&mut rng, self.lines.len() as u64) as usize;
        let text = match spec.chars {
            Some(n) => self.lines[line].chars().take(n).collect(),
            None => prompt_text(&self.lines[line], 0, spec.words),
        };
        let ids = self.tokenizer.encode_ids(&text)?;
        Ok((text, ids))
    }
}
