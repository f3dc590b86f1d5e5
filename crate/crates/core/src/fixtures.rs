//! Synthetic corpora and ready-made tokenizer/model pairs.
//!
//! The corpus is produced by a seeded word-level Markov chain over a small
//! English vocabulary in which compounds (`nobody`, `input`, `someone`, ...)
//! and their parts occur as separate words, so the trained tokenizer holds
//! both the compound token and a path through its parts.

use crate::lm::{train_ngram, NGramLm};
use crate::rng::below;
use crate::tokenizer::{train_bpe_with, TokenId, Tokenizer, TrainOptions};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

const WORDS: &[&str] = &[
    "the", "a", "of", "and", "to", "in", "is", "was", "he", "she", "it", "they", "we", "you", "i",
    "that", "this", "there", "here", "with", "for", "on", "at", "by", "from", "as", "but", "or",
    "not", "no", "body", "nobody", "some", "somebody", "one", "someone", "anyone", "any", "anybody",
    "thing", "something", "nothing", "anything", "everything", "every", "everyone", "where",
    "nowhere", "somewhere", "put", "input", "out", "output", "side", "inside", "outside", "to",
    "day", "today", "may", "be", "maybe", "with", "without", "can", "cannot", "up", "down", "over",
    "under", "go", "went", "come", "came", "see", "saw", "make", "made", "good", "new", "old",
    "long", "little", "great", "small", "world", "life", "hand", "part", "place", "work", "week",
    "point", "home", "water", "room", "mother", "father", "money", "story", "fact", "month", "lot",
    "right", "study", "book", "word", "business", "issue", "kind", "head", "night", "end", "door",
    "house", "case", "stair", "stairs", "upstairs", "downstairs", "town", "down", "downtown",
    "for", "ever", "forever", "how", "however", "when", "whenever", "what", "whatever", "after",
    "noon", "afternoon", "base", "ball", "baseball", "foot", "football", "sun", "light",
    "sunlight", "moon", "moonlight", "rain", "bow", "rainbow", "snow", "man", "snowman", "fire",
    "fireman", "police", "policeman", "class", "classroom", "bed", "bedroom", "note", "notebook",
    "text", "textbook", "sea", "seaside", "news", "paper", "newspaper", "back", "ground",
    "background", "under", "understand", "stand", "over", "look", "overlook", "into", "onto",
    "them", "selves", "themselves", "him", "self", "himself", "her", "herself", "my", "myself",
    "very", "much", "more", "most", "many", "other", "another", "each", "which", "who", "whom",
    "will", "would", "could", "should", "might", "must", "have", "has", "had", "do", "did", "does",
    "said", "say", "says", "get", "got", "take", "took", "know", "knew", "think", "thought",
];

/// Rare words used by the byte-fallback fixture; their non-ASCII
/// characters stay below the alphabet threshold and are spelled in bytes.
const RARE_WORDS: &[&str] = &[
    "café", "naïve", "façade", "jalapeño", "über", "smörgåsbord", "crème", "brûlée", "piñata",
    "señor", "déjà", "vu", "coöperate", "résumé", "fiancée", "zoë", "ångström", "œuvre",
];

/// Seeded word-level Markov text, one sentence per line.
pub fn corpus(seed: u64, lines: usize) -> String {
    corpus_with(seed, lines, WORDS, &[], 0.0)
}

fn corpus_with(seed: u64, lines: usize, words: &[&str], rare: &[&str], rare_rate: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let global = Zipf::new(words.len());
    let local = Zipf::new(6);
    // each word gets a handful of preferred successors
    let successors: Vec<Vec<usize>> = (0..words.len())
        .map(|_| (0..6).map(|_| global.sample(&mut rng)).collect())
        .collect();
    let mut out = String::new();
    for _ in 0..lines {
        out.push(' ');
        let len = 6 + below(&mut rng, 9) as usize;
        let mut w = global.sample(&mut rng);
        for k in 0..len {
            if k > 0 {
                out.push(' ');
            }
            if !rare.is_empty() && crate::lm::unit_f64(&mut rng) < rare_rate {
                out.push_str(rare[below(&mut rng, rare.len() as u64) as usize]);
            } else {
                out.push_str(words[w]);
            }
            w = if crate::lm::unit_f64(&mut rng) < 0.7 {
                successors[w][local.sample(&mut rng)]
            } else {
                global.sample(&mut rng)
            };
        }
        out.push_str(".\n");
    }
    out
}

/// Index in `0..n` with probability proportional to `1 / (i + 1)`.
struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize) -> Self {
        let mut acc = 0.0;
        let cdf = (1..=n)
            .map(|i| {
                acc += 1.0 / i as f64;
                acc
            })
            .collect();
        Zipf { cdf }
    }

    fn sample(&self, rng: &mut impl RngCore) -> usize {
        let u = crate::lm::unit_f64(rng) * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// A tokenizer, a model trained on its encodings, and prompt sources.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub tokenizer: Tokenizer,
    pub model: NGramLm,
    pub corpus: String,
}

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub seed: u64,
    pub lines: usize,
    pub vocab_size: usize,
    pub order: usize,
    pub alpha: f64,
    pub byte_fallback: bool,
    pub rare_rate: f64,
}

impl FixtureSpec {
    /// Pure BPE with compound ambiguity; inconsistencies never self-repair.
    pub fn ambiguous() -> Self {
        FixtureSpec {
            seed: 11,
            lines: 6000,
            vocab_size: 640,
            order: 3,
            alpha: 0.002,
            byte_fallback: false,
            rare_rate: 0.0,
        }
    }

    /// Byte fallback with rare accented words: a token can leave a
    /// character half-written, and the next byte token completes it.
    pub fn temporary() -> Self {
        FixtureSpec {
            seed: 12,
            lines: 6000,
            vocab_size: 900,
            order: 3,
            alpha: 0.0005,
            byte_fallback: true,
            rare_rate: 0.08,
        }
    }

    pub fn build(&self) -> Fixture {
        let text = corpus_with(self.seed, self.lines, WORDS, RARE_WORDS, self.rare_rate);
        let mut opts = TrainOptions::new(self.vocab_size);
        opts.specials = vec!["<s>".into(), "</s>".into()];
        opts.byte_fallback = self.byte_fallback;
        opts.min_char_count = usize::MAX;
        let tokenizer = train_bpe_with(&text, &opts).expect("fixture corpus trains");
        // one running sequence, so the model also learns sentence openings
        let seq: Vec<TokenId> = text
            .lines()
            .flat_map(|l| tokenizer.encode_ids(l).expect("corpus encodes"))
            .collect();
        let seqs = vec![seq];
        let model = train_ngram(&seqs, self.order, self.alpha, tokenizer.vocab_size()).expect("fixture model trains");
        Fixture { tokenizer, model, corpus: text }
    }
}

impl Fixture {
    /// Prompt ids: the first `words` words of corpus line `index`.
    pub fn prompt(&self, index: usize, words: usize) -> Vec<TokenId> {
        let text = prompt_text(&self.corpus, index, words);
        self.tokenizer.encode_ids(&text).expect("corpus encodes")
    }
}

/// First `words` space-delimited words of line `index` (cycling), keeping
/// the line's leading space.
pub fn prompt_text(corpus: &str, index: usize, words: usize) -> String {
    let lines: Vec<&str> = corpus.lines().filter(|l| !l.trim().is_empty()).collect();
    let line = lines[index % lines.len()];
    let mut out = String::new();
    for (k, w) in line.trim_start().split(' ').take(words).enumerate() {
        if k > 0 || line.starts_with(' ') {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

pub fn ambiguous() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| FixtureSpec::ambiguous().build())
}

pub fn temporary() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| FixtureSpec::temporary().build())
}
