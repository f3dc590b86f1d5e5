use super::{check_history, LanguageModel, LmDistribution, LmError};
use crate::tokenizer::TokenId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
struct Counts {
    total: u64,
    next: Vec<(TokenId, u64)>,
}

/// Count-based n-gram model. The longest context seen in training is used,
/// with add-α smoothing over the whole vocabulary; unseen contexts back off
/// one order at a time down to the unigram table.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    n: usize,
    alpha: f64,
    vocab_size: usize,
    /// `tables[k]` maps contexts of length k to their continuation counts
    tables: Vec<HashMap<Vec<TokenId>, Counts>>,
}

pub fn train_ngram(
    sequences: &[Vec<TokenId>],
    n: usize,
    alpha: f64,
    vocab_size: usize,
) -> Result<NGramLm, LmError> {
    if n == 0 {
        return Err(LmError::InvalidParameter("n must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(LmError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if sequences.iter().all(Vec::is_empty) {
        return Err(LmError::EmptyCorpus);
    }
    let mut raw: Vec<HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>>> = vec![HashMap::new(); n];
    for seq in sequences {
        check_history(seq, vocab_size)?;
        for i in 0..seq.len() {
            for k in 0..n.min(i + 1) {
                let ctx = seq[i - k..i].to_vec();
                *raw[k].entry(ctx).or_default().entry(seq[i]).or_default() += 1;
            }
        }
    }
    let tables = raw
        .into_iter()
        .map(|t| {
            t.into_iter()
                .map(|(ctx, next)| {
                    let total = next.values().sum();
                    (ctx, Counts { total, next: next.into_iter().collect() })
                })
                .collect()
        })
        .collect();
    Ok(NGramLm { n, alpha, vocab_size, tables })
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn lookup(&self, history: &[TokenId]) -> Option<&Counts> {
        let longest = (self.n - 1).min(history.len());
        (0..=longest)
            .rev()
            .find_map(|k| self.tables[k].get(&history[history.len() - k..]))
    }

    pub fn to_json(&self) -> String {
        let mut tables = Vec::with_capacity(self.n);
        for t in &self.tables {
            let mut rows: Vec<ContextRow> = t
                .iter()
                .map(|(ctx, c)| ContextRow { context: ctx.clone(), next: c.next.clone() })
                .collect();
            rows.sort_by(|a, b| a.context.cmp(&b.context));
            tables.push(rows);
        }
        let f = NGramFile {
            version: FORMAT_VERSION,
            n: self.n,
            alpha: self.alpha,
            vocab_size: self.vocab_size,
            tables,
        };
        serde_json::to_string(&f).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, LmError> {
        let f: NGramFile = serde_json::from_str(s)
            .map_err(|e| LmError::File(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if f.version != FORMAT_VERSION {
            return Err(LmError::File(format!("unsupported version {}", f.version)));
        }
        if f.n == 0 || f.tables.len() != f.n || f.alpha.is_nan() || f.alpha <= 0.0 {
            return Err(LmError::File("inconsistent header".into()));
        }
        let mut tables = Vec::with_capacity(f.n);
        for (k, rows) in f.tables.into_iter().enumerate() {
            let mut t = HashMap::with_capacity(rows.len());
            for (r, row) in rows.into_iter().enumerate() {
                if row.context.len() != k {
                    return Err(LmError::File(format!("tables[{k}][{r}].context has wrong length")));
                }
                if row.next.iter().any(|&(id, _)| id as usize >= f.vocab_size)
                    || row.context.iter().any(|&id| id as usize >= f.vocab_size)
                {
                    return Err(LmError::File(format!("tables[{k}][{r}] id out of vocabulary")));
                }
                let total = row.next.iter().map(|e| e.1).sum();
                t.insert(row.context, Counts { total, next: row.next });
            }
            tables.push(t);
        }
        Ok(NGramLm { n: f.n, alpha: f.alpha, vocab_size: f.vocab_size, tables })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        std::fs::write(path.as_ref(), self.to_json())
            .map_err(|e| LmError::File(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let s = std::fs::read_to_string(path.as_ref())
            .map_err(|e| LmError::File(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&s)
    }
}

impl LanguageModel for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_distribution(&self, history: &[TokenId]) -> Result<LmDistribution, LmError> {
        check_history(history, self.vocab_size)?;
        let v = self.vocab_size as f64;
        let probs = match self.lookup(history) {
            Some(c) => {
                let denom = c.total as f64 + self.alpha * v;
                let mut p = vec![self.alpha / denom; self.vocab_size];
                for &(id, n) in &c.next {
                    p[id as usize] = (n as f64 + self.alpha) / denom;
                }
                p
            }
            None => vec![1.0 / v; self.vocab_size],
        };
        LmDistribution::from_probs(probs, history.len())
    }
}

#[derive(Serialize, Deserialize)]
struct ContextRow {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

#[derive(Serialize, Deserialize)]
struct NGramFile {
    version: u32,
    n: usize,
    alpha: f64,
    vocab_size: usize,
    tables: Vec<Vec<ContextRow>>,
}
