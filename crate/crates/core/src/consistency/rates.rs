use super::{report_for, ConsistencyError, ConsistencyTracker};
use crate::lm::{multinomial_sample, top_k_pool, LanguageModel, SamplingConfig};
use crate::tokenizer::{TokenId, Tokenizer};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub id: TokenId,
    /// probability in the full distribution
    pub p: f64,
    pub it_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub pool: Vec<PoolRecord>,
    pub emitted: TokenId,
    pub ti_now: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub prompt_len: usize,
    pub generated_len: usize,
    pub retokenized_len: usize,
    pub i_sit: usize,
    pub i_cit: usize,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub steps: Vec<StepRecord>,
    pub summary: TraceSummary,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: TraceSummary,
}

impl GenerationTrace {
    /// One JSON object per step, then a `{"summary":...}` line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("plain data"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&SummaryLine { summary: self.summary.clone() }).expect("plain data"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(s: &str) -> Result<Self, String> {
        let mut steps = Vec::new();
        let mut summary = None;
        for (i, line) in s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if summary.is_some() {
                return Err(format!("line {}: content after summary", i + 1));
            }
            if line.trim_start().starts_with("{\"summary\"") {
                let l: SummaryLine = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
                summary = Some(l.summary);
            } else {
                steps.push(serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?);
            }
        }
        Ok(GenerationTrace {
            steps,
            summary: summary.ok_or("missing summary line")?,
        })
    }

    /// Was the list inconsistent before step `t` was emitted?
    pub fn ti_before(&self, t: usize) -> bool {
        t > 0 && self.steps[t - 1].ti_now
    }

    /// Steps at which an emitted token turned a consistent list inconsistent.
    pub fn transition_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.steps.len()).filter(|&t| !self.ti_before(t) && self.steps[t].ti_now)
    }

    /// Tokens after step `t` until the list is consistent again.
    pub fn persistence(&self, t: usize) -> Persistence {
        (t + 1..self.steps.len())
            .find(|&u| !self.steps[u].ti_now)
            .map_or(Persistence::Never, |u| Persistence::Finite(u - t))
    }
}

/// Samples `length` tokens with plain multinomial sampling and records, at
/// every step, the `top_m` candidates with their candidate-level flags.
pub fn record_trace(
    lm: &dyn LanguageModel,
    tk: &Tokenizer,
    prompt: &[TokenId],
    length: usize,
    top_m: usize,
    rng: &mut impl RngCore,
) -> Result<GenerationTrace, ConsistencyError> {
    let mut tracker = ConsistencyTracker::with_history(tk, prompt);
    let mut steps = Vec::with_capacity(length);
    let cfg = SamplingConfig::with_top_k(top_m.max(1));
    for step in 0..length {
        let dist = lm.next_distribution(tracker.ids())?;
        let pool = if top_m == 0 {
            Vec::new()
        } else {
            top_k_pool(&dist, &cfg)
                .entries
                .iter()
                .map(|&(id, _)| PoolRecord {
                    id,
                    p: dist.probs[id as usize],
                    it_flag: tracker.is_candidate_level_it(id),
                })
                .collect()
        };
        let emitted = multinomial_sample(&dist.probs, rng);
        tracker.push(emitted);
        steps.push(StepRecord {
            step,
            pool,
            emitted,
            ti_now: !tracker.is_consistent(),
        });
    }
    let (report, retok) = report_for(tk, tracker.ids())?;
    Ok(GenerationTrace {
        steps,
        summary: TraceSummary {
            prompt_len: prompt.len(),
            generated_len: tracker.len(),
            retokenized_len: retok.len(),
            i_sit: report.i_sit.len(),
            i_cit: report.i_cit.len(),
            consistent: report.consistent,
        },
    })
}

/// How many tokens an inconsistency lasted; `Never` if it outlived the text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Persistence {
    Finite(usize),
    Never,
}

impl fmt::Display for Persistence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Persistence::Finite(n) => write!(f, "{n}"),
            Persistence::Never => f.write_str("inf"),
        }
    }
}

impl Serialize for Persistence {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Persistence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "inf" {
            return Ok(Persistence::Never);
        }
        s.parse().map(Persistence::Finite).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAggregates {
    pub traces: usize,
    pub text_level: f64,
    pub token_level: f64,
    pub candidate_number_ratio: f64,
    pub candidate_prob_ratio: f64,
    /// `None` when no candidate-level IT was ever emitted.
    pub temporary_rate: Option<f64>,
    pub it_events: usize,
    pub persistence_histogram: BTreeMap<Persistence, f64>,
}

/// Pools are truncated to `top_m` entries before the candidate ratios are
/// taken. Steps whose prefix was already inconsistent are left out of them.
pub fn aggregate_rates(traces: &[GenerationTrace], top_m: usize) -> Result<RateAggregates, ConsistencyError> {
    if traces.is_empty() {
        return Err(ConsistencyError::NoTraces);
    }
    let n = traces.len() as f64;
    let text_level = traces.iter().filter(|t| !t.summary.consistent).count() as f64 / n;
    let token_level = traces
        .iter()
        .map(|t| {
            let denom = (t.summary.generated_len + t.summary.retokenized_len) as f64;
            if denom == 0.0 {
                0.0
            } else {
                (t.summary.i_sit + t.summary.i_cit) as f64 / denom
            }
        })
        .sum::<f64>()
        / n;

    let (mut flagged_n, mut total_n, mut flagged_p, mut total_p) = (0usize, 0usize, 0.0, 0.0);
    let mut counts: BTreeMap<Persistence, usize> = BTreeMap::new();
    for t in traces {
        for (i, s) in t.steps.iter().enumerate() {
            if t.ti_before(i) {
                continue;
            }
            for c in s.pool.iter().take(top_m) {
                total_n += 1;
                total_p += c.p;
                if c.it_flag {
                    flagged_n += 1;
                    flagged_p += c.p;
                }
            }
        }
        for i in t.transition_steps() {
            *counts.entry(t.persistence(i)).or_default() += 1;
        }
    }
    let events: usize = counts.values().sum();
    let persistence_histogram: BTreeMap<Persistence, f64> = counts
        .iter()
        .map(|(k, &c)| (*k, c as f64 / events as f64))
        .collect();
    let temporary_rate = (events > 0).then(|| {
        1.0 - persistence_histogram
            .get(&Persistence::Never)
            .copied()
            .unwrap_or(0.0)
    });
    Ok(RateAggregates {
        traces: traces.len(),
        text_level,
        token_level,
        candidate_number_ratio: ratio(flagged_n as f64, total_n as f64),
        candidate_prob_ratio: ratio(flagged_p, total_p),
        temporary_rate,
        it_events: events,
        persistence_histogram,
    })
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}
