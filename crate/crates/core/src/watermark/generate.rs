use super::detect::{phi, ScoreTrace};
use super::scheme::{derive_vector, SchemeConfig, SchemeKind};
use super::WatermarkError;
use crate::consistency::{ConsistencyTracker, Persistence};
use crate::lm::{multinomial_sample, softmax, LanguageModel};
use crate::rng::sample_rng;
use crate::tokenizer::{TokenId, Tokenizer};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

pub const DEFAULT_MAX_ROLLBACKS: usize = 32;

/// Observation-period state for post-hoc rollback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackState {
    pub q: usize,
    /// `None` while the history round-trips.
    pub q_c: Option<usize>,
    /// Generated-token index -> ids excluded there. Kept for the session.
    pub ban_sets: BTreeMap<usize, BTreeSet<TokenId>>,
    pub max_rollbacks: usize,
    pub rollbacks_used: usize,
    /// When positive, each rollback first continues a throwaway copy of the
    /// generation for up to this many tokens and records whether the
    /// inconsistency would have cleared by itself.
    pub probe_horizon: usize,
}

impl RollbackState {
    pub fn new(q: usize, max_rollbacks: usize) -> Self {
        RollbackState {
            q,
            q_c: None,
            ban_sets: BTreeMap::new(),
            max_rollbacks,
            rollbacks_used: 0,
            probe_horizon: 0,
        }
    }

    pub fn with_probe(mut self, horizon: usize) -> Self {
        self.probe_horizon = horizon;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventOutcome {
    /// Consistency returned `after` tokens past the initiating one.
    Recovered { after: usize },
    /// `forced` marks a rollback made because the target length was reached
    /// mid-observation.
    RolledBack { forced: bool, probe: Option<Persistence> },
    /// Still open when generation stopped (no rollback configured).
    Open,
}

/// A transition from consistency to inconsistency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyEvent {
    /// Index of the initiating token among generated tokens.
    pub position: usize,
    pub token: TokenId,
    pub outcome: EventOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<TokenId>,
    /// Embedding-time scores; `None` for unwatermarked output.
    pub trace: Option<ScoreTrace>,
    pub events: Vec<InconsistencyEvent>,
    pub rollbacks_used: usize,
    /// Whether prompt plus output round-trips.
    pub consistent: bool,
    pub runtime_secs: f64,
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Plain,
    Marked(&'a SchemeConfig),
}

/// Generates `t_target` tokens after `prompt` with the scheme's decoder.
pub fn embed_watermark(
    lm: &dyn LanguageModel,
    tk: &Tokenizer,
    prompt: &[TokenId],
    cfg: &SchemeConfig,
    t_target: usize,
    rollback: Option<RollbackState>,
    seed: u64,
) -> Result<Generation, WatermarkError> {
    cfg.validate()?;
    if cfg.vocab_size != lm.vocab_size() {
        return Err(WatermarkError::Config(format!(
            "scheme vocabulary {} differs from model vocabulary {}",
            cfg.vocab_size,
            lm.vocab_size()
        )));
    }
    run(lm, tk, prompt, Mode::Marked(cfg), t_target, rollback, seed)
}

/// Unwatermarked multinomial sampling from the full distribution.
pub fn generate_plain(
    lm: &dyn LanguageModel,
    tk: &Tokenizer,
    prompt: &[TokenId],
    t_target: usize,
    rollback: Option<RollbackState>,
    seed: u64,
) -> Result<Generation, WatermarkError> {
    run(lm, tk, prompt, Mode::Plain, t_target, rollback, seed)
}

fn step(
    lm: &dyn LanguageModel,
    mode: Mode<'_>,
    history: &[TokenId],
    banned: Option<&BTreeSet<TokenId>>,
    rng: &mut ChaCha8Rng,
) -> Result<(TokenId, Option<f64>), WatermarkError> {
    let dist = lm.next_distribution(history)?;
    let is_banned = |i: usize| banned.is_some_and(|b| b.contains(&(i as TokenId)));
    let plain = |rng: &mut ChaCha8Rng| {
        let mut probs = dist.probs.clone();
        for (i, p) in probs.iter_mut().enumerate() {
            if is_banned(i) {
                *p = 0.0;
            }
        }
        sample_or_fail(&probs, rng)
    };
    let cfg = match mode {
        Mode::Marked(cfg) if history.len() >= cfg.width() => cfg,
        _ => return Ok((plain(rng)?, None)),
    };
    let v = derive_vector(cfg, &history[history.len() - cfg.width()..]);
    let token = match cfg.kind {
        SchemeKind::Gumbel => {
            // exponential race: argmax ln(U_i) / p_i, lower id on ties
            let mut best: Option<(TokenId, f64)> = None;
            for (i, &p) in dist.probs.iter().enumerate() {
                if p <= 0.0 || is_banned(i) {
                    continue;
                }
                let s = v[i].ln() / p;
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i as TokenId, s));
                }
            }
            best.ok_or(WatermarkError::NoCandidates { step: history.len() })?.0
        }
        _ => {
            let biased: Vec<f64> = dist
                .logits
                .iter()
                .enumerate()
                .map(|(i, l)| if is_banned(i) { f64::NEG_INFINITY } else { l + cfg.delta * v[i] })
                .collect();
            sample_or_fail(&softmax(&biased), rng)?
        }
    };
    Ok((token, Some(phi(cfg.kind, &v, token))))
}

fn sample_or_fail(probs: &[f64], rng: &mut ChaCha8Rng) -> Result<TokenId, WatermarkError> {
    let total: f64 = probs.iter().sum();
    if total <= 0.0 || total.is_nan() {
        return Err(WatermarkError::NoCandidates { step: 0 });
    }
    if total == 1.0 {
        return Ok(multinomial_sample(probs, rng));
    }
    let scaled: Vec<f64> = probs.iter().map(|p| p / total).collect();
    Ok(multinomial_sample(&scaled, rng))
}

struct Session<'a, 't> {
    lm: &'a dyn LanguageModel,
    mode: Mode<'a>,
    tracker: ConsistencyTracker<'t>,
    base: usize,
    phis: Vec<Option<f64>>,
    rng: ChaCha8Rng,
}

impl Session<'_, '_> {
    fn generated(&self) -> &[TokenId] {
        &self.tracker.ids()[self.base..]
    }

    fn advance(&mut self, banned: Option<&BTreeSet<TokenId>>) -> Result<TokenId, WatermarkError> {
        let (tok, phi) = step(self.lm, self.mode, self.tracker.ids(), banned, &mut self.rng)?;
        self.tracker.push(tok);
        self.phis.push(phi);
        Ok(tok)
    }

    fn truncate(&mut self, generated_len: usize) {
        self.tracker.truncate(self.base + generated_len);
        self.phis.truncate(generated_len);
    }

    /// Continues a copy without rollback and reports how many tokens after
    /// `origin` consistency returns.
    fn probe(&self, origin: usize, horizon: usize) -> Result<Persistence, WatermarkError> {
        let mut copy = Session {
            lm: self.lm,
            mode: self.mode,
            tracker: self.tracker.clone(),
            base: self.base,
            phis: Vec::new(),
            rng: self.rng.clone(),
        };
        let waited = self.generated().len() - 1 - origin;
        for k in 1..=horizon {
            copy.advance(None)?;
            if copy.tracker.is_consistent() {
                return Ok(Persistence::Finite(waited + k));
            }
        }
        Ok(Persistence::Never)
    }
}

fn run(
    lm: &dyn LanguageModel,
    tk: &Tokenizer,
    prompt: &[TokenId],
    mode: Mode<'_>,
    t_target: usize,
    mut rollback: Option<RollbackState>,
    seed: u64,
) -> Result<Generation, WatermarkError> {
    let start = Instant::now();
    let tracker = ConsistencyTracker::with_history(tk, prompt);
    if !tracker.is_consistent() {
        return Err(WatermarkError::InconsistentPrompt);
    }
    let mut s = Session {
        lm,
        mode,
        tracker,
        base: prompt.len(),
        phis: Vec::new(),
        rng: sample_rng(seed, 0),
    };
    let mut events = Vec::new();
    // (generated index, token) of the open inconsistency
    let mut open: Option<(usize, TokenId)> = None;

    while s.generated().len() < t_target {
        let at = s.generated().len();
        let banned = rollback.as_ref().and_then(|r| r.ban_sets.get(&at)).cloned();
        let tok = s.advance(banned.as_ref())?;
        let consistent = s.tracker.is_consistent();
        let mut roll = None;
        if consistent {
            if let Some((p, t)) = open.take() {
                events.push(InconsistencyEvent {
                    position: p,
                    token: t,
                    outcome: EventOutcome::Recovered { after: at - p },
                });
            }
            if let Some(r) = rollback.as_mut() {
                r.q_c = None;
            }
        } else {
            if open.is_none() {
                open = Some((at, tok));
            }
            if let Some(r) = rollback.as_mut() {
                let qc = r.q_c.get_or_insert(0);
                if *qc < r.q {
                    *qc += 1;
                } else {
                    roll = Some(false);
                }
            }
        }
        if roll.is_none() && !consistent && rollback.is_some() && s.generated().len() == t_target {
            roll = Some(true);
        }
        if let Some(forced) = roll {
            let r = rollback.as_mut().expect("rollback configured");
            let (p, t) = open.take().expect("an inconsistency is open");
            if r.rollbacks_used >= r.max_rollbacks {
                let tokens = s.generated().to_vec();
                return Err(WatermarkError::RollbackBudget {
                    max: r.max_rollbacks,
                    partial_text: tk.decode(&tokens)?,
                    partial_tokens: tokens,
                });
            }
            let probe = match r.probe_horizon {
                0 => None,
                h => Some(s.probe(p, h)?),
            };
            r.ban_sets.entry(p).or_default().insert(t);
            r.rollbacks_used += 1;
            r.q_c = None;
            s.truncate(p);
            events.push(InconsistencyEvent {
                position: p,
                token: t,
                outcome: EventOutcome::RolledBack { forced, probe },
            });
        }
    }
    if let Some((p, t)) = open {
        events.push(InconsistencyEvent {
            position: p,
            token: t,
            outcome: EventOutcome::Open,
        });
    }

    let tokens = s.generated().to_vec();
    let trace = match mode {
        Mode::Plain => None,
        Mode::Marked(cfg) => {
            let (mut positions, mut toks, mut phis) = (Vec::new(), Vec::new(), Vec::new());
            for (i, phi) in s.phis.iter().enumerate() {
                if let Some(phi) = phi {
                    positions.push(s.base + i);
                    toks.push(tokens[i]);
                    phis.push(*phi);
                }
            }
            if phis.is_empty() {
                None
            } else {
                Some(ScoreTrace::from_phis(cfg, positions, toks, phis)?)
            }
        }
    };
    Ok(Generation {
        text: tk.decode(&tokens)?,
        consistent: s.tracker.is_consistent(),
        tokens,
        trace,
        events,
        rollbacks_used: rollback.map_or(0, |r| r.rollbacks_used),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
