//! Round-trip consistency: span alignment between a generated token list and
//! its retokenization, the candidate-level check, and trace statistics.

mod rates;
mod tracker;

pub use rates::{
    aggregate_rates, record_trace, GenerationTrace, Persistence, PoolRecord, RateAggregates,
    StepRecord, TraceSummary,
};
pub use tracker::ConsistencyTracker;

use crate::tokenizer::{Source, Span, TokenId, TokenSequence, Tokenizer, TokenizerError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("not comparable: sequences decode to different strings")]
    NotComparable,
    #[error("empty trace list")]
    NoTraces,
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Lm(#[from] crate::lm::LmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InconsistencyReport {
    /// Indices into the generated sequence whose (span, id) is absent from
    /// the retokenized one.
    pub i_sit: BTreeSet<usize>,
    /// Indices into the retokenized sequence, symmetrically.
    pub i_cit: BTreeSet<usize>,
    pub consistent: bool,
}

impl InconsistencyReport {
    pub fn consistent() -> Self {
        InconsistencyReport {
            i_sit: BTreeSet::new(),
            i_cit: BTreeSet::new(),
            consistent: true,
        }
    }
}

pub fn span_align(
    tk: &Tokenizer,
    generated: &TokenSequence,
    retokenized: &TokenSequence,
) -> Result<InconsistencyReport, ConsistencyError> {
    if tk.decode_bytes(&generated.ids)? != tk.decode_bytes(&retokenized.ids)? {
        return Err(ConsistencyError::NotComparable);
    }
    Ok(align_pairs(generated, retokenized))
}

fn align_pairs(generated: &TokenSequence, retokenized: &TokenSequence) -> InconsistencyReport {
    let key = |s: &TokenSequence| -> Vec<(Span, TokenId)> {
        s.spans.iter().copied().zip(s.ids.iter().copied()).collect()
    };
    let g = key(generated);
    let r = key(retokenized);
    let gs: HashSet<_> = g.iter().copied().collect();
    let rs: HashSet<_> = r.iter().copied().collect();
    InconsistencyReport {
        i_sit: (0..g.len()).filter(|&i| !rs.contains(&g[i])).collect(),
        i_cit: (0..r.len()).filter(|&j| !gs.contains(&r[j])).collect(),
        consistent: g == r,
    }
}

/// Retokenizes `ids` and aligns the two lists.
///
/// When the decoded bytes hold incomplete UTF-8, the receiver sees U+FFFD in
/// its place; generated spans are mapped onto the repaired string first.
pub fn report_for(tk: &Tokenizer, ids: &[TokenId]) -> Result<(InconsistencyReport, TokenSequence), ConsistencyError> {
    let mut generated = tk.sequence(ids.to_vec(), Source::Generated)?;
    let raw = tk.decode_bytes(ids)?;
    let text = tk.decode(ids)?;
    let retokenized = tk.encode(&text)?;
    if text.len() != raw.len() || text.as_bytes() != raw.as_slice() {
        let map = repaired_offsets(&raw);
        for s in &mut generated.spans {
            *s = Span::new(map[s.start], map[s.end]);
        }
    }
    Ok((align_pairs(&generated, &retokenized), retokenized))
}

/// Offset of every raw byte boundary in the lossily repaired string. Bytes
/// inside an invalid sequence map to the start of its replacement.
fn repaired_offsets(raw: &[u8]) -> Vec<usize> {
    let mut map = Vec::with_capacity(raw.len() + 1);
    let mut out = 0;
    for chunk in raw.utf8_chunks() {
        for _ in 0..chunk.valid().len() {
            map.push(out);
            out += 1;
        }
        if !chunk.invalid().is_empty() {
            for _ in chunk.invalid() {
                map.push(out);
            }
            out += char::REPLACEMENT_CHARACTER.len_utf8();
        }
    }
    map.push(out);
    map
}

/// `encode(decode(ids)) == ids`.
pub fn roundtrip_consistent(tk: &Tokenizer, ids: &[TokenId]) -> bool {
    let Ok(text) = tk.decode(ids) else { return false };
    tk.encode_ids(&text).map(|r| r == ids).unwrap_or(false)
}

/// Whether appending `candidate` to `history` breaks the round trip.
pub fn is_candidate_level_it(tk: &Tokenizer, history: &[TokenId], candidate: TokenId) -> bool {
    let mut ids = Vec::with_capacity(history.len() + 1);
    ids.extend_from_slice(history);
    ids.push(candidate);
    !roundtrip_consistent(tk, &ids)
}

/// Suffix-window variant of [`is_candidate_level_it`].
///
/// Re-encodes only the trailing pieces covering at least
/// `4 * max_surface_len` bytes. Exact when `history` itself round-trips.
pub fn is_candidate_level_it_windowed(tk: &Tokenizer, history: &[TokenId], candidate: TokenId) -> bool {
    let Some(cand) = tk.rendered(candidate) else { return true };
    let window = tk.max_surface_len() * 4;
    let mut covered = 0;
    let mut start = history.len();
    // walk back until the window is covered and the boundary opens a piece
    while start > 0 {
        let Some(r) = tk.rendered(history[start - 1]) else { return true };
        covered += r.len();
        start -= 1;
        if covered >= window && r.first() == Some(&b' ') && !is_zero_width_run(tk, &history[..start]) {
            break;
        }
    }
    let mut bytes = Vec::with_capacity(covered + cand.len());
    for &id in &history[start..] {
        bytes.extend_from_slice(tk.rendered(id).expect("checked above"));
    }
    bytes.extend_from_slice(cand);
    let text = String::from_utf8_lossy(&bytes);
    match tk.encode_ids(&text) {
        Ok(r) => r.len() != history.len() - start + 1 || r[..r.len() - 1] != history[start..] || r[r.len() - 1] != candidate,
        Err(_) => true,
    }
}

// A special right before the cut would be re-encoded away, so keep walking.
fn is_zero_width_run(tk: &Tokenizer, head: &[TokenId]) -> bool {
    head.last().is_some_and(|&id| tk.rendered(id).is_some_and(<[u8]>::is_empty))
}
