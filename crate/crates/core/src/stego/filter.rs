//! Candidate-pool filters: stepwise verification and the two prefix-based
//! disambiguation baselines.

use super::StegoError;
use crate::consistency::ConsistencyTracker;
use crate::lm::{ranked_ids, CandidatePool, LmDistribution};
use crate::tokenizer::{TokenId, Tokenizer};
use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub pool: CandidatePool,
    /// The pool emptied and a vocabulary token outside it was substituted.
    pub fallback: bool,
}

/// Drops every candidate-level IT. If nothing survives, the most probable
/// vocabulary token that is not one is used alone.
pub fn filter_stepwise(
    tracker: &ConsistencyTracker<'_>,
    pool: &CandidatePool,
    full: &LmDistribution,
) -> Result<Filtered, StegoError> {
    let kept = pool.restrict(|id| !tracker.is_candidate_level_it(id));
    if !kept.is_empty() {
        return Ok(Filtered { pool: kept, fallback: false });
    }
    for id in ranked_ids(&full.probs) {
        if full.probs[id as usize] > 0.0 && !pool.contains(id) && !tracker.is_candidate_level_it(id) {
            return Ok(Filtered {
                pool: CandidatePool {
                    entries: vec![(id, 1.0)],
                    parent_mass: full.probs[id as usize],
                },
                fallback: true,
            });
        }
    }
    Err(StegoError::NoConsistentContinuation { step: full.step_index })
}

/// Pool entries eligible for prefix-based filtering: among tokens with the
/// same decoded surface only the first in pool order survives.
fn distinct_surfaces<'a>(tk: &'a Tokenizer, pool: &CandidatePool) -> Vec<(usize, &'a [u8])> {
    let mut seen = std::collections::HashSet::new();
    pool.entries
        .iter()
        .enumerate()
        .filter_map(|(i, &(id, _))| {
            let s = tk.rendered(id).unwrap_or(&[]);
            seen.insert(s).then_some((i, s))
        })
        .collect()
}

/// Removes every token whose decoded surface is a strict prefix of another
/// candidate's.
pub fn filter_basic(tk: &Tokenizer, pool: &CandidatePool) -> CandidatePool {
    let mut items = distinct_surfaces(tk, pool);
    items.sort_by(|a, b| a.1.cmp(b.1));
    let mut keep = vec![false; pool.len()];
    for (k, &(i, s)) in items.iter().enumerate() {
        let dominated = items.get(k + 1).is_some_and(|n| n.1.starts_with(s));
        keep[i] = !dominated;
    }
    let mut k = 0;
    pool.restrict(|_| {
        k += 1;
        keep[k - 1]
    })
}

/// Keeps a maximum-weight antichain of the prefix order. Among equal
/// weights, the set whose smallest differing id it contains wins (this is
/// the lexicographic order on sorted id lists).
pub fn filter_mwis(tk: &Tokenizer, pool: &CandidatePool) -> CandidatePool {
    let mut items = distinct_surfaces(tk, pool);
    items.sort_by(|a, b| a.1.cmp(b.1));
    let ids: Vec<TokenId> = items.iter().map(|&(i, _)| pool.entries[i].0).collect();
    let weights: Vec<f64> = items.iter().map(|&(i, _)| pool.entries[i].1).collect();
    let surfaces: Vec<&[u8]> = items.iter().map(|x| x.1).collect();
    let chosen = mwis_forest(&surfaces, &weights, &ids);
    let chosen: std::collections::HashSet<TokenId> = chosen.into_iter().collect();
    pool.restrict(|id| chosen.contains(&id))
}

/// DP over the prefix forest of lexicographically sorted surfaces.
/// Returns the chosen ids.
fn mwis_forest(surfaces: &[&[u8]], weights: &[f64], ids: &[TokenId]) -> Vec<TokenId> {
    let n = surfaces.len();
    let mut parent = vec![usize::MAX; n];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..n {
        while let Some(&top) = stack.last() {
            if surfaces[i].starts_with(surfaces[top]) {
                break;
            }
            stack.pop();
        }
        if let Some(&top) = stack.last() {
            parent[i] = top;
        }
        stack.push(i);
    }
    // children follow parents in sorted order, so a reverse scan is bottom-up
    let mut child_w = vec![0.0; n];
    let mut child_set: Vec<Vec<TokenId>> = vec![Vec::new(); n];
    let mut best_w = vec![0.0; n];
    let mut best_set: Vec<Vec<TokenId>> = vec![Vec::new(); n];
    let mut root_w = 0.0;
    let mut root_set = Vec::new();
    for i in (0..n).rev() {
        let own = vec![ids[i]];
        let kids = std::mem::take(&mut child_set[i]);
        let take_kids = !kids.is_empty() && better(child_w[i], &kids, weights[i], &own);
        if take_kids {
            best_w[i] = child_w[i];
            best_set[i] = kids;
        } else {
            best_w[i] = weights[i];
            best_set[i] = own;
        }
        let set = std::mem::take(&mut best_set[i]);
        let (w, into) = match parent[i] {
            usize::MAX => (&mut root_w, &mut root_set),
            p => (&mut child_w[p], &mut child_set[p]),
        };
        *w += best_w[i];
        merge_sorted(into, &set);
    }
    root_set
}

fn merge_sorted(into: &mut Vec<TokenId>, from: &[TokenId]) {
    into.extend_from_slice(from);
    into.sort_unstable();
}

/// Strictly better: higher weight, or equal weight and the smallest element
/// of the symmetric difference belongs to `a`.
pub(crate) fn better(wa: f64, a: &[TokenId], wb: f64, b: &[TokenId]) -> bool {
    match wa.partial_cmp(&wb) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => {
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                match a[i].cmp(&b[j]) {
                    Ordering::Equal => {
                        i += 1;
                        j += 1;
                    }
                    Ordering::Less => return true,
                    Ordering::Greater => return false,
                }
            }
            i < a.len()
        }
    }
}

/// `D(modified ‖ original)` in bits.
pub fn pool_kld(original: &CandidatePool, modified: &CandidatePool) -> Result<f64, StegoError> {
    let mut d = 0.0;
    for &(id, q) in &modified.entries {
        let p = original
            .prob(id)
            .filter(|p| *p > 0.0)
            .ok_or(StegoError::SupportViolation { id })?;
        if q > 0.0 {
            d += q * (q / p).log2();
        }
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{Tokenizer, DEFAULT_MARKER};

    fn tk(words: &[&str]) -> Tokenizer {
        let surfaces = words
            .iter()
            .map(|w| w.bytes().map(|b| if b == b' ' { DEFAULT_MARKER } else { b }).collect())
            .collect();
        Tokenizer::from_parts(surfaces, vec![], [], DEFAULT_MARKER, false).unwrap()
    }

    fn pool(p: &[(TokenId, f64)]) -> CandidatePool {
        CandidatePool::from_weights(p.to_vec())
    }

    #[test]
    fn basic_examples() {
        let t = tk(&[" no", " nobody", "body"]);
        let out = filter_basic(&t, &pool(&[(0, 0.5), (1, 0.3), (2, 0.2)]));
        assert_eq!(out.ids().collect::<Vec<_>>(), vec![1, 2]);
        let chain = tk(&["a", "ab", "abc"]);
        let out = filter_basic(&chain, &pool(&[(0, 0.5), (1, 0.3), (2, 0.2)]));
        assert_eq!(out.entries, vec![(2, 1.0)]);
        let free = tk(&["a", "b", "c"]);
        let p = pool(&[(0, 0.5), (1, 0.3), (2, 0.2)]);
        assert_eq!(filter_basic(&free, &p), p);
    }

    #[test]
    fn mwis_examples() {
        let chain = tk(&["a", "ab", "abc"]);
        let out = filter_mwis(&chain, &pool(&[(0, 0.5), (1, 0.3), (2, 0.2)]));
        assert_eq!(out.entries, vec![(0, 1.0)]);
        let fork = tk(&["a", "ab", "ac"]);
        let out = filter_mwis(&fork, &pool(&[(0, 0.4), (1, 0.3), (2, 0.3)]));
        assert_eq!(out.ids().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn mwis_tie_prefers_smaller_ids() {
        // {a} vs {ab, ac} at equal weight: id 0 is the smallest difference
        let fork = tk(&["a", "ab", "ac"]);
        let out = filter_mwis(&fork, &pool(&[(0, 0.5), (1, 0.25), (2, 0.25)]));
        assert_eq!(out.ids().collect::<Vec<_>>(), vec![0]);
        let fork2 = tk(&["ab", "ac", "a"]);
        let out = filter_mwis(&fork2, &pool(&[(2, 0.5), (0, 0.25), (1, 0.25)]));
        assert_eq!(out.ids().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn kld_cases() {
        let orig = pool(&[(0, 0.5), (1, 0.3), (2, 0.2)]);
        assert_eq!(pool_kld(&orig, &orig).unwrap(), 0.0);
        let m = orig.restrict(|id| id != 2);
        let d = pool_kld(&orig, &m).unwrap();
        assert!((d - 0.321928094887362).abs() < 1e-12, "{d}");
        let outside = pool(&[(9, 1.0)]);
        assert!(matches!(pool_kld(&orig, &outside), Err(StegoError::SupportViolation { id: 9 })));
    }
}
