use proptest::prelude::*;
use retok::consistency::{
    is_candidate_level_it, is_candidate_level_it_windowed, report_for, roundtrip_consistent, span_align,
    ConsistencyTracker, GenerationTrace, Persistence,
};
use retok::fixtures;
use retok::rng::sample_rng;
use retok::tokenizer::{Merge, Source, Tokenizer, DEFAULT_MARKER};

fn abc() -> Tokenizer {
    let s = |x: &str| x.as_bytes().to_vec();
    Tokenizer::from_parts(
        vec![s("a"), s("b"), s("c"), s("ab"), s("abc")],
        vec![Merge { left: 0, right: 1, merged: 3 }, Merge { left: 3, right: 2, merged: 4 }],
        [],
        DEFAULT_MARKER,
        false,
    )
    .unwrap()
}

#[test]
fn split_merge_is_reported_on_both_sides() {
    let tk = abc();
    // generated a|b|c, canonical abc
    let (rep, retok) = report_for(&tk, &[0, 1, 2]).unwrap();
    assert_eq!(retok.ids, vec![4]);
    assert_eq!(rep.i_sit.iter().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(rep.i_cit.iter().copied().collect::<Vec<_>>(), vec![0]);
    assert!(!rep.consistent);

    // ab|c shares nothing with abc either
    let (rep, _) = report_for(&tk, &[3, 2]).unwrap();
    assert_eq!(rep.i_sit.len(), 2);
    let (rep, _) = report_for(&tk, &[4, 0]).unwrap();
    assert!(rep.consistent && rep.i_sit.is_empty() && rep.i_cit.is_empty());
}

#[test]
fn span_align_needs_equal_strings() {
    let tk = abc();
    let g = tk.sequence(vec![0], Source::Generated).unwrap();
    let r = tk.sequence(vec![1], Source::Retokenized).unwrap();
    assert!(span_align(&tk, &g, &r).is_err());
}

#[test]
fn candidate_flags_follow_the_round_trip() {
    let tk = abc();
    assert!(!is_candidate_level_it(&tk, &[], 3));
    // "ab" + "c" re-encodes to "abc"
    assert!(is_candidate_level_it(&tk, &[3], 2));
    assert!(!is_candidate_level_it(&tk, &[4], 2));
    let tr = ConsistencyTracker::with_history(&tk, &[3]);
    assert!(tr.is_candidate_level_it(2));
    assert!(!tr.is_candidate_level_it(0));
}

#[test]
fn half_written_character_counts_only_its_byte() {
    let fx = fixtures::temporary();
    let tk = &fx.tokenizer;
    let mut ids = tk.encode_ids(" the").unwrap();
    let e = "é".as_bytes();
    let first = tk.token_for(&String::from_utf8_lossy(&e[..1])).or_else(|| byte_token(tk, e[0])).unwrap();
    ids.push(first);
    let (rep, _) = report_for(tk, &ids).unwrap();
    assert!(!rep.consistent);
    assert_eq!(rep.i_sit.iter().copied().collect::<Vec<_>>(), vec![ids.len() - 1]);
    ids.push(byte_token(tk, e[1]).unwrap());
    // the two bytes together make é, which may or may not have its own token
    assert_eq!(tk.decode(&ids).unwrap(), " theé");
}

fn byte_token(tk: &Tokenizer, b: u8) -> Option<u32> {
    (0..tk.vocab_size() as u32).find(|&id| tk.surface(id) == Some(&[b][..]))
}

#[test]
fn persistence_reads_the_step_flags() {
    let fx = fixtures::ambiguous();
    let prompt = fx.prompt(0, 10);
    let trace = retok::consistency::record_trace(&fx.model, &fx.tokenizer, &prompt, 60, 8, &mut sample_rng(1, 1)).unwrap();
    for t in trace.transition_steps() {
        let p = trace.persistence(t);
        if let Persistence::Finite(n) = p {
            assert!(!trace.steps[t + n - 1].ti_now);
            assert!(trace.steps[t..t + n - 1].iter().all(|s| s.ti_now));
        }
    }
    let back = GenerationTrace::from_jsonl(&trace.to_jsonl()).unwrap();
    assert_eq!(back.steps.len(), trace.steps.len());
    assert_eq!(back.summary, trace.summary);
}

/// Walks a fixture model, keeping the history consistent, and checks every
/// candidate-level shortcut against the full re-encode.
fn check_walk(fx: &fixtures::Fixture, seed: u64, steps: usize, probes: usize) -> Result<(), TestCaseError> {
    use rand::Rng;
    let tk = &fx.tokenizer;
    let mut rng = sample_rng(seed, 0);
    let prompt = fx.prompt(seed as usize, 6);
    let mut tracker = ConsistencyTracker::with_history(tk, &prompt);
    for _ in 0..steps {
        for _ in 0..probes {
            let c = rng.random_range(0..tk.vocab_size() as u32);
            let full = is_candidate_level_it(tk, tracker.ids(), c);
            prop_assert_eq!(is_candidate_level_it_windowed(tk, tracker.ids(), c), full);
            prop_assert_eq!(tracker.is_candidate_level_it(c), full);
        }
        let d = retok::lm::LanguageModel::next_distribution(&fx.model, tracker.ids()).unwrap();
        let next = retok::lm::multinomial_sample(&d.probs, &mut rng);
        tracker.push(next);
        prop_assert_eq!(tracker.is_consistent(), roundtrip_consistent(tk, tracker.ids()));
        if !tracker.is_consistent() {
            let n = tracker.len() - 1;
            tracker.truncate(n);
            prop_assert!(tracker.is_consistent());
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn windowed_check_matches_full_on_ambiguous(seed in any::<u64>()) {
        check_walk(fixtures::ambiguous(), seed, 40, 8)?;
    }

    #[test]
    fn windowed_check_matches_full_on_temporary(seed in any::<u64>()) {
        check_walk(fixtures::temporary(), seed, 40, 8)?;
    }

    #[test]
    fn tracker_survives_truncation(seed in any::<u64>(), cut in 0usize..30) {
        let fx = fixtures::temporary();
        let tk = &fx.tokenizer;
        let mut rng = sample_rng(seed, 1);
        let mut tracker = ConsistencyTracker::new(tk);
        for _ in 0..30 {
            let d = retok::lm::LanguageModel::next_distribution(&fx.model, tracker.ids()).unwrap();
            tracker.push(retok::lm::multinomial_sample(&d.probs, &mut rng));
        }
        tracker.truncate(cut);
        prop_assert_eq!(tracker.len(), cut);
        prop_assert_eq!(tracker.is_consistent(), roundtrip_consistent(tk, tracker.ids()));
        let fresh = ConsistencyTracker::with_history(tk, tracker.ids());
        for c in 0..tk.vocab_size() as u32 {
            prop_assert_eq!(tracker.is_candidate_level_it(c), fresh.is_candidate_level_it(c));
        }
    }
}
