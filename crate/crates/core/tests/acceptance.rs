//! End-to-end checks at full sample sizes. Prints one PASS/FAIL line per
//! check and exits non-zero if any fails.

use rand::Rng;
use rayon::prelude::*;
use retok::attack::{replace_ids, AttackConfig};
use retok::consistency::{
    is_candidate_level_it, is_candidate_level_it_windowed, record_trace, roundtrip_consistent, ConsistencyTracker,
    Persistence,
};
use retok::fixtures::{self, Fixture};
use retok::harness::stats::{binomial_upper_tail, cochran_armitage, mean, paired_t_less, variance};
use retok::lm::{multinomial_sample, top_k_pool, CandidatePool, HashLm, LanguageModel, SamplingConfig};
use retok::rng::sample_rng;
use retok::stego::{embed, extract, filter_mwis, pool_kld, Codec, FilterKind, SecretMessage, StegoConfig};
use retok::tokenizer::{TokenId, Tokenizer, DEFAULT_MARKER};
use retok::watermark::{
    auroc, derive_vector, embed_watermark, generate_plain, score_ids, score_text, strength_of, EventOutcome,
    Generation, RollbackState, SchemeConfig, SchemeKind,
};
use std::time::Instant;

struct Check {
    pass: bool,
    detail: String,
}

type Group = fn() -> Vec<Check>;

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check { pass, detail: detail.into() }
}

fn main() {
    let checks: [(&str, Group); 12] = [
        ("stego round trip / prefix consistency / unfiltered errors", stego_roundtrip),
        ("restricted-pool KLD closed form", restriction_kld),
        ("MWIS matches brute force", mwis_brute_force),
        ("stepwise KLD below basic", stepwise_vs_basic_kld),
        ("null strength calibration", null_calibration),
        ("LeftHash detection", lefthash_detection),
        ("AUROC falls with attack strength", attack_monotonicity),
        ("rollback ends consistent", rollback_consistency),
        ("rollback overhead", rollback_overhead),
        ("strength closed forms", strength_closed_forms),
        ("windowed check agrees with full", windowed_agreement),
        ("text-level rate trend", length_trend),
    ];
    let mut failed = 0;
    for (group, f) in checks {
        let start = Instant::now();
        let results = f();
        for c in &results {
            println!("{} {group}: {}", if c.pass { "PASS" } else { "FAIL" }, c.detail);
            failed += usize::from(!c.pass);
        }
        eprintln!("  ({group}: {:.1}s)", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} check(s) failed");
        std::process::exit(1);
    }
}

fn prompt_pair(fx: &Fixture, i: usize) -> (String, Vec<TokenId>) {
    let text = fixtures::prompt_text(&fx.corpus, i * 7, 10);
    let ids = fx.tokenizer.encode_ids(&text).expect("corpus text encodes");
    (text, ids)
}

fn stego_roundtrip() -> Vec<Check> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let n = 1000;
    let cfg = StegoConfig::new(Codec::Arithmetic, FilterKind::Stepwise, 64);
    let start = Instant::now();
    let runs: Vec<(bool, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let prompt = fx.prompt(i, 10);
            let msg = SecretMessage::random(128, &mut sample_rng(101, i as u64));
            let Ok(out) = embed(&fx.model, tk, &prompt, &msg, &cfg) else { return (false, false) };
            let exact = extract(&fx.model, tk, &prompt, &out.stegotext, &cfg, Some(128)).is_ok_and(|m| m == msg);
            let mut ids = prompt.clone();
            let mut prefixes = roundtrip_consistent(tk, &ids);
            for &t in &out.tokens {
                ids.push(t);
                prefixes &= roundtrip_consistent(tk, &ids);
            }
            (exact, prefixes)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let exact = runs.iter().filter(|r| r.0).count();
    let prefixes = runs.iter().filter(|r| r.1).count();

    let none = StegoConfig::new(Codec::Arithmetic, FilterKind::None, 64);
    let errors = (0..n)
        .into_par_iter()
        .filter(|&i| {
            let prompt = fx.prompt(i, 10);
            let msg = SecretMessage::random(128, &mut sample_rng(102, i as u64));
            match embed(&fx.model, tk, &prompt, &msg, &none) {
                Ok(out) => extract(&fx.model, tk, &prompt, &out.stegotext, &none, Some(128)).map_or(true, |m| m != msg),
                Err(_) => true,
            }
        })
        .count();
    let p = binomial_upper_tail(errors as u64, n as u64, 0.01);
    vec![
        check(exact == n && secs < 300.0, format!("{exact}/{n} exact extractions in {secs:.1}s (limit 300s)")),
        check(prefixes == n, format!("{prefixes}/{n} runs with every history prefix round-tripping")),
        check(p < 0.01, format!("filter=none: {errors}/{n} errors, P(X>={errors} | p=0.01) = {p:.2e} (need < 0.01)")),
    ]
}

fn restriction_kld() -> Vec<Check> {
    let mut rng = sample_rng(103, 0);
    let mut worst: f64 = 0.0;
    let n = 10_000;
    for _ in 0..n {
        let size = rng.random_range(2..64);
        let pool = CandidatePool::from_weights((0..size).map(|i| (i as TokenId, rng.random_range(1e-3..1.0))).collect());
        let drop_at = rng.random_range(0..size);
        let keep: Vec<bool> = (0..size).map(|i| i != drop_at && rng.random_bool(0.6)).collect();
        if !keep.iter().any(|&k| k) {
            continue;
        }
        let removed: f64 = pool.entries.iter().filter(|e| !keep[e.0 as usize]).map(|e| e.1).sum();
        let restricted = pool.restrict(|id| keep[id as usize]);
        let d = pool_kld(&pool, &restricted).unwrap();
        worst = worst.max((d - (-(1.0 - removed).log2())).abs());
    }
    vec![check(worst <= 1e-9, format!("max |D - (-log2(1-m))| = {worst:.2e} over {n} pools (tolerance 1e-9)"))]
}

fn mwis_brute_force() -> Vec<Check> {
    let mut rng = sample_rng(104, 0);
    let mut mismatches = 0;
    let n = 1000;
    for _ in 0..n {
        let mut words: Vec<String> = (0..16)
            .map(|_| (0..rng.random_range(1..5)).map(|_| if rng.random_bool(0.5) { 'a' } else { 'b' }).collect())
            .collect();
        words.sort();
        words.dedup();
        let m = words.len();
        let tk = Tokenizer::from_parts(words.iter().map(|w| w.as_bytes().to_vec()).collect(), vec![], [], DEFAULT_MARKER, false)
            .unwrap();
        // dyadic weights keep every subset sum exact
        let pool = CandidatePool::from_weights((0..m as TokenId).map(|i| (i, rng.random_range(1..64) as f64 / 64.0)).collect());
        let kept: f64 = filter_mwis(&tk, &pool).ids().map(|id| pool.prob(id).unwrap()).sum();
        let mut best: f64 = 0.0;
        for mask in 1u32..(1 << m) {
            let chosen: Vec<usize> = (0..m).filter(|&i| mask >> i & 1 == 1).collect();
            let antichain = chosen
                .iter()
                .all(|&a| chosen.iter().all(|&b| a == b || !words[b].starts_with(&words[a])));
            if antichain {
                best = best.max(chosen.iter().map(|&i| pool.prob(i as TokenId).unwrap()).sum());
            }
        }
        mismatches += usize::from((kept - best).abs() > 1e-12);
    }
    vec![check(mismatches == 0, format!("{mismatches}/{n} pools where the DP weight differs from brute force"))]
}

fn stepwise_vs_basic_kld() -> Vec<Check> {
    let fx = fixtures::ambiguous();
    let n = 200;
    let kld = |filter: FilterKind| -> Vec<f64> {
        let cfg = StegoConfig::new(Codec::Arithmetic, filter, 64);
        (0..n)
            .into_par_iter()
            .map(|i| {
                let msg = SecretMessage::random(128, &mut sample_rng(105, i as u64));
                embed(&fx.model, &fx.tokenizer, &fx.prompt(i, 10), &msg, &cfg).unwrap().mean_kld()
            })
            .collect()
    };
    let (s, b) = (kld(FilterKind::Stepwise), kld(FilterKind::Basic));
    let t = paired_t_less(&s, &b);
    vec![check(
        t.p_value < 0.05,
        format!("{n} pairs: stepwise {:.5} vs basic {:.5} bits, t = {:.2}, p = {:.2e}", mean(&s), mean(&b), t.statistic, t.p_value),
    )]
}

fn null_calibration() -> Vec<Check> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let lm = HashLm::new(tk.vocab_size(), 2, 1.0, b"null-model");
    let texts: Vec<String> = (0..500u64)
        .into_par_iter()
        .map(|i| generate_plain(&lm, tk, &fx.prompt(i as usize, 10), 200, None, 106_000 + i).unwrap().text)
        .collect();
    SchemeKind::ALL
        .iter()
        .map(|&kind| {
            let cfg = SchemeConfig::new(kind, b"null-key", tk.vocab_size());
            let s: Vec<f64> = texts.par_iter().map(|t| score_text(&cfg, tk, t, None).unwrap().strength).collect();
            let (m, v) = (mean(&s), variance(&s));
            if kind.is_logit_based() {
                check(m.abs() < 0.15 && v > 0.7 && v < 1.3, format!("{kind}: mean {m:.3} in (-0.15, 0.15), variance {v:.3} in (0.7, 1.3)"))
            } else {
                check(m.abs() < 0.2, format!("{kind}: mean {m:.3} in (-0.2, 0.2) (variance {v:.3})"))
            }
        })
        .collect()
}

/// Positive strengths at each ε and negative strengths, scored with the
/// prompt as left context.
fn detection_scores(kind: SchemeKind, t: usize, delta: f64, n: usize, epsilons: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let lm: &dyn LanguageModel = &fx.model;
    let mut cfg = SchemeConfig::new(kind, b"detect-key", tk.vocab_size());
    cfg.delta = delta;
    let prompts: Vec<_> = (0..n).map(|i| prompt_pair(fx, i)).collect();
    let neg: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let g = generate_plain(lm, tk, &prompts[i].1, t, None, 107_000 + i as u64).unwrap();
            score_text(&cfg, tk, &g.text, Some(&prompts[i].0)).unwrap().strength
        })
        .collect();
    let pos: Vec<Generation> =
        (0..n).into_par_iter().map(|i| embed_watermark(lm, tk, &prompts[i].1, &cfg, t, None, i as u64).unwrap()).collect();
    let by_eps = epsilons
        .iter()
        .map(|&eps| {
            pos.par_iter()
                .enumerate()
                .map(|(i, g)| {
                    let ac = AttackConfig { epsilon: eps, seed: 108_000 + i as u64, model: lm };
                    let ids = replace_ids(&ac, &prompts[i].1, &g.tokens).unwrap().ids;
                    score_text(&cfg, tk, &tk.decode(&ids).unwrap(), Some(&prompts[i].0)).unwrap().strength
                })
                .collect()
        })
        .collect();
    (by_eps, neg)
}

fn lefthash_detection() -> Vec<Check> {
    let start = Instant::now();
    let (pos, neg) = detection_scores(SchemeKind::LeftHash, 200, 2.0, 500, &[0.0]);
    let a = auroc(&pos[0], &neg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    vec![check(
        a >= 0.95 && secs < 600.0,
        format!("500 vs 500, T=200, delta=2: AUROC {a:.4} (need >= 0.95) in {secs:.1}s (limit 600s)"),
    )]
}

fn attack_monotonicity() -> Vec<Check> {
    // T=30, delta=1 keeps every cell off the AUROC ceiling
    let eps = [0.0, 0.2, 0.4];
    SchemeKind::ALL
        .iter()
        .map(|&kind| {
            let (pos, neg) = detection_scores(kind, 30, 1.0, 300, &eps);
            let a: Vec<f64> = pos.iter().map(|p| auroc(p, &neg).unwrap()).collect();
            let rises: Vec<f64> = a.windows(2).map(|w| w[1] - w[0]).collect();
            let not_falling = rises.iter().filter(|&&r| r >= 0.0).count();
            let worst = rises.iter().copied().fold(f64::MIN, f64::max);
            check(
                not_falling <= 1 && worst <= 0.01,
                format!("{kind} (300 texts/cell): AUROC {:.4} >= {:.4} >= {:.4}", a[0], a[1], a[2]),
            )
        })
        .collect()
}

struct RollbackRun {
    consistent: usize,
    failures: usize,
    recovered: usize,
    rolled_temporary: usize,
    rolled_permanent: usize,
}

fn rollback_run(fx: &Fixture, q: usize, n: usize) -> RollbackRun {
    let tk = &fx.tokenizer;
    let cfg = SchemeConfig::new(SchemeKind::LeftHash, b"rollback-key", tk.vocab_size());
    let gens: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let prompt = fx.prompt(i, 10);
            let rb = RollbackState::new(q, 32).with_probe(64);
            embed_watermark(&fx.model, tk, &prompt, &cfg, 200, Some(rb), 109_000 + i as u64).map(|g| {
                let mut all = prompt;
                all.extend(&g.tokens);
                let ok = g.consistent && roundtrip_consistent(tk, &all);
                (g, ok)
            })
        })
        .collect();
    let mut r = RollbackRun { consistent: 0, failures: 0, recovered: 0, rolled_temporary: 0, rolled_permanent: 0 };
    for g in &gens {
        match g {
            Err(_) => r.failures += 1,
            Ok((g, ok)) => {
                r.consistent += usize::from(*ok);
                for e in &g.events {
                    match e.outcome {
                        EventOutcome::Recovered { .. } => r.recovered += 1,
                        EventOutcome::RolledBack { probe: Some(Persistence::Finite(_)), .. } => r.rolled_temporary += 1,
                        _ => r.rolled_permanent += 1,
                    }
                }
            }
        }
    }
    r
}

fn rollback_consistency() -> Vec<Check> {
    let n = 500;
    let low = rollback_run(fixtures::ambiguous(), 2, n);
    let high = rollback_run(fixtures::temporary(), 10, n);
    let temporary = high.recovered + high.rolled_temporary;
    let share = high.recovered as f64 / temporary.max(1) as f64;
    vec![
        check(
            low.consistent == n && high.consistent == n,
            format!(
                "low temporariness (q=2): {}/{n} consistent, {} budget failures; high (q=10): {}/{n}, {} budget failures",
                low.consistent, low.failures, high.consistent, high.failures
            ),
        ),
        check(
            temporary > 0 && share >= 0.95,
            format!(
                "high temporariness: {} of {temporary} temporary inconsistencies cleared without rollback ({:.1}%, need 95%); {} permanent rolled back",
                high.recovered,
                100.0 * share,
                high.rolled_permanent
            ),
        ),
    ]
}

fn rollback_overhead() -> Vec<Check> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let cfg = SchemeConfig::new(SchemeKind::LeftHash, b"overhead-key", tk.vocab_size());
    let prompts: Vec<Vec<TokenId>> = (0..300).map(|i| fx.prompt(i, 10)).collect();
    let run = |i: usize, rb: bool| {
        let state = rb.then(|| RollbackState::new(2, 32));
        embed_watermark(&fx.model, tk, &prompts[i], &cfg, 200, state, i as u64).unwrap()
    };
    let clean: Vec<usize> = (0..prompts.len()).filter(|&i| run(i, false).events.is_empty()).collect();
    let mut identical = true;
    let (mut best_plain, mut best_rb) = (f64::MAX, f64::MAX);
    for rep in 0..5 {
        let (mut plain, mut rb) = (0.0, 0.0);
        for &i in &clean {
            let order = if (i + rep) % 2 == 0 { [false, true] } else { [true, false] };
            let mut outs = Vec::new();
            for with in order {
                let t0 = Instant::now();
                let g = run(i, with);
                let dt = t0.elapsed().as_secs_f64();
                if with { rb += dt } else { plain += dt }
                outs.push(g.tokens);
            }
            identical &= outs[0] == outs[1];
        }
        best_plain = best_plain.min(plain);
        best_rb = best_rb.min(rb);
    }
    let overhead = best_rb / best_plain - 1.0;
    vec![check(
        overhead <= 0.10 && identical,
        format!(
            "{} consistent runs: {best_plain:.3}s without, {best_rb:.3}s with rollback, overhead {:.1}% (limit 10%)",
            clean.len(),
            100.0 * overhead
        ),
    )]
}

fn strength_closed_forms() -> Vec<Check> {
    let v = 640;
    let green = SchemeConfig::new(SchemeKind::LeftHash, b"closed", v);
    let gumbel = SchemeConfig::new(SchemeKind::Gumbel, b"closed", v);
    let s_green = strength_of(&[1.0; 100], &green).unwrap();
    let s_gumbel = strength_of(&[1.0; 100], &gumbel).unwrap();
    // an all-green token list scored through the detector
    let mut ids: Vec<TokenId> = vec![0];
    for _ in 0..100 {
        let vec = derive_vector(&green, &ids[ids.len() - 1..]);
        ids.push(vec.iter().position(|&x| x == 1.0).unwrap() as TokenId);
    }
    let traced = score_ids(&green, &ids, 1).unwrap();
    vec![
        check(s_green == 10.0 && traced.strength == 10.0, format!("all green, gamma=0.5, T=100: {s_green} (via ids {})", traced.strength)),
        check(s_gumbel == 0.0, format!("gumbel, all phi=1, T=100: {s_gumbel}")),
    ]
}

fn windowed_agreement() -> Vec<Check> {
    let per_walk = 500;
    let walks = 200;
    let results: Vec<(usize, usize, usize)> = (0..walks)
        .into_par_iter()
        .map(|w| {
            let fx = if w % 2 == 0 { fixtures::ambiguous() } else { fixtures::temporary() };
            let tk = &fx.tokenizer;
            let mut rng = sample_rng(110, w as u64);
            let mut tracker = ConsistencyTracker::with_history(tk, &fx.prompt(w, 8));
            let (mut checked, mut window_bad, mut tracker_bad) = (0, 0, 0);
            while checked < per_walk {
                let d = fx.model.next_distribution(tracker.ids()).unwrap();
                let pool = top_k_pool(&d, &SamplingConfig::with_top_k(16));
                for k in 0..5 {
                    // alternate likely candidates with uniform ones
                    let c = if k % 2 == 0 {
                        pool.entries[rng.random_range(0..pool.len())].0
                    } else {
                        rng.random_range(0..tk.vocab_size() as TokenId)
                    };
                    let full = is_candidate_level_it(tk, tracker.ids(), c);
                    window_bad += usize::from(is_candidate_level_it_windowed(tk, tracker.ids(), c) != full);
                    tracker_bad += usize::from(tracker.is_candidate_level_it(c) != full);
                    checked += 1;
                }
                tracker.push(multinomial_sample(&d.probs, &mut rng));
                if !tracker.is_consistent() {
                    let n = tracker.len() - 1;
                    tracker.truncate(n);
                }
            }
            (checked, window_bad, tracker_bad)
        })
        .collect();
    let total: usize = results.iter().map(|r| r.0).sum();
    let window_bad: usize = results.iter().map(|r| r.1).sum();
    let tracker_bad: usize = results.iter().map(|r| r.2).sum();
    vec![check(
        total >= 100_000 && window_bad == 0 && tracker_bad == 0,
        format!("{total} steps: {window_bad} windowed and {tracker_bad} incremental disagreements with the full re-encode"),
    )]
}

fn length_trend() -> Vec<Check> {
    let fx = fixtures::ambiguous();
    let lengths = [25usize, 50, 100, 200, 400];
    let n = 500;
    let bad: Vec<u64> = lengths
        .iter()
        .enumerate()
        .map(|(cell, &len)| {
            (0..n)
                .into_par_iter()
                .filter(|&i| {
                    let mut rng = sample_rng(111 + cell as u64, i as u64);
                    let t = record_trace(&fx.model, &fx.tokenizer, &fx.prompt(i, 10), len, 0, &mut rng).unwrap();
                    !t.summary.consistent
                })
                .count() as u64
        })
        .collect();
    let rates: Vec<f64> = bad.iter().map(|&b| b as f64 / n as f64).collect();
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    let scores: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    let trend = cochran_armitage(&bad, &[n as u64; 5], &scores);
    vec![check(
        monotone && trend.p_value < 0.05,
        format!("rates {rates:?} over lengths {lengths:?}; trend z = {:.2}, p = {:.2e}", trend.statistic, trend.p_value),
    )]
}
