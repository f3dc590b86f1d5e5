use super::{mean_value, Environment, ExperimentConfig, HarnessError, Report, Resources, Table};
use crate::attack::{replace_ids, AttackConfig};
use crate::lm::perplexity_of_ids;
use crate::rng::keyed_seed;
use crate::watermark::{
    auroc, embed_watermark, generate_plain, score_text, EventOutcome, Generation, RollbackState, SchemeConfig,
    WatermarkError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::time::Instant;

/// Observation-period choice from unwatermarked generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QCalibration {
    pub generations: usize,
    pub events: usize,
    /// tokens until consistency returned -> count
    pub recovered: BTreeMap<usize, usize>,
    /// still inconsistent at the end of the text
    pub unresolved: usize,
    pub temporary_rate: Option<f64>,
    pub q: usize,
}

impl QCalibration {
    /// Share of all events gone within `n` tokens.
    pub fn disappeared_within(&self, n: usize) -> f64 {
        if self.events == 0 {
            return 0.0;
        }
        self.recovered.range(..=n).map(|(_, c)| c).sum::<usize>() as f64 / self.events as f64
    }
}

fn seed_for(tag: &[u8], base: u64, ids: &[u32]) -> u64 {
    keyed_seed(tag, &base.to_le_bytes(), ids)
}

/// q = 2 when most inconsistencies are permanent, 10 otherwise.
pub fn calibrate_q(res: &Resources, cfg: &ExperimentConfig) -> Result<QCalibration, HarnessError> {
    let spec = &cfg.watermark;
    let gens: Vec<Generation> = (0..spec.calibration_samples as u32)
        .into_par_iter()
        .map(|i| {
            let (_, prompt) = res.prompt(&cfg.prompts, i as u64)?;
            let seed = seed_for(b"wm-calibrate", cfg.seed, &[i]);
            Ok(generate_plain(&*res.model, &res.tokenizer, &prompt, spec.tokens, None, seed)?)
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut recovered = BTreeMap::new();
    let (mut events, mut unresolved) = (0, 0);
    for e in gens.iter().flat_map(|g| &g.events) {
        events += 1;
        match e.outcome {
            EventOutcome::Recovered { after } => *recovered.entry(after).or_insert(0) += 1,
            _ => unresolved += 1,
        }
    }
    let temporary_rate = (events > 0).then(|| 1.0 - unresolved as f64 / events as f64);
    let q = match temporary_rate {
        Some(r) if r >= 0.5 => 10,
        _ => 2,
    };
    Ok(QCalibration {
        generations: gens.len(),
        events,
        recovered,
        unresolved,
        temporary_rate,
        q,
    })
}

struct Arm {
    gens: Vec<Option<Generation>>,
}

/// Every scheme with and without rollback, attacked at each ε and scored
/// against shared unwatermarked negatives.
pub fn run_wm_bench(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let cfg = cfg.effective();
    let start = Instant::now();
    let res = cfg.resources()?;
    let spec = &cfg.watermark;
    let key = hex::decode(&spec.key).map_err(|e| HarnessError::Config(format!("watermark.key: {e}")))?;
    let lm = &*res.model;
    let tk = &res.tokenizer;
    let n = spec.samples as u32;

    let calibration = calibrate_q(&res, &cfg)?;
    let q = spec.rollback_q.unwrap_or(calibration.q);
    let prompts: Vec<(String, Vec<u32>)> = (0..n as u64).map(|i| res.prompt(&cfg.prompts, i)).collect::<Result<_, _>>()?;
    let negatives: Vec<Generation> = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = seed_for(b"wm-negative", cfg.seed, &[i]);
            Ok(generate_plain(lm, tk, &prompts[i as usize].1, spec.tokens, None, seed)?)
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut detect = Table::new(
        "detection",
        &[
            "scheme",
            "arm",
            "epsilon",
            "samples",
            "strength_mean",
            "negative_strength_mean",
            "auroc",
            "ppl",
            "consistent_fraction",
            "rollbacks_mean",
            "budget_failures",
            "q",
            "seed",
        ],
    );
    let mut overhead = Table::new(
        "overhead",
        &["scheme", "original_secs", "rollback_secs", "overhead", "consistent_runs", "consistent_overhead"],
    );

    for &kind in &spec.schemes {
        let mut sc = SchemeConfig::new(kind, &key, tk.vocab_size());
        sc.gamma = spec.gamma;
        sc.delta = spec.delta;
        let score = |text: &str, prompt: &str| -> Result<Option<f64>, HarnessError> {
            let p = spec.score_with_prompt.then_some(prompt);
            match score_text(&sc, tk, text, p) {
                Ok(t) => Ok(Some(t.strength)),
                Err(WatermarkError::InsufficientContext { .. }) => Ok(None),
                Err(e) => Err(e.into()),
            }
        };
        let neg: Vec<f64> = (0..n as usize)
            .into_par_iter()
            .map(|i| score(&negatives[i].text, &prompts[i].0))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();

        let mut arms = Vec::new();
        for rollback in [false, true] {
            let gens: Vec<Option<Generation>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let seed = seed_for(b"wm-positive", cfg.seed, &[i]);
                    let rb = rollback.then(|| RollbackState::new(q, spec.rollback_max));
                    match embed_watermark(lm, tk, &prompts[i as usize].1, &sc, spec.tokens, rb, seed) {
                        Ok(g) => Ok(Some(g)),
                        Err(WatermarkError::RollbackBudget { .. }) => Ok(None),
                        Err(e) => Err(e.into()),
                    }
                })
                .collect::<Result<_, HarnessError>>()?;
            arms.push(Arm { gens });
        }

        for (a, arm) in arms.iter().enumerate() {
            let done: Vec<(usize, &Generation)> = arm.gens.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (i, g))).collect();
            let ppl: Vec<f64> = done
                .par_iter()
                .map(|(i, g)| Ok(perplexity_of_ids(lm, &prompts[*i].1, &g.tokens)?.value))
                .collect::<Result<Vec<f64>, HarnessError>>()?
                .into_iter()
                .filter(|x| x.is_finite())
                .collect();
            let consistent = done.iter().filter(|(_, g)| g.consistent).count() as f64 / done.len().max(1) as f64;
            let rollbacks: Vec<f64> = done.iter().map(|(_, g)| g.rollbacks_used as f64).collect();
            for (ei, &eps) in spec.epsilons.iter().enumerate() {
                let pos: Vec<f64> = done
                    .par_iter()
                    .map(|(i, g)| {
                        let text = if eps == 0.0 {
                            g.text.clone()
                        } else {
                            let ac = AttackConfig {
                                epsilon: eps,
                                seed: seed_for(b"wm-attack", cfg.seed, &[*i as u32, ei as u32]),
                                model: lm,
                            };
                            tk.decode(&replace_ids(&ac, &prompts[*i].1, &g.tokens)?.ids)?
                        };
                        score(&text, &prompts[*i].0)
                    })
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter()
                    .flatten()
                    .collect();
                let au = if pos.is_empty() || neg.is_empty() { None } else { Some(auroc(&pos, &neg)?) };
                detect.push(vec![
                    json!(kind.name()),
                    json!(if a == 0 { "original" } else { "rollback" }),
                    json!(eps),
                    json!(pos.len()),
                    mean_value(&pos),
                    mean_value(&neg),
                    json!(au),
                    mean_value(&ppl),
                    json!(consistent),
                    mean_value(&rollbacks),
                    json!(arm.gens.len() - done.len()),
                    json!(if a == 0 { None } else { Some(q) }),
                    json!(cfg.seed),
                ]);
            }
        }

        let secs = |arm: &Arm, only: &dyn Fn(usize) -> bool| -> f64 {
            arm.gens.iter().enumerate().filter(|(i, _)| only(*i)).filter_map(|(_, g)| g.as_ref()).map(|g| g.runtime_secs).sum()
        };
        let all = |_: usize| true;
        let clean = |i: usize| arms[0].gens[i].as_ref().is_some_and(|g| g.events.is_empty()) && arms[1].gens[i].is_some();
        let (o, r) = (secs(&arms[0], &all), secs(&arms[1], &all));
        let (oc, rc) = (secs(&arms[0], &clean), secs(&arms[1], &clean));
        let clean_runs = (0..n as usize).filter(|&i| clean(i)).count();
        overhead.push(vec![
            json!(kind.name()),
            json!(o),
            json!(r),
            json!(r / o - 1.0),
            json!(clean_runs),
            json!(if clean_runs > 0 { Some(rc / oc - 1.0) } else { None }),
        ]);
    }

    let mut qtable = Table::new("q_calibration", &["tokens_until_consistent", "events", "disappeared_within"]);
    let max_n = calibration.recovered.keys().next_back().copied().unwrap_or(0);
    for k in 1..=max_n.max(q) {
        qtable.push(vec![
            json!(k),
            json!(calibration.recovered.get(&k).copied().unwrap_or(0)),
            json!(calibration.disappeared_within(k)),
        ]);
    }
    let mut summary = serde_json::Map::new();
    summary.insert("q".into(), json!(q));
    summary.insert("calibration".into(), serde_json::to_value(&calibration).expect("plain struct"));

    Ok(Report {
        experiment: "watermark".into(),
        config: cfg,
        environment: Environment::capture(),
        tables: vec![detect, overhead, qtable],
        summary,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
