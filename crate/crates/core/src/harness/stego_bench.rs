use super::{mean_value, Environment, ExperimentConfig, HarnessError, Report, Table, MIN_SAMPLES};
use crate::lm::perplexity_of_ids;
use crate::rng::sample_rng;
use crate::stego::{embed, extract, SecretMessage, StegoConfig};
use rayon::prelude::*;
use serde_json::json;
use std::collections::BTreeMap;
use std::time::Instant;

#[derive(Debug, Clone, Copy)]
struct Sample {
    top_k: usize,
    embedded: bool,
    correct: bool,
    bpt: f64,
    kld: f64,
    ppl: f64,
    secs: f64,
}

/// Every (codec, filter, top-k) cell over shared prompts and messages,
/// then the same rows regrouped by bits-per-token interval.
pub fn run_stego_bench(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let cfg = cfg.effective();
    let start = Instant::now();
    let res = cfg.resources()?;
    let spec = &cfg.stego;
    let mut cells = Table::new(
        "cells",
        &[
            "codec",
            "filter",
            "top_k",
            "samples",
            "embed_failures",
            "extraction_errors",
            "error_rate",
            "ppl",
            "kld",
            "bpt",
            "time_secs",
            "seed",
        ],
    );
    let mut by_method: BTreeMap<(usize, usize), Vec<Sample>> = BTreeMap::new();

    for (ci, &codec) in spec.codecs.iter().enumerate() {
        for (fi, &filter) in spec.filters.iter().enumerate() {
            for &top_k in &spec.top_k {
                let mut sc = StegoConfig::new(codec, filter, top_k);
                sc.precision = spec.precision;
                let rows: Vec<Sample> = (0..spec.samples as u64)
                    .into_par_iter()
                    .map(|i| run_one(&res, &cfg, &sc, i))
                    .collect::<Result<_, HarnessError>>()?;
                let done: Vec<&Sample> = rows.iter().filter(|r| r.embedded).collect();
                let errors = done.iter().filter(|r| !r.correct).count();
                let pick = |f: fn(&Sample) -> f64| -> Vec<f64> { done.iter().map(|r| f(r)).filter(|x| x.is_finite()).collect() };
                cells.push(vec![
                    json!(codec.name()),
                    json!(filter.name()),
                    json!(top_k),
                    json!(rows.len()),
                    json!(rows.len() - done.len()),
                    json!(errors),
                    json!(if done.is_empty() { 0.0 } else { errors as f64 / done.len() as f64 }),
                    mean_value(&pick(|r| r.ppl)),
                    mean_value(&pick(|r| r.kld)),
                    mean_value(&pick(|r| r.bpt)),
                    mean_value(&pick(|r| r.secs)),
                    json!(cfg.seed),
                ]);
                by_method.entry((ci, fi)).or_default().extend(rows.into_iter().filter(|r| r.embedded));
            }
        }
    }

    let mut buckets = Table::new(
        "buckets",
        &["codec", "filter", "bpt_low", "bpt_high", "samples", "insufficient", "error_rate", "ppl", "kld", "bpt", "time_secs", "top_k_counts"],
    );
    for ((ci, fi), rows) in &by_method {
        for w in spec.bpt_bounds.windows(2) {
            let inside: Vec<&Sample> = rows.iter().filter(|r| r.bpt >= w[0] && r.bpt < w[1]).collect();
            let insufficient = inside.len() <= MIN_SAMPLES;
            let mut provenance: BTreeMap<usize, usize> = BTreeMap::new();
            for r in &inside {
                *provenance.entry(r.top_k).or_default() += 1;
            }
            let provenance = provenance.iter().map(|(k, n)| format!("{k}:{n}")).collect::<Vec<_>>().join(";");
            let avg = |f: fn(&Sample) -> f64| {
                if insufficient {
                    serde_json::Value::Null
                } else {
                    mean_value(&inside.iter().map(|r| f(r)).filter(|x| x.is_finite()).collect::<Vec<_>>())
                }
            };
            let err = (!insufficient).then(|| inside.iter().filter(|r| !r.correct).count() as f64 / inside.len() as f64);
            buckets.push(vec![
                json!(spec.codecs[*ci].name()),
                json!(spec.filters[*fi].name()),
                json!(w[0]),
                json!(w[1]),
                json!(inside.len()),
                json!(insufficient),
                json!(err),
                avg(|r| r.ppl),
                avg(|r| r.kld),
                avg(|r| r.bpt),
                avg(|r| r.secs),
                json!(provenance),
            ]);
        }
    }

    Ok(Report {
        experiment: "stego".into(),
        config: cfg,
        environment: Environment::capture(),
        tables: vec![cells, buckets],
        summary: serde_json::Map::new(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

fn run_one(res: &super::Resources, cfg: &ExperimentConfig, sc: &StegoConfig, i: u64) -> Result<Sample, HarnessError> {
    let (_, prompt) = res.prompt(&cfg.prompts, i)?;
    let message = SecretMessage::random(cfg.stego.message_bits, &mut sample_rng(cfg.seed, i));
    let lm = &*res.model;
    let mut s = Sample {
        top_k: sc.sampling.top_k,
        embedded: false,
        correct: false,
        bpt: 0.0,
        kld: 0.0,
        ppl: f64::NAN,
        secs: 0.0,
    };
    let Ok(out) = embed(lm, &res.tokenizer, &prompt, &message, sc) else {
        return Ok(s);
    };
    s.embedded = true;
    s.correct = extract(lm, &res.tokenizer, &prompt, &out.stegotext, sc, Some(message.len()))
        .is_ok_and(|m| m == message);
    s.bpt = out.bpt;
    s.kld = out.mean_kld();
    s.secs = out.runtime_secs;
    if !out.tokens.is_empty() {
        s.ppl = perplexity_of_ids(lm, &prompt, &out.tokens)?.value;
    }
    Ok(s)
}

