use super::stats::cochran_armitage;
use super::{Environment, ExperimentConfig, HarnessError, Report, Table};
use crate::consistency::{aggregate_rates, record_trace, GenerationTrace};
use crate::rng::sample_rng;
use rayon::prelude::*;
use serde_json::json;
use std::time::Instant;

/// Rates of inconsistency per generation length, persistence histograms,
/// and a trend test on the text-level rate.
pub fn run_investigation(cfg: &ExperimentConfig) -> Result<Report, HarnessError> {
    let cfg = cfg.effective();
    let start = Instant::now();
    let res = cfg.resources()?;
    let spec = &cfg.investigate;
    let mut rates = Table::new(
        "rates",
        &[
            "length",
            "samples",
            "text_level",
            "token_level",
            "candidate_number_ratio",
            "candidate_prob_ratio",
            "temporary_rate",
            "it_events",
            "seed",
        ],
    );
    let mut persistence = Table::new("persistence", &["length", "tokens_until_consistent", "fraction"]);
    let (mut bad, mut totals) = (Vec::new(), Vec::new());

    for (cell, &length) in spec.lengths.iter().enumerate() {
        let traces: Vec<GenerationTrace> = (0..spec.samples as u64)
            .into_par_iter()
            .map(|i| {
                let (_, prompt) = res.prompt(&cfg.prompts, i)?;
                let mut rng = sample_rng(cfg.seed, ((cell as u64) << 32) | i);
                Ok(record_trace(&*res.model, &res.tokenizer, &prompt, length, spec.top_m, &mut rng)?)
            })
            .collect::<Result<_, HarnessError>>()?;
        let agg = aggregate_rates(&traces, spec.top_m)?;
        rates.push(vec![
            json!(length),
            json!(agg.traces),
            json!(agg.text_level),
            json!(agg.token_level),
            json!(agg.candidate_number_ratio),
            json!(agg.candidate_prob_ratio),
            json!(agg.temporary_rate),
            json!(agg.it_events),
            json!(cfg.seed),
        ]);
        for (k, f) in &agg.persistence_histogram {
            persistence.push(vec![json!(length), json!(k.to_string()), json!(f)]);
        }
        bad.push(traces.iter().filter(|t| !t.summary.consistent).count() as u64);
        totals.push(traces.len() as u64);
    }

    let mut summary = serde_json::Map::new();
    if spec.lengths.len() >= 2 {
        let scores: Vec<f64> = spec.lengths.iter().map(|&l| l as f64).collect();
        let trend = cochran_armitage(&bad, &totals, &scores);
        summary.insert("text_level_trend_z".into(), json!(trend.statistic));
        summary.insert("text_level_trend_p".into(), json!(trend.p_value));
    }
    Ok(Report {
        experiment: "investigate".into(),
        config: cfg,
        environment: Environment::capture(),
        tables: vec![rates, persistence],
        summary,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
