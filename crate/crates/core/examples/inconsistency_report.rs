//! Sample from the ambiguous fixture, report where the round trip breaks,
//! and aggregate rates over a batch of traces.

use retok::consistency::{aggregate_rates, record_trace, report_for};
use retok::fixtures;
use retok::rng::sample_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;

    let mut traces = Vec::new();
    for i in 0..200 {
        let prompt = fx.prompt(i, 10);
        let trace = record_trace(&fx.model, tk, &prompt, 100, 64, &mut sample_rng(5, i as u64))?;
        if !trace.summary.consistent && traces.iter().all(|t: &retok::consistency::GenerationTrace| t.summary.consistent) {
            let ids: Vec<u32> = prompt.iter().copied().chain(trace.steps.iter().map(|s| s.emitted)).collect();
            let (report, retok) = report_for(tk, &ids)?;
            println!("first inconsistent sample: #{i}");
            for &g in &report.i_sit {
                println!("  generated   {:>3} {:?}", g, tk.display(ids[g]));
            }
            for &r in &report.i_cit {
                println!("  retokenized {:>3} {:?}", r, tk.display(retok.ids[r]));
            }
        }
        traces.push(trace);
    }

    let agg = aggregate_rates(&traces, 64)?;
    println!("text-level      {:.3}", agg.text_level);
    println!("token-level     {:.4}", agg.token_level);
    println!("candidate share {:.4} (prob {:.4})", agg.candidate_number_ratio, agg.candidate_prob_ratio);
    println!("IT events       {}", agg.it_events);
    for (k, f) in &agg.persistence_histogram {
        println!("  persists {k:>3}: {f:.3}");
    }
    Ok(())
}
