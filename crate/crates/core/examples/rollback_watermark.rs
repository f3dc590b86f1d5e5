//! Watermark generation with the rollback loop on both fixtures: every text
//! ends consistent, and temporary inconsistencies are given time to clear.

use retok::consistency::roundtrip_consistent;
use retok::fixtures::{self, Fixture};
use retok::watermark::{embed_watermark, EventOutcome, RollbackState, SchemeConfig, SchemeKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run("ambiguous", fixtures::ambiguous(), 2)?;
    run("temporary", fixtures::temporary(), 10)?;
    Ok(())
}

fn run(name: &str, fx: &Fixture, q: usize) -> Result<(), Box<dyn std::error::Error>> {
    let tk = &fx.tokenizer;
    let cfg = SchemeConfig::new(SchemeKind::LeftHash, b"example-key", tk.vocab_size());
    let (mut plain_bad, mut consistent, mut recovered, mut rolled, mut forced) = (0, 0, 0, 0, 0);
    let n = 100;
    for i in 0..n {
        let prompt = fx.prompt(i, 10);
        let plain = embed_watermark(&fx.model, tk, &prompt, &cfg, 200, None, i as u64)?;
        plain_bad += usize::from(!plain.consistent);
        let g = embed_watermark(&fx.model, tk, &prompt, &cfg, 200, Some(RollbackState::new(q, 32)), i as u64)?;
        let mut all = prompt.clone();
        all.extend(&g.tokens);
        consistent += usize::from(g.consistent && roundtrip_consistent(tk, &all));
        for e in &g.events {
            match e.outcome {
                EventOutcome::Recovered { .. } => recovered += 1,
                EventOutcome::RolledBack { forced: f, .. } => {
                    rolled += 1;
                    forced += usize::from(f);
                }
                EventOutcome::Open => {}
            }
        }
    }
    println!("{name} (q={q}): without rollback {plain_bad}/{n} inconsistent");
    println!("  with rollback {consistent}/{n} consistent; {recovered} cleared on their own, {rolled} rolled back ({forced} at the end)");
    Ok(())
}
