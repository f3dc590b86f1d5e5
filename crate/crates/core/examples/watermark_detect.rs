//! Embed with each scheme, score watermarked and plain text, and report
//! AUROC.

use retok::fixtures;
use retok::watermark::{auroc, embed_watermark, generate_plain, score_text, SchemeConfig, SchemeKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let n = 100;
    let prompts: Vec<(String, Vec<u32>)> = (0..n)
        .map(|i| {
            let text = fixtures::prompt_text(&fx.corpus, i * 7, 10);
            let ids = tk.encode_ids(&text).expect("corpus text encodes");
            (text, ids)
        })
        .collect();

    for kind in SchemeKind::ALL {
        let cfg = SchemeConfig::new(kind, b"example-key", tk.vocab_size());
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (i, (text, ids)) in prompts.iter().enumerate() {
            let marked = embed_watermark(&fx.model, tk, ids, &cfg, 100, None, i as u64)?;
            let plain = generate_plain(&fx.model, tk, ids, 100, None, 10_000 + i as u64)?;
            pos.push(score_text(&cfg, tk, &marked.text, Some(text))?.strength);
            neg.push(score_text(&cfg, tk, &plain.text, Some(text))?.strength);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "{:<9} watermarked {:>6.2}  plain {:>6.2}  auroc {:.3}",
            kind.name(),
            mean(&pos),
            mean(&neg),
            auroc(&pos, &neg)?
        );
    }
    Ok(())
}
