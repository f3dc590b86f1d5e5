//! Random token replacement against a LeftHash watermark at increasing
//! attack strength.

use retok::attack::{replacement_attack, AttackConfig};
use retok::fixtures;
use retok::watermark::{embed_watermark, score_text, SchemeConfig, SchemeKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let cfg = SchemeConfig::new(SchemeKind::LeftHash, b"example-key", tk.vocab_size());
    let prompt = fx.prompt(3, 10);
    let g = embed_watermark(&fx.model, tk, &prompt, &cfg, 200, None, 9)?;
    for eps in [0.0, 0.1, 0.2, 0.4, 0.8] {
        let strengths: Vec<f64> = (0..20)
            .map(|seed| {
                let attack = AttackConfig { epsilon: eps, seed, model: &fx.model };
                let text = replacement_attack(&attack, tk, &g.text)?;
                Ok(score_text(&cfg, tk, &text, None)?.strength)
            })
            .collect::<Result<_, Box<dyn std::error::Error>>>()?;
        println!("ε={eps:.1}: mean strength {:.2}", strengths.iter().sum::<f64>() / strengths.len() as f64);
    }
    Ok(())
}
