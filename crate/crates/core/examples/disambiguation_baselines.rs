//! Compare the four candidate filters on the same messages: extraction
//! errors and the distortion each one introduces.

use retok::fixtures;
use retok::rng::sample_rng;
use retok::stego::{embed, extract, Codec, FilterKind, SecretMessage, StegoConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let n = 100;
    println!("{:<9} {:>7} {:>8} {:>9}", "filter", "errors", "bpt", "kld");
    for filter in [FilterKind::None, FilterKind::Stepwise, FilterKind::Basic, FilterKind::Mwis] {
        let cfg = StegoConfig::new(Codec::Arithmetic, filter, 64);
        let (mut errors, mut bpt, mut kld) = (0, 0.0, 0.0);
        for i in 0..n {
            let prompt = fx.prompt(i, 10);
            let message = SecretMessage::random(64, &mut sample_rng(2, i as u64));
            let out = embed(&fx.model, tk, &prompt, &message, &cfg)?;
            let ok = extract(&fx.model, tk, &prompt, &out.stegotext, &cfg, Some(64)).is_ok_and(|m| m == message);
            errors += usize::from(!ok);
            bpt += out.bpt;
            kld += out.mean_kld();
        }
        println!("{:<9} {:>7} {:>8.3} {:>9.5}", filter.name(), errors, bpt / n as f64, kld / n as f64);
    }
    Ok(())
}
