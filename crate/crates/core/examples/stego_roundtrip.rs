//! Hide a 128-bit message with arithmetic coding and stepwise verification,
//! then recover it from the text alone.

use retok::fixtures;
use retok::rng::sample_rng;
use retok::stego::{embed, extract, Codec, FilterKind, SecretMessage, StegoConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let prompt = fx.prompt(0, 10);
    let message = SecretMessage::random(128, &mut sample_rng(1, 0));
    println!("prompt  {:?}", tk.decode(&prompt)?);
    println!("message {}", message.to_hex());

    for codec in [Codec::Arithmetic, Codec::Huffman] {
        let cfg = StegoConfig::new(codec, FilterKind::Stepwise, 64);
        let out = embed(&fx.model, tk, &prompt, &message, &cfg)?;
        let back = extract(&fx.model, tk, &prompt, &out.stegotext, &cfg, Some(message.len()))?;
        println!(
            "\n{}: {} tokens, {:.2} bits/token, mean KLD {:.5}",
            codec.name(),
            out.token_count,
            out.bpt,
            out.mean_kld()
        );
        println!("{:?}", out.stegotext);
        println!("recovered {} ({})", back.to_hex(), if back == message { "ok" } else { "MISMATCH" });
    }
    Ok(())
}
