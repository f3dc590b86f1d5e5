//! Serve a model over the line-delimited JSON protocol and drive stego
//! through the client; the result matches the local model exactly.

use retok::fixtures;
use retok::lm::{spawn_tcp_server, LanguageModel, RemoteLm};
use retok::stego::{embed, extract, Codec, FilterKind, SecretMessage, StegoConfig};
use std::sync::Arc;
use std::time::Duration;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = fixtures::ambiguous();
    let tk = &fx.tokenizer;
    let model: Arc<dyn LanguageModel> = Arc::new(fx.model.clone());
    let (addr, _server) = spawn_tcp_server(model)?;
    println!("serving on {addr}");

    let remote = RemoteLm::connect(addr, tk.vocab_size(), Duration::from_secs(5))?;
    let prompt = fx.prompt(1, 10);
    let message = SecretMessage::from_bytes(b"remote");
    let cfg = StegoConfig::new(Codec::Arithmetic, FilterKind::Stepwise, 32);

    let over_wire = embed(&remote, tk, &prompt, &message, &cfg)?;
    let local = embed(&fx.model, tk, &prompt, &message, &cfg)?;
    assert_eq!(over_wire.tokens, local.tokens);
    let back = extract(&remote, tk, &prompt, &over_wire.stegotext, &cfg, Some(message.len()))?;
    println!("{:?}", over_wire.stegotext);
    println!("recovered {:?}", String::from_utf8_lossy(&back.to_bytes()));
    Ok(())
}
