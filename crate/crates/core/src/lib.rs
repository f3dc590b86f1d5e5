pub mod attack;
pub mod consistency;
pub mod fixtures;
pub mod harness;
pub mod lm;
pub mod rng;
pub mod stego;
pub mod tokenizer;
pub mod watermark;
