use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use retok::attack::{replacement_attack, AttackConfig};
use retok::consistency::record_trace;
use retok::fixtures::FixtureSpec;
use retok::harness::{run_investigation, run_stego_bench, run_wm_bench, ExperimentConfig};
use retok::lm::{train_ngram, HashLm, LanguageModel, NGramLm, RemoteLm};
use retok::rng::sample_rng;
use retok::stego::{embed, extract, Codec, FilterKind, SecretMessage, StegoConfig};
use retok::tokenizer::{train_bpe_with, Tokenizer, TrainOptions};
use retok::watermark::{auroc, embed_watermark, score_text, RollbackState, SchemeConfig, SchemeKind};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Parser)]
#[command(name = "retok", version, about = "Tokenization-consistent steganography and watermarking")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train or inspect tokenizers.
    #[command(subcommand)]
    Tokenizer(TokenizerCmd),
    /// Train an n-gram model on a corpus.
    Ngram {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a built-in fixture (tokenizer.json, model.json, corpus.txt).
    Fixture {
        #[arg(long, default_value = "ambiguous")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a generation and write its per-step trace as JSON lines.
    Trace {
        #[command(flatten)]
        lm: LmArgs,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 100)]
        length: usize,
        #[arg(long, default_value_t = 64)]
        top_m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Hide and recover bit strings.
    #[command(subcommand)]
    Stego(StegoCmd),
    /// Watermark generation, detection and evaluation.
    #[command(subcommand)]
    Wm(WmCmd),
    /// Token-replacement attack on a text file.
    Attack {
        #[command(flatten)]
        lm: LmArgs,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run an experiment from a TOML config.
    Bench {
        #[arg(value_parser = ["investigate", "stego", "watermark"])]
        which: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TokenizerCmd {
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long = "special")]
        specials: Vec<String>,
        #[arg(long)]
        byte_fallback: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print token ids and surfaces for a text.
    Encode {
        #[arg(long)]
        tokenizer: PathBuf,
        text: String,
    },
}

#[derive(Args)]
struct LmArgs {
    #[arg(long)]
    tokenizer: PathBuf,
    /// N-gram file, `hash:CONTEXT:SHARPNESS:KEY`, or `tcp:HOST:PORT`.
    #[arg(long)]
    model: String,
}

#[derive(Args)]
struct StegoArgs {
    #[command(flatten)]
    lm: LmArgs,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value = "arith")]
    codec: Codec,
    #[arg(long, default_value = "stepwise")]
    filter: FilterKind,
    #[arg(long, default_value_t = 64)]
    top_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum StegoCmd {
    Embed {
        #[command(flatten)]
        s: StegoArgs,
        /// Hex, optionally suffixed `:BITS`.
        #[arg(long, required_unless_present = "messages", conflicts_with = "messages")]
        message: Option<SecretMessage>,
        /// File of messages, one per line; prints one JSON result per line.
        #[arg(long)]
        messages: Option<PathBuf>,
    },
    Extract {
        #[command(flatten)]
        s: StegoArgs,
        #[arg(long)]
        stegotext: String,
        /// Message length in bits.
        #[arg(long)]
        bits: usize,
    },
}

#[derive(Args)]
struct SchemeArgs {
    #[arg(long)]
    scheme: SchemeKind,
    #[arg(long)]
    key: String,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    /// Context width; the scheme's default when absent.
    #[arg(long)]
    h: Option<usize>,
}

impl SchemeArgs {
    fn config(&self, vocab: usize) -> Result<SchemeConfig> {
        let key = hex::decode(&self.key).with_context(|| format!("key {:?} is not hex", self.key))?;
        let mut c = SchemeConfig::new(self.scheme, &key, vocab);
        c.gamma = self.gamma;
        c.delta = self.delta;
        if let Some(h) = self.h {
            c.h = h;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum WmCmd {
    Embed {
        #[command(flatten)]
        lm: LmArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 200)]
        tokens: usize,
        #[arg(long)]
        rollback_q: Option<usize>,
        #[arg(long, default_value_t = retok::watermark::DEFAULT_MAX_ROLLBACKS)]
        rollback_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write embedding-time scores here as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    Detect {
        #[arg(long)]
        tokenizer: PathBuf,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, default_value_t = 4.0)]
        threshold: f64,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    Eval {
        #[arg(long)]
        tokenizer: PathBuf,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long)]
        pos: PathBuf,
        #[arg(long)]
        neg: PathBuf,
    },
}

fn load_tokenizer(p: &Path) -> Result<Tokenizer> {
    Tokenizer::load(p).with_context(|| format!("loading tokenizer {}", p.display()))
}

fn load_lm(spec: &str, vocab: usize) -> Result<Box<dyn LanguageModel>> {
    if let Some(rest) = spec.strip_prefix("hash:") {
        let parts: Vec<&str> = rest.splitn(3, ':').collect();
        let [ctx, sharp, key] = parts[..] else { bail!("expected hash:CONTEXT:SHARPNESS:KEY") };
        return Ok(Box::new(HashLm::new(vocab, ctx.parse()?, sharp.parse()?, key.as_bytes())));
    }
    if let Some(addr) = spec.strip_prefix("tcp:") {
        return Ok(Box::new(RemoteLm::connect(addr, vocab, Duration::from_secs(30))?));
    }
    let m = NGramLm::load(spec).with_context(|| format!("loading model {spec}"))?;
    if m.vocab_size() != vocab {
        bail!("model vocabulary {} differs from tokenizer vocabulary {vocab}", m.vocab_size());
    }
    Ok(Box::new(m))
}

fn open(lm: &LmArgs) -> Result<(Tokenizer, Box<dyn LanguageModel>)> {
    let tk = load_tokenizer(&lm.tokenizer)?;
    let model = load_lm(&lm.model, tk.vocab_size())?;
    Ok((tk, model))
}

fn print(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn texts_in(dir: &Path) -> Result<Vec<String>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    paths.iter().map(|p| std::fs::read_to_string(p).with_context(|| p.display().to_string())).collect()
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Tokenizer(TokenizerCmd::Train { corpus, vocab_size, specials, byte_fallback, out }) => {
            let text = std::fs::read_to_string(&corpus).with_context(|| corpus.display().to_string())?;
            let mut opts = TrainOptions::new(vocab_size);
            opts.specials = specials;
            opts.byte_fallback = byte_fallback;
            let tk = train_bpe_with(&text, &opts)?;
            tk.save(&out)?;
            eprintln!("{} tokens, {} merges", tk.vocab_size(), tk.merges().len());
        }
        Cmd::Tokenizer(TokenizerCmd::Encode { tokenizer, text }) => {
            let tk = load_tokenizer(&tokenizer)?;
            let seq = tk.encode(&text)?;
            let rows: Vec<_> = seq
                .ids
                .iter()
                .zip(&seq.spans)
                .map(|(id, s)| json!({"id": id, "surface": tk.display(*id), "start": s.start, "end": s.end}))
                .collect();
            print(&rows)?;
        }
        Cmd::Ngram { tokenizer, corpus, order, alpha, out } => {
            let tk = load_tokenizer(&tokenizer)?;
            let text = std::fs::read_to_string(&corpus).with_context(|| corpus.display().to_string())?;
            let seqs = text.lines().map(|l| tk.encode_ids(l)).collect::<Result<Vec<_>, _>>()?;
            train_ngram(&seqs, order, alpha, tk.vocab_size())?.save(&out)?;
        }
        Cmd::Fixture { name, out } => {
            let spec = match name.as_str() {
                "ambiguous" => FixtureSpec::ambiguous(),
                "temporary" => FixtureSpec::temporary(),
                other => bail!("unknown fixture {other:?}"),
            };
            let f = spec.build();
            std::fs::create_dir_all(&out)?;
            f.tokenizer.save(out.join("tokenizer.json"))?;
            f.model.save(out.join("model.json"))?;
            std::fs::write(out.join("corpus.txt"), &f.corpus)?;
        }
        Cmd::Trace { lm, prompt, length, top_m, seed } => {
            let (tk, model) = open(&lm)?;
            let ids = tk.encode_ids(&prompt)?;
            let trace = record_trace(&*model, &tk, &ids, length, top_m, &mut sample_rng(seed, 0))?;
            print!("{}", trace.to_jsonl());
        }
        Cmd::Stego(StegoCmd::Embed { s, message, messages }) => {
            let (tk, model) = open(&s.lm)?;
            let mut cfg = StegoConfig::new(s.codec, s.filter, s.top_k);
            cfg.sampling.seed = s.seed;
            let prompt = tk.encode_ids(&s.prompt)?;
            match (message, messages) {
                (Some(m), _) => print(&embed(&*model, &tk, &prompt, &m, &cfg)?)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
                    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                        let m: SecretMessage = line.parse().map_err(|e| anyhow::anyhow!("line {}: {e}", n + 1))?;
                        println!("{}", serde_json::to_string(&embed(&*model, &tk, &prompt, &m, &cfg)?)?);
                    }
                }
                (None, None) => unreachable!("clap requires one of them"),
            }
        }
        Cmd::Stego(StegoCmd::Extract { s, stegotext, bits }) => {
            let (tk, model) = open(&s.lm)?;
            let mut cfg = StegoConfig::new(s.codec, s.filter, s.top_k);
            cfg.sampling.seed = s.seed;
            let prompt = tk.encode_ids(&s.prompt)?;
            let m = extract(&*model, &tk, &prompt, &stegotext, &cfg, Some(bits))?;
            print(&json!({ "message": m }))?;
        }
        Cmd::Wm(WmCmd::Embed { lm, scheme, prompt, tokens, rollback_q, rollback_max, seed, trace }) => {
            let (tk, model) = open(&lm)?;
            let cfg = scheme.config(tk.vocab_size())?;
            let ids = tk.encode_ids(&prompt)?;
            let rb = rollback_q.map(|q| RollbackState::new(q, rollback_max));
            let g = embed_watermark(&*model, &tk, &ids, &cfg, tokens, rb, seed)?;
            if let (Some(path), Some(t)) = (trace, &g.trace) {
                std::fs::write(&path, t.to_jsonl()).with_context(|| path.display().to_string())?;
            }
            print(&json!({
                "text": g.text,
                "tokens": g.tokens.len(),
                "strength": g.trace.as_ref().map(|t| t.strength),
                "consistent": g.consistent,
                "rollbacks": g.rollbacks_used,
                "events": g.events,
                "runtime_secs": g.runtime_secs,
            }))?;
        }
        Cmd::Wm(WmCmd::Detect { tokenizer, scheme, input, prompt, threshold, trace }) => {
            let tk = load_tokenizer(&tokenizer)?;
            let cfg = scheme.config(tk.vocab_size())?;
            let text = std::fs::read_to_string(&input).with_context(|| input.display().to_string())?;
            let t = score_text(&cfg, &tk, &text, prompt.as_deref())?;
            if let Some(path) = trace {
                std::fs::write(&path, t.to_jsonl()).with_context(|| path.display().to_string())?;
            }
            print(&json!({
                "strength": t.strength,
                "scored_positions": t.scored_positions,
                "threshold": threshold,
                "watermarked": t.strength > threshold,
            }))?;
        }
        Cmd::Wm(WmCmd::Eval { tokenizer, scheme, pos, neg }) => {
            let tk = load_tokenizer(&tokenizer)?;
            let cfg = scheme.config(tk.vocab_size())?;
            let score = |dir: &Path| -> Result<Vec<f64>> {
                texts_in(dir)?.iter().map(|t| Ok(score_text(&cfg, &tk, t, None)?.strength)).collect()
            };
            let (p, n) = (score(&pos)?, score(&neg)?);
            print(&json!({ "auroc": auroc(&p, &n)?, "positives": p.len(), "negatives": n.len() }))?;
        }
        Cmd::Attack { lm, epsilon, seed, input, output } => {
            let (tk, model) = open(&lm)?;
            let text = std::fs::read_to_string(&input).with_context(|| input.display().to_string())?;
            let cfg = AttackConfig { epsilon, seed, model: &*model };
            let out = replacement_attack(&cfg, &tk, &text)?;
            match output {
                Some(p) => std::fs::write(&p, out).with_context(|| p.display().to_string())?,
                None => print!("{out}"),
            }
        }
        Cmd::Bench { which, config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = match which.as_str() {
                "investigate" => run_investigation(&cfg)?,
                "stego" => run_stego_bench(&cfg)?,
                _ => run_wm_bench(&cfg)?,
            };
            report.write(&out)?;
            eprintln!("wrote {} ({:.1}s)", out.display(), report.runtime_secs);
        }
    }
    Ok(())
}
