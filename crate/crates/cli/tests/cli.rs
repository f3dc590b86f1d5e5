use serde_json::Value;
use std::path::Path;
use std::process::Command;

fn retok(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_retok")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

fn export(dir: &Path) -> (String, String) {
    let out = dir.join("fx");
    retok(&["fixture", "--name", "ambiguous", "--out", out.to_str().unwrap()]);
    let p = |f: &str| out.join(f).to_str().unwrap().to_string();
    (p("tokenizer.json"), p("model.json"))
}

#[test]
fn stego_and_watermark_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let (tk, lm) = export(dir.path());
    let prompt = " the day was long and the water";

    let e = json(&retok(&[
        "stego", "embed", "--tokenizer", &tk, "--model", &lm, "--prompt", prompt, "--message", "c0ffee",
    ]));
    let stegotext = e["stegotext"].as_str().unwrap();
    let x = json(&retok(&[
        "stego", "extract", "--tokenizer", &tk, "--model", &lm, "--prompt", prompt, "--stegotext", stegotext, "--bits", "24",
    ]));
    assert_eq!(x["message"], "c0ffee");

    let file = dir.path().join("messages.txt");
    std::fs::write(&file, "00ff\n\nabc:12\n").unwrap();
    let lines = retok(&[
        "stego", "embed", "--tokenizer", &tk, "--model", &lm, "--prompt", prompt, "--messages", file.to_str().unwrap(),
    ]);
    let bits: Vec<u64> = lines.lines().map(|l| json(l)["message_bits"].as_u64().unwrap()).collect();
    assert_eq!(bits, vec![16, 12]);

    let trace = dir.path().join("trace.jsonl");
    let w = json(&retok(&[
        "wm", "embed", "--tokenizer", &tk, "--model", &lm, "--scheme", "lefthash", "--key", "6b6579", "--prompt", prompt,
        "--tokens", "120", "--rollback-q", "2", "--trace", trace.to_str().unwrap(),
    ]));
    assert_eq!(w["consistent"], true);
    let text = dir.path().join("text.txt");
    std::fs::write(&text, w["text"].as_str().unwrap()).unwrap();
    let d = json(&retok(&[
        "wm", "detect", "--tokenizer", &tk, "--scheme", "lefthash", "--key", "6b6579", "--input", text.to_str().unwrap(),
        "--prompt", prompt,
    ]));
    assert_eq!(d["watermarked"], true);
    // consistent output: the detector sees exactly the embedding-time scores
    assert!((d["strength"].as_f64().unwrap() - w["strength"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count() as u64, d["scored_positions"].as_u64().unwrap());
}

#[test]
fn attack_and_trace_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (tk, lm) = export(dir.path());
    let input = dir.path().join("in.txt");
    std::fs::write(&input, " the day was long and the water was cold").unwrap();
    let same = retok(&["attack", "--tokenizer", &tk, "--model", &lm, "--epsilon", "0", "--input", input.to_str().unwrap()]);
    assert_eq!(same, " the day was long and the water was cold");

    let lines = retok(&["trace", "--tokenizer", &tk, "--model", "hash:2:1:k", "--prompt", " the", "--length", "12", "--top-m", "4"]);
    assert!(lines.lines().count() >= 12);
    for l in lines.lines() {
        json(l);
    }
}

#[test]
fn bad_inputs_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_retok"))
        .args(["wm", "detect", "--tokenizer", "/nonexistent", "--scheme", "lefthash", "--key", "00", "--input", "/x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).contains("panicked"));
}
