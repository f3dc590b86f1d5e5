//! Train a small BPE tokenizer, look at spans, and find a token list that
//! does not survive decode -> encode.

use retok::consistency::roundtrip_consistent;
use retok::fixtures;
use retok::tokenizer::{train_bpe, Tokenizer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = fixtures::corpus(3, 2000);
    let tk = train_bpe(&corpus, 400, &["<s>", "</s>"])?;
    println!("vocab {} merges {}", tk.vocab_size(), tk.merges().len());

    let text = fixtures::prompt_text(&corpus, 0, 6);
    let text = text.as_str();
    let seq = tk.encode(text)?;
    for (id, span) in seq.ids.iter().zip(&seq.spans) {
        println!("{id:>4} {span:<8} {:?}", &text[span.start..span.end]);
    }
    assert_eq!(tk.decode(&seq.ids)?, text);

    // split the first multi-character token into its pieces
    if let Some(ids) = split_first(&tk, &seq.ids) {
        println!("split {:?} -> {:?}", seq.ids, ids);
        println!("decodes to {:?}, round-trips: {}", tk.decode(&ids)?, roundtrip_consistent(&tk, &ids));
    }

    let path = std::env::temp_dir().join("retok-example-tokenizer.json");
    tk.save(&path)?;
    let back = Tokenizer::load(&path)?;
    assert_eq!(back.encode_ids(text)?, seq.ids);
    println!("saved and reloaded {}", path.display());
    Ok(())
}

fn split_first(tk: &Tokenizer, ids: &[u32]) -> Option<Vec<u32>> {
    let (i, merge) = ids
        .iter()
        .enumerate()
        .find_map(|(i, &id)| tk.merges().iter().find(|m| m.merged == id).map(|m| (i, m)))?;
    let mut out = ids[..i].to_vec();
    out.extend([merge.left, merge.right]);
    out.extend(&ids[i + 1..]);
    Some(out)
}
