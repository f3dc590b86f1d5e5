use proptest::prelude::*;
use retok::fixtures;
use retok::tokenizer::{Merge, Span, Tokenizer, DEFAULT_MARKER};

fn small() -> Tokenizer {
    let s = |x: &str| x.as_bytes().to_vec();
    Tokenizer::from_parts(
        vec![s("<s>"), s("a"), s("b"), s("ab"), s("ba"), vec![DEFAULT_MARKER], s("bab")],
        vec![
            Merge { left: 1, right: 2, merged: 3 },
            Merge { left: 2, right: 1, merged: 4 },
            Merge { left: 2, right: 3, merged: 6 },
        ],
        [0],
        DEFAULT_MARKER,
        false,
    )
    .unwrap()
}

#[test]
fn merges_apply_in_rank_order() {
    let tk = small();
    // "ab" ranks above "ba", so "bab" comes from b+ab
    assert_eq!(tk.encode_ids("bab").unwrap(), vec![6]);
    assert_eq!(tk.encode_ids("aba").unwrap(), vec![3, 1]);
    assert_eq!(tk.decode(&[4, 2]).unwrap(), "bab");
}

#[test]
fn special_tokens_have_empty_spans() {
    let tk = small();
    let seq = tk.sequence(vec![0, 3, 0, 1], retok::tokenizer::Source::Generated).unwrap();
    assert_eq!(seq.spans, vec![Span::new(0, 0), Span::new(0, 2), Span::new(2, 2), Span::new(2, 3)]);
    assert_eq!(tk.decode(&[0, 3, 0, 1]).unwrap(), "aba");
}

#[test]
fn unknown_ids_are_rejected() {
    let tk = small();
    assert!(tk.decode(&[99]).is_err());
    assert!(tk.encode("abc").is_err());
}

#[test]
fn file_round_trip_preserves_encoding() {
    let fx = fixtures::temporary();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tk.json");
    fx.tokenizer.save(&path).unwrap();
    let back = Tokenizer::load(&path).unwrap();
    assert_eq!(back.vocab_size(), fx.tokenizer.vocab_size());
    assert!(back.byte_fallback());
    for i in 0..50 {
        let text = fixtures::prompt_text(&fx.corpus, i, 30);
        assert_eq!(back.encode_ids(&text).unwrap(), fx.tokenizer.encode_ids(&text).unwrap());
    }
}

#[test]
fn byte_fallback_covers_unseen_characters() {
    let tk = &fixtures::temporary().tokenizer;
    let text = " ωμέγα ☃";
    let ids = tk.encode_ids(text).unwrap();
    assert_eq!(tk.decode(&ids).unwrap(), text);
}

fn corpus_text() -> impl Strategy<Value = String> {
    let words: Vec<&'static str> = fixtures::corpus(1, 200)
        .split_whitespace()
        .map(|w| &*Box::leak(w.to_string().into_boxed_str()))
        .collect();
    prop::collection::vec(prop::sample::select(words), 0..30).prop_map(|ws| {
        ws.iter().map(|w| format!(" {w}")).collect::<String>()
    })
}

proptest! {
    #[test]
    fn encode_then_decode_is_identity(text in corpus_text()) {
        let tk = &fixtures::ambiguous().tokenizer;
        let seq = tk.encode(&text).unwrap();
        prop_assert_eq!(tk.decode(&seq.ids).unwrap(), text.clone());
        // spans tile the text
        let mut at = 0;
        for (id, s) in seq.ids.iter().zip(&seq.spans) {
            prop_assert_eq!(s.start, at);
            prop_assert_eq!(&text.as_bytes()[s.start..s.end], tk.rendered(*id).unwrap());
            at = s.end;
        }
        prop_assert_eq!(at, text.len());
    }

    #[test]
    fn encoding_is_idempotent(text in corpus_text()) {
        let tk = &fixtures::ambiguous().tokenizer;
        let ids = tk.encode_ids(&text).unwrap();
        prop_assert_eq!(tk.encode_ids(&tk.decode(&ids).unwrap()).unwrap(), ids);
    }

    #[test]
    fn arbitrary_text_round_trips_with_byte_fallback(text in "\\PC{0,40}") {
        let tk = &fixtures::temporary().tokenizer;
        let ids = tk.encode_ids(&text).unwrap();
        prop_assert_eq!(tk.decode(&ids).unwrap(), text);
    }
}
