use super::{piece_ends, Merge, TokenId, Tokenizer, TokenizerError, DEFAULT_MARKER};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Total vocabulary including specials and the base alphabet.
    pub vocab_size: usize,
    pub specials: Vec<String>,
    pub marker: u8,
    /// Adds all 256 single-byte tokens; characters outside the alphabet are
    /// then encoded byte by byte instead of failing.
    pub byte_fallback: bool,
    /// With byte fallback, non-ASCII characters rarer than this are left to
    /// the byte tokens.
    pub min_char_count: usize,
}

impl TrainOptions {
    pub fn new(vocab_size: usize) -> Self {
        TrainOptions {
            vocab_size,
            specials: Vec::new(),
            marker: DEFAULT_MARKER,
            byte_fallback: false,
            min_char_count: 1,
        }
    }
}

/// Trains on `corpus`, one training line per input line.
pub fn train_bpe(corpus: &str, vocab_size: usize, specials: &[&str]) -> Result<Tokenizer, TokenizerError> {
    let mut opts = TrainOptions::new(vocab_size);
    opts.specials = specials.iter().map(|s| s.to_string()).collect();
    train_bpe_with(corpus, &opts)
}

pub fn train_bpe_with(corpus: &str, opts: &TrainOptions) -> Result<Tokenizer, TokenizerError> {
    let marker = opts.marker;
    let mut piece_counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    let mut char_counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for line in corpus.lines() {
        if line.bytes().any(|b| b == marker && marker != b' ') {
            let offset = corpus.find(char::from(marker)).unwrap_or(0);
            return Err(TokenizerError::Unencodable { offset, byte: marker });
        }
        let bytes = line.as_bytes();
        let mut start = 0;
        for end in piece_ends(bytes) {
            let piece = &line[start..end];
            let mut raw = Vec::with_capacity(piece.len());
            let mut buf = [0u8; 4];
            for ch in piece.chars() {
                let c: &[u8] = if ch == ' ' {
                    buf[0] = marker;
                    &buf[..1]
                } else {
                    ch.encode_utf8(&mut buf).as_bytes()
                };
                *char_counts.entry(c.to_vec()).or_default() += 1;
                raw.extend_from_slice(c);
            }
            *piece_counts.entry(raw).or_default() += 1;
            start = end;
        }
    }
    if piece_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut alphabet: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut byte_tokens: BTreeSet<Vec<u8>> = BTreeSet::new();
    if opts.byte_fallback {
        for b in 0u8..=0x7f {
            alphabet.insert(vec![b]);
        }
        for b in 0x80u8..=0xff {
            byte_tokens.insert(vec![b]);
        }
        for (c, &n) in &char_counts {
            if c.len() > 1 && n as usize >= opts.min_char_count {
                alphabet.insert(c.clone());
            }
        }
    } else {
        alphabet.extend(char_counts.keys().cloned());
    }

    let required = opts.specials.len() + alphabet.len() + byte_tokens.len();
    if opts.vocab_size < required {
        return Err(TokenizerError::VocabTooSmall {
            vocab_size: opts.vocab_size,
            required,
        });
    }

    let mut surfaces: Vec<Vec<u8>> = Vec::with_capacity(opts.vocab_size);
    let mut index: HashMap<Vec<u8>, TokenId> = HashMap::new();
    for s in &opts.specials {
        if index.insert(s.as_bytes().to_vec(), surfaces.len() as TokenId).is_some() || s.is_empty() {
            return Err(TokenizerError::invalid("specials", format!("bad or duplicate special {s:?}")));
        }
        surfaces.push(s.as_bytes().to_vec());
    }
    let n_specials = surfaces.len();
    let mut base: BTreeSet<Vec<u8>> = alphabet.clone();
    base.extend(byte_tokens.iter().cloned());
    for s in base {
        if index.contains_key(&s) {
            return Err(TokenizerError::invalid("specials", "special collides with alphabet"));
        }
        index.insert(s.clone(), surfaces.len() as TokenId);
        surfaces.push(s);
    }
    let frozen: HashSet<TokenId> = byte_tokens.iter().map(|s| index[s]).collect();

    // words as symbol lists with multiplicity
    let mut words: Vec<(Vec<TokenId>, u64)> = Vec::with_capacity(piece_counts.len());
    for (raw, count) in &piece_counts {
        let piece = String::from_utf8_lossy(raw);
        let mut sym = Vec::new();
        let mut buf = [0u8; 4];
        for ch in piece.chars() {
            let c = ch.encode_utf8(&mut buf).as_bytes();
            match index.get(c) {
                Some(&id) => sym.push(id),
                None => sym.extend(c.iter().map(|b| index[&vec![*b]])),
            }
        }
        words.push((sym, *count));
    }

    let mut pairs: HashMap<(TokenId, TokenId), i64> = HashMap::new();
    let mut where_: HashMap<(TokenId, TokenId), BTreeSet<usize>> = HashMap::new();
    let mergeable = |a: TokenId, b: TokenId| !frozen.contains(&a) && !frozen.contains(&b);
    for (w, (sym, count)) in words.iter().enumerate() {
        for p in sym.windows(2) {
            if mergeable(p[0], p[1]) {
                *pairs.entry((p[0], p[1])).or_default() += *count as i64;
                where_.entry((p[0], p[1])).or_default().insert(w);
            }
        }
    }

    let mut merges = Vec::new();
    let mut banned: HashSet<(TokenId, TokenId)> = HashSet::new();
    while surfaces.len() < opts.vocab_size {
        let mut best: Option<((TokenId, TokenId), i64)> = None;
        for (&pair, &count) in &pairs {
            if count <= 0 || banned.contains(&pair) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    count > bc
                        || (count == bc
                            && (&surfaces[pair.0 as usize], &surfaces[pair.1 as usize])
                                < (&surfaces[bp.0 as usize], &surfaces[bp.1 as usize]))
                }
            };
            if better {
                best = Some((pair, count));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let mut cat = surfaces[l as usize].clone();
        cat.extend_from_slice(&surfaces[r as usize]);
        let merged = match index.get(&cat) {
            Some(&id) if (id as usize) < n_specials => {
                banned.insert((l, r));
                continue;
            }
            Some(&id) => id,
            None => {
                let id = surfaces.len() as TokenId;
                index.insert(cat.clone(), id);
                surfaces.push(cat);
                id
            }
        };
        merges.push(Merge { left: l, right: r, merged });

        let affected: Vec<usize> = where_.remove(&(l, r)).map(|s| s.into_iter().collect()).unwrap_or_default();
        for w in affected {
            let (sym, count) = &mut words[w];
            let count = *count as i64;
            for p in sym.windows(2) {
                if mergeable(p[0], p[1]) {
                    *pairs.get_mut(&(p[0], p[1])).expect("counted") -= count;
                }
            }
            let mut out = Vec::with_capacity(sym.len());
            let mut i = 0;
            while i < sym.len() {
                if i + 1 < sym.len() && sym[i] == l && sym[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(sym[i]);
                    i += 1;
                }
            }
            *sym = out;
            for p in sym.windows(2) {
                if mergeable(p[0], p[1]) {
                    *pairs.entry((p[0], p[1])).or_default() += count;
                    where_.entry((p[0], p[1])).or_default().insert(w);
                }
            }
        }
        pairs.remove(&(l, r));
    }

    Tokenizer::from_parts(surfaces, merges, 0..n_specials as TokenId, marker, opts.byte_fallback)
}
