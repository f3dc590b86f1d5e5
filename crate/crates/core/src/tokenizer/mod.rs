//! Byte-pair-encoding tokenizer with a word-start marker byte.
//!
//! Text is split into pieces before every space; each space is replaced by
//! the marker byte and stays attached to the word that follows it. Merges are
//! applied inside a piece only, lowest rank first, leftmost site first.
//! Decoding concatenates surfaces and renders the marker as a space.

mod file;
mod train;

pub use file::TokenizerFile;
pub use train::{train_bpe, train_bpe_with, TrainOptions};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub type TokenId = u32;

/// Default marker byte (ASCII unit separator). Rendered as `_` in docs.
pub const DEFAULT_MARKER: u8 = 0x1f;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocab too small: {vocab_size} < {required} (specials + alphabet)")]
    VocabTooSmall { vocab_size: usize, required: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unencodable byte 0x{byte:02x} at offset {offset}")]
    Unencodable { offset: usize, byte: u8 },
    #[error("unknown token id {id} at position {position}")]
    UnknownId { position: usize, id: TokenId },
    #[error("invalid tokenizer: {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TokenizerError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        TokenizerError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Half-open byte interval `[start, end)` over a decoded string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Generated,
    Retokenized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub spans: Vec<Span>,
    pub source: Source,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub left: TokenId,
    pub right: TokenId,
    pub merged: TokenId,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    // stored surfaces keep the marker byte
    surfaces: Vec<Vec<u8>>,
    // decoded form: marker rendered as a space, empty for specials
    rendered: Vec<Vec<u8>>,
    merges: Vec<Merge>,
    specials: BTreeSet<TokenId>,
    marker: u8,
    byte_fallback: bool,
    by_surface: HashMap<Vec<u8>, TokenId>,
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    max_surface_len: usize,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.surfaces == other.surfaces
            && self.merges == other.merges
            && self.specials == other.specials
            && self.marker == other.marker
            && self.byte_fallback == other.byte_fallback
    }
}

impl Eq for Tokenizer {}

impl Tokenizer {
    /// Builds a tokenizer from raw parts, checking every invariant.
    ///
    /// `surfaces[i]` is the surface of id `i`, with the marker byte standing
    /// in for a leading space.
    pub fn from_parts(
        surfaces: Vec<Vec<u8>>,
        merges: Vec<Merge>,
        specials: impl IntoIterator<Item = TokenId>,
        marker: u8,
        byte_fallback: bool,
    ) -> Result<Self, TokenizerError> {
        let n = surfaces.len();
        let mut by_surface = HashMap::with_capacity(n);
        for (i, s) in surfaces.iter().enumerate() {
            if s.is_empty() {
                return Err(TokenizerError::invalid(
                    format!("vocab[{i}]"),
                    "empty surface",
                ));
            }
            if by_surface.insert(s.clone(), i as TokenId).is_some() {
                return Err(TokenizerError::invalid(
                    format!("vocab[{i}]"),
                    format!("duplicate surface {}", hex::encode(s)),
                ));
            }
        }
        let specials: BTreeSet<TokenId> = specials.into_iter().collect();
        for &s in &specials {
            if s as usize >= n {
                return Err(TokenizerError::invalid(
                    "specials",
                    format!("unknown id {s}"),
                ));
            }
        }
        let mut merge_rank = HashMap::with_capacity(merges.len());
        for (rank, m) in merges.iter().enumerate() {
            let field = format!("merges[{rank}]");
            for id in [m.left, m.right, m.merged] {
                if id as usize >= n {
                    return Err(TokenizerError::invalid(field, format!("unknown id {id}")));
                }
                if specials.contains(&id) {
                    return Err(TokenizerError::invalid(field, format!("special id {id}")));
                }
            }
            let mut cat = surfaces[m.left as usize].clone();
            cat.extend_from_slice(&surfaces[m.right as usize]);
            if cat != surfaces[m.merged as usize] {
                return Err(TokenizerError::invalid(
                    field,
                    "merged surface is not the concatenation of its parts",
                ));
            }
            if merge_rank
                .insert((m.left, m.right), (rank, m.merged))
                .is_some()
            {
                return Err(TokenizerError::invalid(field, "duplicate rule"));
            }
        }
        let rendered = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if specials.contains(&(i as TokenId)) {
                    Vec::new()
                } else {
                    s.iter()
                        .map(|&b| if b == marker { b' ' } else { b })
                        .collect()
                }
            })
            .collect();
        let max_surface_len = surfaces.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Tokenizer {
            surfaces,
            rendered,
            merges,
            specials,
            marker,
            byte_fallback,
            by_surface,
            merge_rank,
            max_surface_len,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn specials(&self) -> &BTreeSet<TokenId> {
        &self.specials
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.specials.contains(&id)
    }

    pub fn marker(&self) -> u8 {
        self.marker
    }

    pub fn byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    /// Longest surface in bytes.
    pub fn max_surface_len(&self) -> usize {
        self.max_surface_len
    }

    /// Raw stored surface (marker byte kept).
    pub fn surface(&self, id: TokenId) -> Option<&[u8]> {
        self.surfaces.get(id as usize).map(Vec::as_slice)
    }

    /// Bytes this token contributes to decoded text. Empty for specials.
    pub fn rendered(&self, id: TokenId) -> Option<&[u8]> {
        self.rendered.get(id as usize).map(Vec::as_slice)
    }

    /// Looks up a token by its decoded form (`" nobody"` finds `_nobody`).
    pub fn token_for(&self, text: &str) -> Option<TokenId> {
        let raw: Vec<u8> = text
            .bytes()
            .map(|b| if b == b' ' { self.marker } else { b })
            .collect();
        self.by_surface
            .get(&raw)
            .copied()
            .filter(|id| !self.is_special(*id))
    }

    /// Human-readable surface with the marker shown as `_`.
    pub fn display(&self, id: TokenId) -> String {
        match self.surfaces.get(id as usize) {
            None => format!("<unk:{id}>"),
            Some(s) => {
                let shown: Vec<u8> = s
                    .iter()
                    .map(|&b| if b == self.marker { b'_' } else { b })
                    .collect();
                String::from_utf8_lossy(&shown).into_owned()
            }
        }
    }

    pub fn encode(&self, text: &str) -> Result<TokenSequence, TokenizerError> {
        let ids = self.encode_ids(text)?;
        let spans = self.spans_of(&ids).expect("encoder emits known ids");
        Ok(TokenSequence {
            ids,
            spans,
            source: Source::Retokenized,
        })
    }

    pub fn encode_ids(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        let bytes = text.as_bytes();
        if self.marker != b' ' {
            if let Some(offset) = bytes.iter().position(|&b| b == self.marker) {
                return Err(TokenizerError::Unencodable {
                    offset,
                    byte: self.marker,
                });
            }
        }
        let mut out = Vec::with_capacity(bytes.len() / 3 + 1);
        let mut symbols = Vec::new();
        let mut start = 0;
        for end in piece_ends(bytes) {
            symbols.clear();
            self.base_symbols(&text[start..end], start, &mut symbols)?;
            self.apply_merges(&mut symbols);
            out.extend_from_slice(&symbols);
            start = end;
        }
        Ok(out)
    }

    fn base_symbols(
        &self,
        piece: &str,
        offset: usize,
        out: &mut Vec<TokenId>,
    ) -> Result<(), TokenizerError> {
        let mut buf = [0u8; 4];
        for (i, ch) in piece.char_indices() {
            let raw: &[u8] = if ch == ' ' {
                buf[0] = self.marker;
                &buf[..1]
            } else {
                ch.encode_utf8(&mut buf).as_bytes()
            };
            match self.by_surface.get(raw).filter(|id| !self.is_special(**id)) {
                Some(&id) => out.push(id),
                None if self.byte_fallback => {
                    for (j, &b) in raw.iter().enumerate() {
                        match self.by_surface.get(&[b][..]) {
                            Some(&id) if !self.is_special(id) => out.push(id),
                            _ => {
                                return Err(TokenizerError::Unencodable {
                                    offset: offset + i + j,
                                    byte: b,
                                })
                            }
                        }
                    }
                }
                None => {
                    return Err(TokenizerError::Unencodable {
                        offset: offset + i,
                        byte: raw[0],
                    })
                }
            }
        }
        Ok(())
    }

    fn apply_merges(&self, symbols: &mut Vec<TokenId>) {
        loop {
            let mut best: Option<(usize, usize, TokenId)> = None;
            for i in 0..symbols.len().saturating_sub(1) {
                if let Some(&(rank, merged)) = self.merge_rank.get(&(symbols[i], symbols[i + 1])) {
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, i, merged));
                    }
                }
            }
            let Some((rank, _, merged)) = best else { return };
            let left = self.merges[rank].left;
            let right = self.merges[rank].right;
            // apply every site of this rule left-to-right
            let mut w = 0;
            let mut r = 0;
            while r < symbols.len() {
                if r + 1 < symbols.len() && symbols[r] == left && symbols[r + 1] == right {
                    symbols[w] = merged;
                    r += 2;
                } else {
                    symbols[w] = symbols[r];
                    r += 1;
                }
                w += 1;
            }
            symbols.truncate(w);
        }
    }

    /// Decoded bytes before UTF-8 repair. Specials contribute nothing.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::with_capacity(ids.len() * 4);
        for (position, &id) in ids.iter().enumerate() {
            let r = self
                .rendered
                .get(id as usize)
                .ok_or(TokenizerError::UnknownId { position, id })?;
            out.extend_from_slice(r);
        }
        Ok(out)
    }

    /// Decodes with specials skipped. Incomplete UTF-8 from byte tokens
    /// becomes U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        self.decode_with(ids, true)
    }

    pub fn decode_with(&self, ids: &[TokenId], skip_specials: bool) -> Result<String, TokenizerError> {
        let bytes = if skip_specials {
            self.decode_bytes(ids)?
        } else {
            let mut out = Vec::new();
            for (position, &id) in ids.iter().enumerate() {
                if self.is_special(id) {
                    out.extend_from_slice(&self.surfaces[id as usize]);
                } else {
                    out.extend_from_slice(
                        self.rendered
                            .get(id as usize)
                            .ok_or(TokenizerError::UnknownId { position, id })?,
                    );
                }
            }
            out
        };
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// Spans of each token over the decoded bytes; specials are zero-width.
    pub fn spans_of(&self, ids: &[TokenId]) -> Result<Vec<Span>, TokenizerError> {
        let mut at = 0;
        ids.iter()
            .enumerate()
            .map(|(position, &id)| {
                let len = self
                    .rendered
                    .get(id as usize)
                    .ok_or(TokenizerError::UnknownId { position, id })?
                    .len();
                let s = Span::new(at, at + len);
                at += len;
                Ok(s)
            })
            .collect()
    }

    pub fn sequence(&self, ids: Vec<TokenId>, source: Source) -> Result<TokenSequence, TokenizerError> {
        let spans = self.spans_of(&ids)?;
        Ok(TokenSequence { ids, spans, source })
    }

    pub fn to_file(&self) -> TokenizerFile {
        TokenizerFile::from_tokenizer(self)
    }

    pub fn to_json(&self) -> String {
        self.to_file().to_json()
    }

    pub fn from_json(s: &str) -> Result<Self, TokenizerError> {
        TokenizerFile::from_json(s)?.into_tokenizer()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&s)
    }
}

/// End offsets of pieces: a new piece starts at every space except offset 0.
pub(crate) fn piece_ends(bytes: &[u8]) -> impl Iterator<Item = usize> + '_ {
    bytes
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &b)| b == b' ')
        .map(|(i, _)| i)
        .chain((!bytes.is_empty()).then_some(bytes.len()))
}
