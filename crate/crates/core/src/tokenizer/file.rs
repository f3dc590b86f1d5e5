use super::{Merge, TokenId, Tokenizer, TokenizerError};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabEntry {
    pub id: TokenId,
    /// Surface bytes, lowercase hex.
    pub surface: String,
}

/// On-disk tokenizer layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerFile {
    pub version: u32,
    pub vocab: Vec<VocabEntry>,
    pub merges: Vec<[TokenId; 3]>,
    pub specials: Vec<TokenId>,
    pub marker: u8,
    #[serde(default)]
    pub byte_fallback: bool,
}

impl TokenizerFile {
    pub fn from_tokenizer(tk: &Tokenizer) -> Self {
        TokenizerFile {
            version: FORMAT_VERSION,
            vocab: tk
                .surfaces
                .iter()
                .enumerate()
                .map(|(i, s)| VocabEntry {
                    id: i as TokenId,
                    surface: hex::encode(s),
                })
                .collect(),
            merges: tk
                .merges
                .iter()
                .map(|m| [m.left, m.right, m.merged])
                .collect(),
            specials: tk.specials.iter().copied().collect(),
            marker: tk.marker,
            byte_fallback: tk.byte_fallback,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, TokenizerError> {
        serde_json::from_str(s).map_err(|e| TokenizerError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn into_tokenizer(self) -> Result<Tokenizer, TokenizerError> {
        if self.version != FORMAT_VERSION {
            return Err(TokenizerError::invalid(
                "version",
                format!("unsupported version {}", self.version),
            ));
        }
        let mut surfaces = Vec::with_capacity(self.vocab.len());
        for (i, e) in self.vocab.iter().enumerate() {
            if e.id as usize != i {
                return Err(TokenizerError::invalid(
                    format!("vocab[{i}].id"),
                    format!("expected dense id {i}, found {}", e.id),
                ));
            }
            let bytes = hex::decode(&e.surface).map_err(|err| {
                TokenizerError::invalid(format!("vocab[{i}].surface"), err.to_string())
            })?;
            surfaces.push(bytes);
        }
        let merges = self
            .merges
            .iter()
            .map(|&[left, right, merged]| Merge { left, right, merged })
            .collect();
        let mut seen = std::collections::BTreeSet::new();
        for (i, &s) in self.specials.iter().enumerate() {
            if !seen.insert(s) {
                return Err(TokenizerError::invalid(
                    format!("specials[{i}]"),
                    format!("duplicate id {s}"),
                ));
            }
        }
        Tokenizer::from_parts(surfaces, merges, self.specials, self.marker, self.byte_fallback)
    }
}
