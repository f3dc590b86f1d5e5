use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// A bit string. Text form is MSB-first hex; when the length is not a
/// multiple of four it is appended as `:L`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SecretMessage {
    pub bits: Vec<bool>,
}

impl SecretMessage {
    pub fn new(bits: Vec<bool>) -> Self {
        SecretMessage { bits }
    }

    pub fn random(len: usize, rng: &mut impl RngCore) -> Self {
        let mut bits = Vec::with_capacity(len);
        while bits.len() < len {
            let w = rng.next_u64();
            for i in (0..64).rev() {
                if bits.len() == len {
                    break;
                }
                bits.push((w >> i) & 1 == 1);
            }
        }
        SecretMessage { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let bits = bytes
            .iter()
            .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
            .collect();
        SecretMessage { bits }
    }

    /// MSB-first; a trailing partial byte is zero-padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |a, (i, &b)| a | (u8::from(b) << (7 - i))))
            .collect()
    }

    pub fn to_hex(&self) -> String {
        self.to_string()
    }

    pub fn from_hex(s: &str) -> Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for SecretMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for chunk in self.bits.chunks(4) {
            let mut v = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                v |= u8::from(b) << (3 - i);
            }
            write!(f, "{v:x}")?;
        }
        if !self.bits.len().is_multiple_of(4) {
            write!(f, ":{}", self.bits.len())?;
        }
        Ok(())
    }
}

impl FromStr for SecretMessage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (hex, len) = match s.split_once(':') {
            Some((h, l)) => (h, Some(l.parse::<usize>().map_err(|e| format!("bad length: {e}"))?)),
            None => (s, None),
        };
        let hex = hex.strip_prefix("0x").unwrap_or(hex);
        let mut bits = Vec::with_capacity(hex.len() * 4);
        for (i, c) in hex.chars().enumerate() {
            let v = c.to_digit(16).ok_or_else(|| format!("bad hex digit {c:?} at {i}"))?;
            bits.extend((0..4).rev().map(|k| (v >> k) & 1 == 1));
        }
        if let Some(l) = len {
            if l > bits.len() || bits.len() - l >= 4 {
                return Err(format!("length {l} does not fit {} hex digits", hex.len()));
            }
            if bits[l..].iter().any(|b| *b) {
                return Err("non-zero padding bits".into());
            }
            bits.truncate(l);
        }
        Ok(SecretMessage { bits })
    }
}

impl Serialize for SecretMessage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SecretMessage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
