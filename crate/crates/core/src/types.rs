//! Primitive chain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use primitive_types::U256;

/// A 256-bit machine word. Arithmetic on words wraps, as on chain.
pub type Word = U256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseHexError {
    #[error("missing 0x prefix in `{0}`")]
    MissingPrefix(String),
    #[error("invalid hex in `{0}`")]
    InvalidHex(String),
    #[error("expected {expected} bytes, got {got} in `{input}`")]
    WrongLength { expected: usize, got: usize, input: String },
    #[error("invalid word literal `{0}`")]
    InvalidWord(String),
}

fn decode_fixed<const N: usize>(s: &str) -> Result<[u8; N], ParseHexError> {
    let body = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or_else(|| ParseHexError::MissingPrefix(s.to_string()))?;
    let bytes = hex::decode(body).map_err(|_| ParseHexError::InvalidHex(s.to_string()))?;
    bytes.try_into().map_err(|b: Vec<u8>| ParseHexError::WrongLength {
        expected: N,
        got: b.len(),
        input: s.to_string(),
    })
}

/// 20-byte account identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    /// Reserved for contract creation.
    pub const ZERO: Address = Address([0u8; 20]);

    /// Builds an address whose low 8 bytes hold `n`. Handy for fixtures.
    pub fn from_low_u64(n: u64) -> Self {
        let mut b = [0u8; 20];
        b[12..].copy_from_slice(&n.to_be_bytes());
        Address(b)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 20]
    }

    /// Truncates a word to its low 20 bytes.
    pub fn from_word(w: Word) -> Self {
        let be = w.to_big_endian();
        let mut b = [0u8; 20];
        b.copy_from_slice(&be[12..]);
        Address(b)
    }

    pub fn to_word(self) -> Word {
        Word::from_big_endian(&self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = ParseHexError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_fixed::<20>(s).map(Address)
    }
}

/// 32-byte transaction identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TxHash(pub [u8; 32]);

impl TxHash {
    pub fn from_low_u64(n: u64) -> Self {
        let mut b = [0u8; 32];
        b[24..].copy_from_slice(&n.to_be_bytes());
        TxHash(b)
    }
}

impl fmt::Display for TxHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for TxHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for TxHash {
    type Err = ParseHexError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        decode_fixed::<32>(s).map(TxHash)
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Address);
string_serde!(TxHash);

/// Parses a word written either as `0x`-hex or as a decimal string.
pub fn parse_word(s: &str) -> Result<Word, ParseHexError> {
    let s = s.trim();
    let parsed = if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        if h.is_empty() || h.len() > 64 {
            None
        } else {
            Word::from_str_radix(h, 16).ok()
        }
    } else {
        Word::from_dec_str(s).ok()
    };
    parsed.ok_or_else(|| ParseHexError::InvalidWord(s.to_string()))
}

pub fn format_word(w: &Word) -> String {
    format!("{w:#x}")
}

/// Serde adapter for words as hex strings (decimal accepted on input).
pub mod word_hex {
    use super::*;

    pub fn serialize<S: Serializer>(w: &Word, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_word(w))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Word, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Str(String),
            Num(u64),
        }
        match Raw::deserialize(d)? {
            Raw::Str(s) => parse_word(&s).map_err(serde::de::Error::custom),
            Raw::Num(n) => Ok(Word::from(n)),
        }
    }
}

/// A word that (de)serializes as a hex string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct HexWord(#[serde(with = "word_hex")] pub Word);

/// Same as [`word_hex`] for optional fields.
pub mod word_hex_opt {
    use super::*;

    pub fn serialize<S: Serializer>(w: &Option<Word>, s: S) -> Result<S::Ok, S::Error> {
        match w {
            Some(w) => s.serialize_some(&format_word(w)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Word>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "word_hex")] Word);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// Hex byte strings (`0x` prefix, possibly empty).
pub mod bytes_hex {
    use super::*;

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        let body = s.strip_prefix("0x").unwrap_or(&s);
        hex::decode(body).map_err(serde::de::Error::custom)
    }
}
