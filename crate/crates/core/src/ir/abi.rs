//! Function selectors and calldata encoding.
//!
//! Calldata follows the usual layout: a 4-byte selector followed by one
//! 32-byte head word per parameter; `bytes` parameters store an offset in
//! the head and a length-prefixed, zero-padded tail.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest, Keccak256};

use super::{ContractIR, IrError, ParamType};
use crate::types::{parse_word, Address, ParseHexError, Word};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Selector(pub [u8; 4]);

impl Selector {
    /// First four bytes of the keccak-256 digest of a canonical signature.
    pub fn from_signature(sig: &str) -> Self {
        let digest = keccak256(sig.as_bytes());
        Selector([digest[0], digest[1], digest[2], digest[3]])
    }
}

pub fn keccak256(data: &[u8]) -> [u8; 32] {
    Keccak256::digest(data).into()
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Selector {
    type Err = ParseHexError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.strip_prefix("0x").ok_or_else(|| ParseHexError::MissingPrefix(s.into()))?;
        let b = hex::decode(body).map_err(|_| ParseHexError::InvalidHex(s.into()))?;
        let arr: [u8; 4] = b.try_into().map_err(|b: Vec<u8>| ParseHexError::WrongLength {
            expected: 4,
            got: b.len(),
            input: s.into(),
        })?;
        Ok(Selector(arr))
    }
}

impl Serialize for Selector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A runtime value: a word, or a byte string for `bytes` parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Word(Word),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn word(&self) -> Option<Word> {
        match self {
            Value::Word(w) => Some(*w),
            Value::Bytes(_) => None,
        }
    }

    pub fn bool(b: bool) -> Self {
        Value::Word(if b { Word::one() } else { Word::zero() })
    }

    pub fn address(a: Address) -> Self {
        Value::Word(a.to_word())
    }

    /// Parses a literal argument for a parameter of type `ty`.
    pub fn parse_as(ty: ParamType, s: &str) -> Result<Value, String> {
        match ty {
            ParamType::Uint256 => parse_word(s).map(Value::Word).map_err(|e| e.to_string()),
            ParamType::Address => s
                .parse::<Address>()
                .map(Value::address)
                .map_err(|e| e.to_string()),
            ParamType::Bool => match s {
                "true" => Ok(Value::bool(true)),
                "false" => Ok(Value::bool(false)),
                _ => Err(format!("invalid bool `{s}`")),
            },
            ParamType::Bytes => {
                let body = s.strip_prefix("0x").ok_or_else(|| format!("missing 0x in `{s}`"))?;
                hex::decode(body).map(Value::Bytes).map_err(|e| e.to_string())
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Word(w) => write!(f, "{w:#x}"),
            Value::Bytes(b) => write!(f, "0x{}", hex::encode(b)),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AbiSpec {
    pub name: String,
    pub selector: Selector,
    pub params: Vec<ParamType>,
    pub payable: bool,
}

pub fn abi_of(contract: &ContractIR, function: &str) -> Result<AbiSpec, IrError> {
    let f = contract
        .function(function)
        .ok_or_else(|| IrError::UnknownFunction(function.to_string()))?;
    if !f.is_public() {
        return Err(IrError::InternalFunction(function.to_string()));
    }
    Ok(AbiSpec {
        name: f.name.clone(),
        selector: f.selector,
        params: f.params.iter().map(|p| p.ty).collect(),
        payable: f.payable,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CalldataError {
    #[error("calldata shorter than a selector")]
    NoSelector,
    #[error("calldata truncated at parameter {0}")]
    Truncated(usize),
    #[error("parameter {index} is not a valid {ty}")]
    BadValue { index: usize, ty: ParamType },
    #[error("argument count mismatch: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },
}

pub fn split_selector(calldata: &[u8]) -> Result<(Selector, &[u8]), CalldataError> {
    if calldata.len() < 4 {
        return Err(CalldataError::NoSelector);
    }
    let sel = Selector([calldata[0], calldata[1], calldata[2], calldata[3]]);
    Ok((sel, &calldata[4..]))
}

fn pad_len(n: usize) -> usize {
    n.div_ceil(32) * 32
}

pub fn encode_args(types: &[ParamType], args: &[Value]) -> Result<Vec<u8>, CalldataError> {
    if types.len() != args.len() {
        return Err(CalldataError::Arity { expected: types.len(), got: args.len() });
    }
    let mut head = Vec::with_capacity(32 * types.len());
    let mut tail = Vec::new();
    for (i, (ty, v)) in types.iter().zip(args).enumerate() {
        match (ty, v) {
            (ParamType::Bytes, Value::Bytes(b)) => {
                let offset = Word::from(32 * types.len() + tail.len());
                head.extend_from_slice(&offset.to_big_endian());
                tail.extend_from_slice(&Word::from(b.len()).to_big_endian());
                tail.extend_from_slice(b);
                tail.resize(tail.len() + pad_len(b.len()) - b.len(), 0);
            }
            (ParamType::Bytes, _) | (_, Value::Bytes(_)) => {
                return Err(CalldataError::BadValue { index: i, ty: *ty })
            }
            (_, Value::Word(w)) => head.extend_from_slice(&w.to_big_endian()),
        }
    }
    head.extend_from_slice(&tail);
    Ok(head)
}

pub fn encode_call(selector: Selector, types: &[ParamType], args: &[Value]) -> Result<Vec<u8>, CalldataError> {
    let mut out = selector.0.to_vec();
    out.extend(encode_args(types, args)?);
    Ok(out)
}

pub fn decode_args(types: &[ParamType], data: &[u8]) -> Result<Vec<Value>, CalldataError> {
    let word_at = |off: usize, idx: usize| -> Result<Word, CalldataError> {
        data.get(off..off + 32)
            .map(Word::from_big_endian)
            .ok_or(CalldataError::Truncated(idx))
    };
    let mut out = Vec::with_capacity(types.len());
    for (i, ty) in types.iter().enumerate() {
        let w = word_at(32 * i, i)?;
        let bad = || CalldataError::BadValue { index: i, ty: *ty };
        let v = match ty {
            ParamType::Uint256 => Value::Word(w),
            ParamType::Address => {
                if w.bits() > 160 {
                    return Err(bad());
                }
                Value::Word(w)
            }
            ParamType::Bool => {
                if w > Word::one() {
                    return Err(bad());
                }
                Value::Word(w)
            }
            ParamType::Bytes => {
                if w.bits() > 32 {
                    return Err(bad());
                }
                let off = w.as_usize();
                let len = word_at(off, i)?;
                if len.bits() > 32 {
                    return Err(bad());
                }
                let len = len.as_usize();
                let bytes = data
                    .get(off + 32..off + 32 + len)
                    .ok_or(CalldataError::Truncated(i))?;
                Value::Bytes(bytes.to_vec())
            }
        };
        out.push(v);
    }
    Ok(out)
}
