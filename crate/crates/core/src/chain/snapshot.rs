use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ChainError, InternalTransactionList, InternalTx, TransactionRecord};
use crate::boundary::BuilderEntry;
use crate::ir::{self, abi, parse_contract, Contract, Value};
use crate::types::{bytes_hex, parse_word, Address, HexWord, TxHash, Word};

/// On-disk snapshot document. See `docs/snapshot.md`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotDoc {
    #[serde(default)]
    pub contracts: Vec<RawContractEntry>,
    #[serde(default)]
    pub transactions: Vec<RawTransaction>,
    #[serde(default)]
    pub internal_txs: BTreeMap<TxHash, Vec<InternalTx>>,
    #[serde(default)]
    pub storage: Vec<RawStorage>,
    #[serde(default)]
    pub balances: BTreeMap<Address, HexWord>,
    #[serde(default)]
    pub builders: Vec<BuilderEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawContractEntry {
    pub address: Address,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir_ref: Option<String>,
    pub creation: Creation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Creation {
    pub deploy_tx: TxHash,
    pub creator: Address,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCall {
    pub function: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTransaction {
    pub hash: TxHash,
    pub sender: Address,
    #[serde(default)]
    pub to: Option<Address>,
    #[serde(default)]
    pub value: HexWord,
    #[serde(default, with = "opt_bytes", skip_serializing_if = "Option::is_none")]
    pub calldata: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<RawCall>,
    pub block_number: u64,
    pub timestamp: u64,
}

mod opt_bytes {
    use super::bytes_hex;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match b {
            Some(b) => bytes_hex::serialize(b, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "bytes_hex")] Vec<u8>);
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawStorage {
    pub address: Address,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<HexWord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub value: HexWord,
}

#[derive(Debug, Clone)]
pub struct ContractEntry {
    pub contract: Arc<Contract>,
    pub creation: Creation,
}

/// Immutable, fully cross-referenced world state.
#[derive(Debug, Clone, Default)]
pub struct ChainSnapshot {
    pub contracts: BTreeMap<Address, ContractEntry>,
    pub transactions: BTreeMap<TxHash, TransactionRecord>,
    pub internal_txs: BTreeMap<TxHash, InternalTransactionList>,
    pub storage: BTreeMap<(Address, Word), Word>,
    pub balances: BTreeMap<Address, Word>,
    pub builders: Vec<BuilderEntry>,
    /// Transactions per recipient, newest first.
    by_recipient: BTreeMap<Address, Vec<TxHash>>,
    /// Normalized source document (IR inlined, calldata encoded).
    source: SnapshotDoc,
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<ChainSnapshot, ChainError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ChainError::Io { path: path.display().to_string(), source })?;
    let doc: SnapshotDoc = serde_json::from_str(&text).map_err(|e| ChainError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    ChainSnapshot::from_doc(doc, path.parent())
}

fn encode_call_form(c: &Contract, call: &RawCall, hash: TxHash) -> Result<Vec<u8>, ChainError> {
    let bad = |msg: String| ChainError::Invalid(format!("transaction {hash}: {msg}"));
    let spec = abi::abi_of(&c.ir, &call.function).map_err(|e| bad(e.to_string()))?;
    if spec.params.len() != call.args.len() {
        return Err(bad(format!(
            "`{}` takes {} argument(s), {} given",
            call.function,
            spec.params.len(),
            call.args.len()
        )));
    }
    let args = spec
        .params
        .iter()
        .zip(&call.args)
        .map(|(ty, a)| Value::parse_as(*ty, a).map_err(bad))
        .collect::<Result<Vec<_>, _>>()?;
    abi::encode_call(spec.selector, &spec.params, &args).map_err(|e| bad(e.to_string()))
}

impl ChainSnapshot {
    /// Resolves every cross-reference of `doc`. Relative `ir_ref` paths are
    /// looked up under `base_dir`.
    pub fn from_doc(mut doc: SnapshotDoc, base_dir: Option<&Path>) -> Result<Self, ChainError> {
        let mut snap = ChainSnapshot::default();

        for entry in &mut doc.contracts {
            if snap.contracts.contains_key(&entry.address) {
                return Err(ChainError::Invalid(format!("duplicate contract {}", entry.address)));
            }
            let ir_doc = match (&entry.ir, &entry.ir_ref) {
                (Some(ir), None) => ir.clone(),
                (None, Some(r)) => {
                    let p: PathBuf = base_dir.map(|b| b.join(r)).unwrap_or_else(|| PathBuf::from(r));
                    let text = std::fs::read_to_string(&p).map_err(|_| {
                        ChainError::Dangling(format!("contract {} references missing IR file {}", entry.address, p.display()))
                    })?;
                    serde_json::from_str(&text).map_err(|e| ChainError::Parse {
                        path: p.display().to_string(),
                        line: e.line(),
                        column: e.column(),
                        msg: e.to_string(),
                    })?
                }
                _ => {
                    return Err(ChainError::Invalid(format!(
                        "contract {} needs exactly one of `ir` and `ir_ref`",
                        entry.address
                    )))
                }
            };
            let mut ir = parse_contract(&ir_doc, Some(entry.address))
                .map_err(|source| ChainError::Ir { address: entry.address, source })?;
            if let Some(n) = &entry.name {
                ir.name = n.clone();
            }
            entry.ir = Some(ir_doc);
            entry.ir_ref = None;
            snap.contracts.insert(
                entry.address,
                ContractEntry { contract: Arc::new(Contract::new(ir)), creation: entry.creation },
            );
        }

        let mut order = Vec::with_capacity(doc.transactions.len());
        for raw in &mut doc.transactions {
            if snap.transactions.contains_key(&raw.hash) {
                return Err(ChainError::Invalid(format!("duplicate transaction {}", raw.hash)));
            }
            let calldata = match (&raw.calldata, &raw.call) {
                (Some(_), Some(_)) => {
                    return Err(ChainError::Invalid(format!(
                        "transaction {} has both `calldata` and `call`",
                        raw.hash
                    )))
                }
                (Some(cd), None) => cd.clone(),
                (None, Some(call)) => {
                    let to = raw.to.ok_or_else(|| {
                        ChainError::Invalid(format!("creation transaction {} cannot use `call`", raw.hash))
                    })?;
                    let c = snap.contracts.get(&to).ok_or_else(|| {
                        ChainError::Dangling(format!("transaction {} calls unknown contract {to}", raw.hash))
                    })?;
                    encode_call_form(&c.contract, call, raw.hash)?
                }
                (None, None) => Vec::new(),
            };
            raw.calldata = Some(calldata.clone());
            raw.call = None;
            order.push(raw.hash);
            snap.transactions.insert(
                raw.hash,
                TransactionRecord {
                    hash: raw.hash,
                    sender: raw.sender,
                    to: raw.to,
                    value: raw.value.0,
                    calldata,
                    block_number: raw.block_number,
                    timestamp: raw.timestamp,
                },
            );
        }

        for (addr, entry) in &snap.contracts {
            if !snap.transactions.contains_key(&entry.creation.deploy_tx) {
                return Err(ChainError::Dangling(format!(
                    "contract {addr} deploy_tx {} not in transactions",
                    entry.creation.deploy_tx
                )));
            }
        }

        for (hash, entries) in &doc.internal_txs {
            if !snap.transactions.contains_key(hash) {
                return Err(ChainError::Dangling(format!("internal_txs parent {hash} not in transactions")));
            }
            snap.internal_txs
                .insert(*hash, InternalTransactionList { parent_hash: *hash, entries: entries.clone() });
        }

        for raw in &mut doc.storage {
            let slot = match (&raw.slot, &raw.var) {
                (Some(s), None) if raw.key.is_none() => s.0,
                (None, Some(var)) => {
                    let c = snap.contracts.get(&raw.address).ok_or_else(|| {
                        ChainError::Dangling(format!("storage entry for unknown contract {}", raw.address))
                    })?;
                    let sv = c.contract.ir.state_var(var).ok_or_else(|| {
                        ChainError::Dangling(format!("contract {} has no state variable `{var}`", raw.address))
                    })?;
                    let key = raw
                        .key
                        .as_deref()
                        .map(parse_word)
                        .transpose()
                        .map_err(|e| ChainError::Invalid(format!("storage key: {e}")))?;
                    if key.is_some() != (sv.kind == ir::VarKind::Map) {
                        return Err(ChainError::Invalid(format!(
                            "storage entry {}.{var}: key presence does not match variable kind",
                            raw.address
                        )));
                    }
                    ir::storage_slot(sv, key)
                }
                _ => {
                    return Err(ChainError::Invalid(format!(
                        "storage entry for {} needs either `slot` or `var` (+`key` for maps)",
                        raw.address
                    )))
                }
            };
            snap.storage.insert((raw.address, slot), raw.value.0);
        }

        snap.balances = doc.balances.iter().map(|(a, w)| (*a, w.0)).collect();

        let mut seen = BTreeSet::new();
        for b in &doc.builders {
            if !seen.insert(b.builder) {
                return Err(ChainError::Invalid(format!("builder {} listed twice", b.builder)));
            }
        }
        snap.builders = doc.builders.clone();

        // Newest first: higher block, then later timestamp, then later position in the file.
        let mut indexed: Vec<(usize, &TransactionRecord)> =
            order.iter().enumerate().map(|(i, h)| (i, &snap.transactions[h])).collect();
        indexed.sort_by(|(ia, a), (ib, b)| {
            (b.block_number, b.timestamp, ib).cmp(&(a.block_number, a.timestamp, ia))
        });
        for (_, tx) in indexed {
            if let Some(to) = tx.to {
                snap.by_recipient.entry(to).or_default().push(tx.hash);
            }
        }

        snap.source = doc;
        Ok(snap)
    }

    /// The normalized document this snapshot was built from.
    pub fn to_doc(&self) -> SnapshotDoc {
        self.source.clone()
    }

    pub fn contract(&self, addr: Address) -> Option<&ContractEntry> {
        self.contracts.get(&addr)
    }

    /// Most recent `limit` transactions sent to `addr`, newest first.
    pub fn transactions_to(&self, addr: Address, limit: usize) -> Vec<TransactionRecord> {
        self.by_recipient
            .get(&addr)
            .map(|hs| hs.iter().take(limit).map(|h| self.transactions[h].clone()).collect())
            .unwrap_or_default()
    }
}
