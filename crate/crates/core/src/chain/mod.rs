//! Chain data access: offline snapshots, an optional JSON-RPC backend, and
//! a caching store used by every later stage.

pub mod rpc;
mod snapshot;
mod store;

use serde::{Deserialize, Serialize};

use crate::types::{bytes_hex, word_hex, Address, TxHash, Word};

pub use snapshot::{load_snapshot, ChainSnapshot, ContractEntry, Creation, SnapshotDoc};
pub use store::{ChainBackend, ChainStore};

#[derive(Debug, thiserror::Error)]
pub enum ChainError {
    #[error("{path}:{line}:{column}: {msg}")]
    Parse { path: String, line: usize, column: usize, msg: String },
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("invalid snapshot: {0}")]
    Invalid(String),
    #[error("contract {address}: {source}")]
    Ir { address: Address, source: crate::ir::IrError },
    #[error("unknown contract {0}")]
    UnknownContract(Address),
    #[error("unknown transaction {0}")]
    UnknownTransaction(TxHash),
    #[error("rpc: {0}")]
    Rpc(String),
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
}

/// A top-level transaction. `to == None` marks a contract creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub hash: TxHash,
    pub sender: Address,
    pub to: Option<Address>,
    #[serde(with = "word_hex", default)]
    pub value: Word,
    #[serde(with = "bytes_hex", default)]
    pub calldata: Vec<u8>,
    pub block_number: u64,
    pub timestamp: u64,
}

impl TransactionRecord {
    pub fn is_create(&self) -> bool {
        self.to.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InternalKind {
    Call,
    Create,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalTx {
    pub kind: InternalKind,
    pub from: Address,
    pub to: Address,
    #[serde(with = "word_hex", default)]
    pub value: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalTransactionList {
    pub parent_hash: TxHash,
    pub entries: Vec<InternalTx>,
}

impl InternalTransactionList {
    /// The contract that created `addr` within this transaction, if any.
    pub fn creator_of(&self, addr: Address) -> Option<Address> {
        self.entries
            .iter()
            .find(|e| e.kind == InternalKind::Create && e.to == addr)
            .map(|e| e.from)
    }
}
