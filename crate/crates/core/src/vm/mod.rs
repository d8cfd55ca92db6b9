//! Deterministic transaction replay over contract IR.
//!
//! Execution reads state through a private overlay that falls back to the
//! chain store, so the snapshot itself is never modified. Every storage
//! access and outgoing call is logged as a [`ContextRecord`]. Calls and
//! transfers whose target the transaction sender can choose are reported as
//! hijack points, and [`replay_with_hijack`] hands control to a
//! [`HijackHook`] at each of them.

mod exec;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::boundary::{Boundaries, DAppIdentity};
use crate::chain::{ChainError, ChainStore, TransactionRecord};
use crate::ir::{FunctionRef, SiteKind, Selector, Value};
use crate::types::{word_hex, word_hex_opt, Address, TxHash, Word};

pub use exec::HijackContext;

/// Everything replay needs besides the transaction itself.
#[derive(Debug, Clone, Copy)]
pub struct ReplayEnv<'a> {
    pub store: &'a ChainStore,
    pub boundaries: &'a Boundaries,
}

impl<'a> ReplayEnv<'a> {
    pub fn new(store: &'a ChainStore, boundaries: &'a Boundaries) -> Self {
        ReplayEnv { store, boundaries }
    }

    pub fn dapp_of(&self, addr: Address) -> DAppIdentity {
        self.boundaries.identity(addr, self.store)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("transaction {0} does not target a known contract")]
    UnknownContract(TxHash),
    #[error("no public function with selector {selector} on {contract}")]
    UnknownSelector { contract: Address, selector: Selector },
    #[error("malformed calldata: {0}")]
    MalformedCalldata(String),
    #[error(transparent)]
    Store(#[from] ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Read,
    Write,
    Invoke,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub address: Address,
    pub dapp: DAppIdentity,
}

/// A statement location: the function whose body holds it and its pre-order index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteRef {
    pub contract: Address,
    pub function: String,
    pub index: usize,
}

impl std::fmt::Display for SiteRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}#{}", self.contract, self.function, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDetail {
    pub var: String,
    #[serde(with = "word_hex_opt", default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Word>,
    #[serde(with = "word_hex")]
    pub slot: Word,
    #[serde(with = "word_hex")]
    pub value: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallDetail {
    pub callee: Address,
    /// Resolved callee function, when the callee has code for it.
    pub function: Option<String>,
    pub selector: Option<Selector>,
    pub is_static: bool,
    #[serde(with = "word_hex")]
    pub value: Word,
    pub kind: SiteKind,
    pub site: SiteRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detail {
    Slot(SlotDetail),
    Call(CallDetail),
}

/// One observed operation. Reads and writes target the contract whose
/// storage is touched; invokes target the callee.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub seq: u64,
    pub target: Target,
    pub operation: Operation,
    pub detail: Detail,
    /// Public function (or `receive`) whose frame was active.
    pub frame: FunctionRef,
    /// Call depth of that frame; the transaction's entry frame is 0.
    pub depth: usize,
}

impl ContextRecord {
    pub fn slot(&self) -> Option<(Address, Word)> {
        match &self.detail {
            Detail::Slot(s) => Some((self.target.address, s.slot)),
            Detail::Call(_) => None,
        }
    }

    pub fn call(&self) -> Option<&CallDetail> {
        match &self.detail {
            Detail::Call(c) => Some(c),
            Detail::Slot(_) => None,
        }
    }

    /// The function this record is attributed to as a callee, for invokes.
    pub fn callee_ref(&self) -> Option<FunctionRef> {
        let c = self.call()?;
        c.function.as_ref().map(|f| FunctionRef::new(c.callee, f.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success(Vec<Value>),
    Revert(String),
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HijackPoint {
    /// Sequence number of the invoke record at the site.
    pub seq: u64,
    pub site: SiteRef,
    pub recipient: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionTrace {
    pub tx: TxHash,
    pub records: Vec<ContextRecord>,
    pub outcome: Outcome,
    /// Final values of every slot written during this execution.
    #[serde(with = "slot_map")]
    pub state_overlay: BTreeMap<(Address, Word), Word>,
    #[serde(with = "balance_map")]
    pub balance_overlay: BTreeMap<Address, Word>,
    pub hijack_points: Vec<HijackPoint>,
}

impl ExecutionTrace {
    pub fn reverted(&self) -> bool {
        !self.outcome.is_success()
    }
}

mod slot_map {
    use super::*;
    use serde::ser::SerializeSeq;
    use serde::Serializer;

    #[derive(Serialize)]
    struct Entry<'a> {
        address: &'a Address,
        #[serde(with = "word_hex")]
        slot: &'a Word,
        #[serde(with = "word_hex")]
        value: &'a Word,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<(Address, Word), Word>, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(m.len()))?;
        for ((address, slot), value) in m {
            seq.serialize_element(&Entry { address, slot, value })?;
        }
        seq.end()
    }
}

mod balance_map {
    use super::*;
    use serde::ser::SerializeMap;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(m: &BTreeMap<Address, Word>, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(m.len()))?;
        for (a, w) in m {
            map.serialize_entry(a, &format!("{w:#x}"))?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookAction {
    Proceed,
    /// Stop the replay; the transaction is treated as reverted.
    Abort,
}

/// Callback run at each hijack point of [`replay_with_hijack`]. The context
/// can execute further transactions against the in-flight state; their
/// effects persist into the continuing execution.
pub trait HijackHook {
    fn on_hijack(&mut self, point: &HijackPoint, ctx: &mut HijackContext<'_, '_>) -> HookAction;
}

pub fn replay(tx: &TransactionRecord, env: ReplayEnv<'_>) -> Result<ExecutionTrace, ReplayError> {
    exec::Machine::new(env).run_tx(tx, None)
}

pub fn replay_with_hijack(
    tx: &TransactionRecord,
    env: ReplayEnv<'_>,
    hook: &mut dyn HijackHook,
) -> Result<ExecutionTrace, ReplayError> {
    exec::Machine::new(env).run_tx(tx, Some(hook))
}

/// Slots written strictly after `after_seq`. Empty for reverted traces.
pub fn state_diff(trace: &ExecutionTrace, after_seq: u64) -> BTreeSet<(Address, Word)> {
    if trace.reverted() {
        return BTreeSet::new();
    }
    trace
        .records
        .iter()
        .filter(|r| r.seq > after_seq && r.operation == Operation::Write)
        .filter_map(ContextRecord::slot)
        .collect()
}

/// Every slot carried by a read record.
pub fn reads_of(trace: &ExecutionTrace) -> BTreeSet<(Address, Word)> {
    trace
        .records
        .iter()
        .filter(|r| r.operation == Operation::Read)
        .filter_map(ContextRecord::slot)
        .collect()
}
