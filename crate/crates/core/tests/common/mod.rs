#![allow(dead_code)]

pub mod chains;
pub mod gen;

use std::path::PathBuf;

use rorscan_core::boundary::Boundaries;
use rorscan_core::chain::{load_snapshot, ChainStore};
use rorscan_core::types::{Address, TxHash};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn store(name: &str) -> ChainStore {
    ChainStore::new(load_snapshot(fixture(name)).expect("fixture loads"))
}

pub fn boundaries(store: &ChainStore) -> Boundaries {
    Boundaries::new(store.builders()).expect("builders")
}

pub fn addr(tag: &str) -> Address {
    format!("0x{tag:0>40}").parse().unwrap()
}

pub fn hash(tag: &str) -> TxHash {
    format!("0x{tag:0>64}").parse().unwrap()
}

pub const POOL: &str = "c1";
pub const ORACLE: &str = "c2";
pub const VAULT: &str = "c3";
pub const ALICE: &str = "a1";

use rorscan_core::chain::TransactionRecord;
use rorscan_core::ir::{abi, Value};
use rorscan_core::types::Word;

pub fn call_tx(store: &ChainStore, to: Address, function: &str, args: Vec<Value>, sender: Address, value: u64) -> TransactionRecord {
    let c = store.contract(to).expect("known contract");
    let spec = abi::abi_of(&c.ir, function).expect("public function");
    TransactionRecord {
        hash: hash("beef"),
        sender,
        to: Some(to),
        value: Word::from(value),
        calldata: abi::encode_call(spec.selector, &spec.params, &args).unwrap(),
        block_number: 500,
        timestamp: 1_700_006_000,
    }
}

use rorscan_core::analysis::{analyze, collect_contextual_data, Analysis, ContextDataset};
use rorscan_core::chain::{ChainSnapshot, SnapshotDoc};
use rorscan_core::vm::ReplayEnv;

pub fn store_from_json(doc: serde_json::Value) -> ChainStore {
    let doc: SnapshotDoc = serde_json::from_value(doc).unwrap();
    ChainStore::new(ChainSnapshot::from_doc(doc, Some(&fixture(""))).unwrap())
}

pub fn fixture_json(name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub fn analyze_store(s: &ChainStore, boundary_on: bool, victim: Address) -> (ContextDataset, Analysis) {
    let b = if boundary_on { boundaries(s) } else { Boundaries::disabled() };
    let env = ReplayEnv::new(s, &b);
    let ds = collect_contextual_data(victim, 1000, env).unwrap();
    let a = analyze(&ds, env);
    (ds, a)
}

pub fn fref(contract: &str, function: &str) -> rorscan_core::ir::FunctionRef {
    rorscan_core::ir::FunctionRef::new(addr(contract), function)
}
