//! Synthetic factory chains and an independent creation-record walk.

use std::collections::HashMap;

use rorscan_core::chain::{ChainSnapshot, ChainStore, SnapshotDoc};
use serde_json::{json, Value};

use super::{addr, hash};

/// Root EOA deploys F1; each F_k then creates F_{k+1} in a transaction sent
/// by a different EOA.
pub fn chain_doc(depth: usize) -> Value {
    let mut contracts = vec![];
    let mut txs = vec![];
    let mut internal = serde_json::Map::new();
    for k in 1..=depth {
        let c = addr(&format!("f{k:02}"));
        let tx = hash(&format!("{k:02}"));
        if k == 1 {
            contracts.push(json!({"address": c.to_string(), "ir": {}, "creation": {"deploy_tx": tx.to_string(), "creator": addr("e0").to_string()}}));
            txs.push(json!({"hash": tx.to_string(), "sender": addr("e0").to_string(), "block_number": k, "timestamp": k}));
        } else {
            let sender = addr(&format!("e{k:02}"));
            let factory = addr(&format!("f{:02}", k - 1));
            contracts.push(json!({"address": c.to_string(), "ir": {}, "creation": {"deploy_tx": tx.to_string(), "creator": sender.to_string()}}));
            txs.push(json!({"hash": tx.to_string(), "sender": sender.to_string(), "to": factory.to_string(), "block_number": k, "timestamp": k}));
            internal.insert(tx.to_string(), json!([
                {"kind": "call", "from": factory.to_string(), "to": addr("77").to_string()},
                {"kind": "create", "from": factory.to_string(), "to": c.to_string()}
            ]));
        }
    }
    json!({"contracts": contracts, "transactions": txs, "internal_txs": internal})
}

pub fn store_of(doc: &Value) -> ChainStore {
    let doc: SnapshotDoc = serde_json::from_value(doc.clone()).unwrap();
    ChainStore::new(ChainSnapshot::from_doc(doc, None).unwrap())
}

/// Independent oracle: walk the raw creation records.
pub fn manual_root(doc: &Value, target: &str) -> String {
    let contracts: HashMap<&str, &Value> =
        doc["contracts"].as_array().unwrap().iter().map(|c| (c["address"].as_str().unwrap(), c)).collect();
    let mut cur = target.to_string();
    loop {
        let c = contracts[cur.as_str()];
        let tx = c["creation"]["deploy_tx"].as_str().unwrap();
        let factory = doc["internal_txs"]
            .get(tx)
            .and_then(|l| l.as_array())
            .and_then(|l| l.iter().find(|e| e["kind"] == "create" && e["to"] == cur.as_str()))
            .map(|e| e["from"].as_str().unwrap().to_string());
        match factory {
            Some(f) => cur = f,
            None => return c["creation"]["creator"].as_str().unwrap().to_string(),
        }
    }
}
