//! JSON-RPC 2.0 access to a remote chain-data service.
//!
//! | method                  | params            | result                      |
//! |-------------------------|-------------------|-----------------------------|
//! | `ror_loadSnapshot`      | `[]`              | snapshot document           |
//! | `ror_getDeploymentTx`   | `[address]`       | transaction record          |
//! | `ror_getInternalTxList` | `[hash]`          | internal transaction list   |
//! | `ror_getTransactionsOf` | `[address, n]`    | transaction records         |
//! | `ror_getStorageAt`      | `[address, slot]` | hex word                    |
//! | `ror_getBalance`        | `[address]`       | hex word                    |
//!
//! [`dispatch`] answers these methods from a local [`ChainSnapshot`], so
//! any process holding a snapshot can serve it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde_json::{json, Value as Json};

use super::{ChainBackend, ChainError, ChainSnapshot, ChainStore, InternalTransactionList, SnapshotDoc, TransactionRecord};
use crate::types::{format_word, parse_word, Address, TxHash, Word};

pub struct RpcClient {
    url: String,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl RpcClient {
    pub fn new(url: impl Into<String>) -> Self {
        RpcClient { url: url.into(), agent: ureq::Agent::new_with_defaults(), next_id: AtomicU64::new(1) }
    }

    fn call<T: DeserializeOwned>(&self, method: &str, params: Json) -> Result<T, ChainError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let req = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&req)
            .map_err(|e| ChainError::Rpc(format!("{method}: {e}")))?;
        let body: Json = resp
            .body_mut()
            .read_json()
            .map_err(|e| ChainError::Rpc(format!("{method}: {e}")))?;
        if let Some(err) = body.get("error") {
            return Err(ChainError::Rpc(format!("{method}: {err}")));
        }
        let result = body
            .get("result")
            .cloned()
            .ok_or_else(|| ChainError::Rpc(format!("{method}: response without result")))?;
        serde_json::from_value(result).map_err(|e| ChainError::Rpc(format!("{method}: {e}")))
    }

    pub fn load_snapshot(&self) -> Result<ChainSnapshot, ChainError> {
        let doc: SnapshotDoc = self.call("ror_loadSnapshot", json!([]))?;
        ChainSnapshot::from_doc(doc, None)
    }

    /// Builds a store whose dynamic data is fetched from this endpoint.
    pub fn into_store(self) -> Result<ChainStore, ChainError> {
        let snapshot = Arc::new(self.load_snapshot()?);
        Ok(ChainStore::with_backend(snapshot, Arc::new(self)))
    }
}

fn word(s: String) -> Result<Word, ChainError> {
    parse_word(&s).map_err(|e| ChainError::Rpc(e.to_string()))
}

impl ChainBackend for RpcClient {
    fn deployment_tx(&self, addr: Address) -> Result<TransactionRecord, ChainError> {
        self.call("ror_getDeploymentTx", json!([addr]))
    }

    fn internal_tx_list(&self, hash: TxHash) -> Result<InternalTransactionList, ChainError> {
        self.call("ror_getInternalTxList", json!([hash]))
    }

    fn transactions_of(&self, addr: Address, limit: usize) -> Result<Vec<TransactionRecord>, ChainError> {
        self.call("ror_getTransactionsOf", json!([addr, limit]))
    }

    fn storage(&self, addr: Address, slot: Word) -> Result<Word, ChainError> {
        word(self.call("ror_getStorageAt", json!([addr, format_word(&slot)]))?)
    }

    fn balance(&self, addr: Address) -> Result<Word, ChainError> {
        word(self.call("ror_getBalance", json!([addr]))?)
    }
}

fn param<T: DeserializeOwned>(params: &Json, i: usize) -> Result<T, String> {
    let v = params.get(i).ok_or_else(|| format!("missing parameter {i}"))?;
    serde_json::from_value(v.clone()).map_err(|e| format!("parameter {i}: {e}"))
}

/// Answers one JSON-RPC request from `snapshot`.
pub fn dispatch(snapshot: &ChainSnapshot, request: &Json) -> Json {
    let id = request.get("id").cloned().unwrap_or(Json::Null);
    let params = request.get("params").cloned().unwrap_or_else(|| json!([]));
    let method = request.get("method").and_then(Json::as_str).unwrap_or_default();
    let result: Result<Json, String> = (|| {
        let to_json = |r: Result<Json, ChainError>| r.map_err(|e| e.to_string());
        match method {
            "ror_loadSnapshot" => serde_json::to_value(snapshot.to_doc()).map_err(|e| e.to_string()),
            "ror_getDeploymentTx" => to_json(
                snapshot.deployment_tx(param(&params, 0)?).map(|t| serde_json::to_value(t).expect("serializable")),
            ),
            "ror_getInternalTxList" => to_json(
                snapshot.internal_tx_list(param(&params, 0)?).map(|t| serde_json::to_value(t).expect("serializable")),
            ),
            "ror_getTransactionsOf" => to_json(
                snapshot
                    .transactions_of(param(&params, 0)?, param(&params, 1)?)
                    .map(|t| serde_json::to_value(t).expect("serializable")),
            ),
            "ror_getStorageAt" => {
                let slot = parse_word(&param::<String>(&params, 1)?).map_err(|e| e.to_string())?;
                to_json(snapshot.storage(param(&params, 0)?, slot).map(|w| json!(format_word(&w))))
            }
            "ror_getBalance" => to_json(snapshot.balance(param(&params, 0)?).map(|w| json!(format_word(&w)))),
            other => Err(format!("method not found: {other}")),
        }
    })();
    match result {
        Ok(r) => json!({"jsonrpc": "2.0", "id": id, "result": r}),
        Err(msg) => json!({"jsonrpc": "2.0", "id": id, "error": {"code": -32000, "message": msg}}),
    }
}
