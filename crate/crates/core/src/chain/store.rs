use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::{ChainError, ChainSnapshot, ContractEntry, InternalTransactionList, TransactionRecord};
use crate::boundary::BuilderEntry;
use crate::ir::Contract;
use crate::types::{Address, TxHash, Word};

/// Source of dynamic chain data. Implemented by [`ChainSnapshot`] and by
/// the remote [`RpcClient`](super::rpc::RpcClient).
pub trait ChainBackend: Send + Sync {
    fn deployment_tx(&self, addr: Address) -> Result<TransactionRecord, ChainError>;
    fn internal_tx_list(&self, hash: TxHash) -> Result<InternalTransactionList, ChainError>;
    fn transactions_of(&self, addr: Address, limit: usize) -> Result<Vec<TransactionRecord>, ChainError>;
    fn storage(&self, addr: Address, slot: Word) -> Result<Word, ChainError>;
    fn balance(&self, addr: Address) -> Result<Word, ChainError>;
}

impl ChainBackend for ChainSnapshot {
    fn deployment_tx(&self, addr: Address) -> Result<TransactionRecord, ChainError> {
        let entry = self.contract(addr).ok_or(ChainError::UnknownContract(addr))?;
        self.transactions
            .get(&entry.creation.deploy_tx)
            .cloned()
            .ok_or(ChainError::UnknownTransaction(entry.creation.deploy_tx))
    }

    fn internal_tx_list(&self, hash: TxHash) -> Result<InternalTransactionList, ChainError> {
        if !self.transactions.contains_key(&hash) {
            return Err(ChainError::UnknownTransaction(hash));
        }
        Ok(self
            .internal_txs
            .get(&hash)
            .cloned()
            .unwrap_or(InternalTransactionList { parent_hash: hash, entries: Vec::new() }))
    }

    fn transactions_of(&self, addr: Address, limit: usize) -> Result<Vec<TransactionRecord>, ChainError> {
        Ok(self.transactions_to(addr, limit))
    }

    fn storage(&self, addr: Address, slot: Word) -> Result<Word, ChainError> {
        Ok(self.storage.get(&(addr, slot)).copied().unwrap_or_default())
    }

    fn balance(&self, addr: Address) -> Result<Word, ChainError> {
        Ok(self.balances.get(&addr).copied().unwrap_or_default())
    }
}

/// Read-only view of chain data with a local storage cache.
///
/// Contract code and the builder list come from the loaded snapshot;
/// transactions, storage and balances go through the backend. Storage
/// reads are cached per `(address, slot)`.
pub struct ChainStore {
    snapshot: Arc<ChainSnapshot>,
    backend: Arc<dyn ChainBackend>,
    storage_cache: RwLock<HashMap<(Address, Word), Word>>,
    balance_cache: RwLock<HashMap<Address, Word>>,
    backend_reads: AtomicU64,
}

impl std::fmt::Debug for ChainStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChainStore")
            .field("contracts", &self.snapshot.contracts.len())
            .field("backend_reads", &self.backend_reads())
            .finish()
    }
}

impl ChainStore {
    pub fn new(snapshot: ChainSnapshot) -> Self {
        let snapshot = Arc::new(snapshot);
        Self::with_backend(snapshot.clone(), snapshot)
    }

    pub fn with_backend(snapshot: Arc<ChainSnapshot>, backend: Arc<dyn ChainBackend>) -> Self {
        ChainStore {
            snapshot,
            backend,
            storage_cache: RwLock::default(),
            balance_cache: RwLock::default(),
            backend_reads: AtomicU64::new(0),
        }
    }

    pub fn snapshot(&self) -> &ChainSnapshot {
        &self.snapshot
    }

    pub fn contract(&self, addr: Address) -> Option<&Arc<Contract>> {
        self.snapshot.contract(addr).map(|e| &e.contract)
    }

    pub fn contract_entry(&self, addr: Address) -> Option<&ContractEntry> {
        self.snapshot.contract(addr)
    }

    pub fn is_contract(&self, addr: Address) -> bool {
        self.snapshot.contracts.contains_key(&addr)
    }

    pub fn contracts(&self) -> impl Iterator<Item = &Arc<Contract>> {
        self.snapshot.contracts.values().map(|e| &e.contract)
    }

    pub fn builders(&self) -> &[BuilderEntry] {
        &self.snapshot.builders
    }

    pub fn transaction(&self, hash: TxHash) -> Option<&TransactionRecord> {
        self.snapshot.transactions.get(&hash)
    }

    /// The contract's first transaction, i.e. the one that created it.
    pub fn fetch_deployment_tx(&self, addr: Address) -> Result<TransactionRecord, ChainError> {
        if !self.is_contract(addr) {
            return Err(ChainError::UnknownContract(addr));
        }
        self.backend.deployment_tx(addr)
    }

    pub fn fetch_internal_tx_list(&self, hash: TxHash) -> Result<InternalTransactionList, ChainError> {
        self.backend.internal_tx_list(hash)
    }

    /// Up to `limit` most recent transactions sent to `addr`, newest first.
    pub fn fetch_transactions_of(&self, addr: Address, limit: usize) -> Result<Vec<TransactionRecord>, ChainError> {
        if limit == 0 {
            return Ok(Vec::new());
        }
        self.backend.transactions_of(addr, limit)
    }

    /// Storage word at `(addr, slot)`; absent storage reads as zero.
    pub fn fetch_storage(&self, addr: Address, slot: Word) -> Result<Word, ChainError> {
        if let Some(w) = self.storage_cache.read().expect("cache lock").get(&(addr, slot)) {
            return Ok(*w);
        }
        self.backend_reads.fetch_add(1, Ordering::Relaxed);
        let w = self.backend.storage(addr, slot)?;
        self.storage_cache.write().expect("cache lock").insert((addr, slot), w);
        Ok(w)
    }

    pub fn fetch_balance(&self, addr: Address) -> Result<Word, ChainError> {
        if let Some(w) = self.balance_cache.read().expect("cache lock").get(&addr) {
            return Ok(*w);
        }
        self.backend_reads.fetch_add(1, Ordering::Relaxed);
        let w = self.backend.balance(addr)?;
        self.balance_cache.write().expect("cache lock").insert(addr, w);
        Ok(w)
    }

    /// Number of storage/balance reads that missed the cache.
    pub fn backend_reads(&self) -> u64 {
        self.backend_reads.load(Ordering::Relaxed)
    }
}
