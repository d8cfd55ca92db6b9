//! DApp boundary identification from contract-creation lineage.
//!
//! A contract's builder is the account at the root of its creation chain:
//! when a contract was created inside another transaction by a factory
//! contract, the factory's own deployment is followed instead of trusting
//! the recorded creator. Builders are then looked up in a builder dataset
//! to name the DApp.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::chain::{ChainError, ChainStore};
use crate::types::Address;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuilderEntry {
    pub builder: Address,
    pub dapp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DAppIdentity {
    Known(String),
    Unknown,
}

impl DAppIdentity {
    pub fn name(&self) -> Option<&str> {
        match self {
            DAppIdentity::Known(n) => Some(n),
            DAppIdentity::Unknown => None,
        }
    }
}

impl fmt::Display for DAppIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DAppIdentity::Known(n) => f.write_str(n),
            DAppIdentity::Unknown => f.write_str("<unknown>"),
        }
    }
}

impl Serialize for DAppIdentity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.name().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DAppIdentity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Option::<String>::deserialize(d)?.map_or(DAppIdentity::Unknown, DAppIdentity::Known))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Same,
    Different,
}

#[derive(Debug, thiserror::Error)]
pub enum BoundaryError {
    #[error("unknown contract {0}")]
    UnknownContract(Address),
    #[error("creation lineage revisits {0}")]
    Cycle(Address),
    #[error(transparent)]
    Chain(ChainError),
    #[error("builder dataset: {0}")]
    Dataset(String),
}

impl From<ChainError> for BoundaryError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::UnknownContract(a) => BoundaryError::UnknownContract(a),
            e => BoundaryError::Chain(e),
        }
    }
}

/// Resolves the root builder of `addr` by walking factory deployments.
pub fn find_builder(addr: Address, store: &ChainStore) -> Result<Address, BoundaryError> {
    let mut current = addr;
    let mut visited = BTreeSet::from([current]);
    let mut deploy_tx = store.fetch_deployment_tx(current)?;
    let mut creator = store
        .contract_entry(current)
        .map(|e| e.creation.creator)
        .ok_or(BoundaryError::UnknownContract(current))?;
    let mut internal = store.fetch_internal_tx_list(deploy_tx.hash)?;
    while let Some(factory) = internal.creator_of(current) {
        if !visited.insert(factory) {
            return Err(BoundaryError::Cycle(factory));
        }
        current = factory;
        deploy_tx = store.fetch_deployment_tx(current)?;
        creator = store
            .contract_entry(current)
            .map(|e| e.creation.creator)
            .ok_or(BoundaryError::UnknownContract(current))?;
        internal = store.fetch_internal_tx_list(deploy_tx.hash)?;
    }
    Ok(creator)
}

/// Builder dataset plus a per-address memo of resolved identities.
#[derive(Debug, Default)]
pub struct Boundaries {
    builders: BTreeMap<Address, String>,
    memo: RwLock<HashMap<Address, DAppIdentity>>,
}

impl Boundaries {
    pub fn new(entries: &[BuilderEntry]) -> Result<Self, BoundaryError> {
        let mut builders = BTreeMap::new();
        for e in entries {
            if builders.insert(e.builder, e.dapp.clone()).is_some() {
                return Err(BoundaryError::Dataset(format!("builder {} listed twice", e.builder)));
            }
        }
        Ok(Boundaries { builders, memo: RwLock::default() })
    }

    /// An empty dataset: every contract is treated as boundary-external.
    pub fn disabled() -> Self {
        Boundaries::default()
    }

    pub fn is_empty(&self) -> bool {
        self.builders.is_empty()
    }

    pub fn entries(&self) -> Vec<BuilderEntry> {
        self.builders.iter().map(|(b, d)| BuilderEntry { builder: *b, dapp: d.clone() }).collect()
    }

    pub fn resolve_dapp(&self, addr: Address, store: &ChainStore) -> Result<DAppIdentity, BoundaryError> {
        if let Some(id) = self.memo.read().expect("memo lock").get(&addr) {
            return Ok(id.clone());
        }
        let id = if !store.is_contract(addr) {
            DAppIdentity::Unknown
        } else {
            let builder = find_builder(addr, store)?;
            self.builders.get(&builder).cloned().map_or(DAppIdentity::Unknown, DAppIdentity::Known)
        };
        self.memo.write().expect("memo lock").insert(addr, id.clone());
        Ok(id)
    }

    /// Like [`resolve_dapp`](Self::resolve_dapp), mapping resolution failures to `Unknown`.
    pub fn identity(&self, addr: Address, store: &ChainStore) -> DAppIdentity {
        self.resolve_dapp(addr, store).unwrap_or(DAppIdentity::Unknown)
    }

    /// `Same` only when both sides resolve to the same known DApp.
    pub fn same_dapp(&self, a: Address, b: Address, store: &ChainStore) -> Relation {
        match (self.identity(a, store), self.identity(b, store)) {
            (DAppIdentity::Known(x), DAppIdentity::Known(y)) if x == y => Relation::Same,
            _ => Relation::Different,
        }
    }
}

/// Reads a standalone builder dataset (a JSON array of `{builder, dapp}`).
pub fn load_builders(path: impl AsRef<Path>) -> Result<Vec<BuilderEntry>, BoundaryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| BoundaryError::Dataset(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| BoundaryError::Dataset(format!("{}: {e}", path.display())))
}
