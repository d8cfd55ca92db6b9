//! Cross-DApp analysis over replayed victim transactions: which functions of
//! other DApps the victim depends on, how heavily, and which public writers
//! in those DApps can change what they return.

mod graph;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::boundary::{DAppIdentity, Relation};
use crate::chain::{ChainError, TransactionRecord};
use crate::ir::{FunctionMeta, FunctionRef};
use crate::types::{Address, TxHash};
use crate::vm::{replay, ExecutionTrace, Operation, ReplayEnv};

pub use graph::{
    build_intra_dapp_graph, candidate_entries, render_dot, CandidateEntry, Edge, EdgeKind, IntraDAppGraph, PruneRule,
    PrunedEdge,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("victim {0} is not a known contract")]
    UnknownVictim(Address),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Clone)]
pub struct OriginTrace {
    pub tx: TransactionRecord,
    pub trace: ExecutionTrace,
}

impl OriginTrace {
    pub fn reverted(&self) -> bool {
        self.trace.reverted()
    }
}

#[derive(Debug, Clone)]
pub struct ContextDataset {
    pub victim: Address,
    pub victim_dapp: DAppIdentity,
    pub traces: Vec<OriginTrace>,
    /// Transactions that could not be replayed at all, with the reason.
    pub skipped: Vec<(TxHash, String)>,
}

impl ContextDataset {
    pub fn revert_count(&self) -> usize {
        self.traces.iter().filter(|t| t.reverted()).count()
    }
}

/// Replays the `limit` most recent transactions sent to `victim`.
pub fn collect_contextual_data(
    victim: Address,
    limit: usize,
    env: ReplayEnv<'_>,
) -> Result<ContextDataset, AnalysisError> {
    if !env.store.is_contract(victim) {
        return Err(AnalysisError::UnknownVictim(victim));
    }
    let victim_dapp = env.dapp_of(victim);
    let mut traces = Vec::new();
    let mut skipped = Vec::new();
    for tx in env.store.fetch_transactions_of(victim, limit)? {
        match replay(&tx, env) {
            Ok(trace) => traces.push(OriginTrace { tx, trace }),
            Err(e) => {
                log::warn!("skipping {}: {e}", tx.hash);
                skipped.push((tx.hash, e.to_string()));
            }
        }
    }
    Ok(ContextDataset { victim, victim_dapp, traces, skipped })
}

/// An access-controlled function that actually writes state. View functions
/// pass the access-control test vacuously and are not treated as safe.
pub(crate) fn is_safe(meta: &FunctionMeta) -> bool {
    meta.guarded_write && !meta.writes.is_empty()
}

fn meta_of<'e>(env: &ReplayEnv<'e>, f: &FunctionRef) -> Option<&'e FunctionMeta> {
    env.store.contract(f.contract).and_then(|c| c.meta(&f.function))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manipulable {
    pub function: FunctionRef,
    pub dapp: DAppIdentity,
    pub is_view: bool,
    /// Successfully replayed origin transactions whose traces touch the function.
    pub origin_txs: Vec<TxHash>,
}

/// A call from one function into a guarded function of its own DApp,
/// whose subtree was left out of the search.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PrunedCall {
    pub caller: FunctionRef,
    pub callee: FunctionRef,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManipulableSet {
    pub functions: Vec<Manipulable>,
    pub pruned_calls: Vec<PrunedCall>,
}

/// Functions outside the victim's DApp that the victim's traces invoke or
/// run code in. Calls into guarded same-DApp functions are cut together
/// with everything they call.
pub fn find_manipulable_functions(ds: &ContextDataset, env: ReplayEnv<'_>) -> ManipulableSet {
    let mut found: BTreeMap<FunctionRef, BTreeSet<TxHash>> = BTreeMap::new();
    let mut pruned = BTreeSet::new();
    let foreign = |f: &FunctionRef| {
        f.contract != ds.victim && env.boundaries.same_dapp(ds.victim, f.contract, env.store) == Relation::Different
    };
    for ot in &ds.traces {
        let mut skip_below: Option<usize> = None;
        for r in &ot.trace.records {
            match skip_below {
                Some(d) if r.depth > d => continue,
                _ => skip_below = None,
            }
            let touched = match r.operation {
                Operation::Invoke => {
                    let Some(callee) = r.callee_ref() else { continue };
                    let same = env.boundaries.same_dapp(r.frame.contract, callee.contract, env.store) == Relation::Same;
                    if same && meta_of(&env, &callee).is_some_and(is_safe) {
                        pruned.insert(PrunedCall { caller: r.frame.clone(), callee });
                        skip_below = Some(r.depth);
                        continue;
                    }
                    callee
                }
                Operation::Read | Operation::Write => r.frame.clone(),
            };
            if foreign(&touched) {
                let origins = found.entry(touched).or_default();
                if !ot.reverted() {
                    origins.insert(ot.tx.hash);
                }
            }
        }
    }
    let functions = found
        .into_iter()
        .map(|(function, origins)| Manipulable {
            dapp: env.dapp_of(function.contract),
            is_view: meta_of(&env, &function).is_some_and(|m| m.is_view),
            origin_txs: order_like(ds, &origins),
            function,
        })
        .collect();
    ManipulableSet { functions, pruned_calls: pruned.into_iter().collect() }
}

/// Keeps dataset order (newest first) for a set of hashes.
fn order_like(ds: &ContextDataset, set: &BTreeSet<TxHash>) -> Vec<TxHash> {
    ds.traces.iter().map(|t| t.tx.hash).filter(|h| set.contains(h)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UsageStats {
    pub function: FunctionRef,
    pub dapp: DAppIdentity,
    pub is_view: bool,
    pub c_invoke: u64,
    pub c_read: u64,
    pub c_write: u64,
    pub importance: u64,
}

/// Importance of each function: invokes targeting it plus reads and writes
/// made while its frame was active, over every trace. Sorted by importance
/// descending, then by (address, name).
pub fn rank_manipulable(ds: &ContextDataset, fns: &[Manipulable]) -> Vec<UsageStats> {
    let mut stats: BTreeMap<&FunctionRef, (u64, u64, u64)> = fns.iter().map(|m| (&m.function, (0, 0, 0))).collect();
    for ot in &ds.traces {
        for r in &ot.trace.records {
            match r.operation {
                Operation::Invoke => {
                    if let Some(c) = r.callee_ref() {
                        if let Some(s) = stats.get_mut(&c) {
                            s.0 += 1;
                        }
                    }
                }
                Operation::Read => {
                    if let Some(s) = stats.get_mut(&r.frame) {
                        s.1 += 1;
                    }
                }
                Operation::Write => {
                    if let Some(s) = stats.get_mut(&r.frame) {
                        s.2 += 1;
                    }
                }
            }
        }
    }
    let mut out: Vec<UsageStats> = fns
        .iter()
        .map(|m| {
            let (i, r, w) = stats[&m.function];
            UsageStats {
                function: m.function.clone(),
                dapp: m.dapp.clone(),
                is_view: m.is_view,
                c_invoke: i,
                c_read: r,
                c_write: w,
                importance: i + r + w,
            }
        })
        .collect();
    out.sort_by(|a, b| b.importance.cmp(&a.importance).then_with(|| a.function.cmp(&b.function)));
    out
}

/// Caller → callees observed in invoke records, across all traces.
pub fn observed_calls(ds: &ContextDataset) -> BTreeMap<FunctionRef, BTreeSet<FunctionRef>> {
    let mut calls: BTreeMap<FunctionRef, BTreeSet<FunctionRef>> = BTreeMap::new();
    for ot in &ds.traces {
        for r in &ot.trace.records {
            if let Some(c) = r.callee_ref() {
                calls.entry(r.frame.clone()).or_default().insert(c);
            }
        }
    }
    calls
}

/// Everything the static stage produces for one victim.
#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub manipulable: ManipulableSet,
    pub ranking: Vec<UsageStats>,
    pub graphs: Vec<IntraDAppGraph>,
    pub candidates: Vec<CandidateEntry>,
}

/// Runs manipulable discovery, ranking, graph construction and candidate
/// extraction over a collected dataset.
pub fn analyze(ds: &ContextDataset, env: ReplayEnv<'_>) -> Analysis {
    let manipulable = find_manipulable_functions(ds, env);
    let ranking = rank_manipulable(ds, &manipulable.functions);
    let calls = observed_calls(ds);
    let mut graphs = Vec::new();
    let mut candidates = Vec::new();
    for stats in &ranking {
        let m = manipulable.functions.iter().find(|m| m.function == stats.function).expect("ranked from set");
        let group: Vec<_> = match &m.dapp {
            DAppIdentity::Known(name) => env
                .store
                .contracts()
                .filter(|c| env.dapp_of(c.address()).name() == Some(name))
                .cloned()
                .collect(),
            DAppIdentity::Unknown => env.store.contract(m.function.contract).into_iter().cloned().collect(),
        };
        // Callees reachable through observed calls that stay inside the DApp.
        let mut callees = BTreeSet::new();
        let mut stack = vec![m.function.clone()];
        while let Some(f) = stack.pop() {
            for c in calls.get(&f).into_iter().flatten() {
                let same = env.boundaries.same_dapp(f.contract, c.contract, env.store) == Relation::Same;
                if same && c != &m.function && callees.insert((f.clone(), c.clone())) {
                    stack.push(c.clone());
                }
            }
        }
        let callees: Vec<_> = callees.into_iter().collect();
        let g = build_intra_dapp_graph(&group, &m.function, &callees);
        candidates.extend(candidate_entries(&g, m, stats.importance));
        graphs.push(g);
    }
    graph::sort_candidates(&mut candidates);
    Analysis { manipulable, ranking, graphs, candidates }
}
