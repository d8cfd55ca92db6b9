use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use super::{is_safe, Analysis, Manipulable};
use crate::ir::{Contract, FunctionMeta, FunctionRef};
use crate::types::TxHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRule {
    AccessControl,
    NonReentrant,
    CrossContract,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EdgeKind {
    /// `from` reads state that `to` writes.
    Dependency { shared: BTreeSet<String> },
    /// `from` was observed calling `to` inside one DApp.
    Call,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Edge {
    pub from: FunctionRef,
    pub to: FunctionRef,
    #[serde(flatten)]
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrunedEdge {
    #[serde(flatten)]
    pub edge: Edge,
    pub rule: PruneRule,
}

/// Implicit-dependency graph of one DApp, seen from one manipulable function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntraDAppGraph {
    pub manipulable: FunctionRef,
    pub nodes: Vec<FunctionRef>,
    pub edges: Vec<Edge>,
    pub pruned_edges: Vec<PrunedEdge>,
    /// The manipulable function is itself guarded and writes state.
    pub manipulable_safe: bool,
}

impl IntraDAppGraph {
    /// Rule-1 edge set, before any pruning.
    pub fn unpruned_edges(&self) -> BTreeSet<&Edge> {
        self.edges.iter().chain(self.pruned_edges.iter().map(|p| &p.edge)).collect()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph intra_dapp {\n");
        self.write_body(&mut out, "  ");
        out.push_str("}\n");
        out
    }

    fn write_body(&self, out: &mut String, indent: &str) {
        let id = |f: &FunctionRef| format!("\"{f}\"");
        for n in &self.nodes {
            let shape = if *n == self.manipulable { "doubleoctagon" } else { "box" };
            let _ = writeln!(out, "{indent}{} [label=\"{}\", shape={shape}];", id(n), n.function);
        }
        let label = |e: &Edge| match &e.kind {
            EdgeKind::Dependency { shared } => shared.iter().cloned().collect::<Vec<_>>().join(","),
            EdgeKind::Call => "call".to_string(),
        };
        for e in &self.edges {
            let _ = writeln!(out, "{indent}{} -> {} [label=\"{}\"];", id(&e.from), id(&e.to), label(e));
        }
        for p in &self.pruned_edges {
            let _ = writeln!(
                out,
                "{indent}{} -> {} [label=\"{} ({:?})\", style=dashed, color=gray];",
                id(&p.edge.from),
                id(&p.edge.to),
                label(&p.edge),
                p.rule
            );
        }
    }
}

fn public_fns(c: &Contract) -> impl Iterator<Item = (&str, &FunctionMeta)> {
    c.ir.functions.iter().filter(|f| f.is_public()).map(move |f| (f.name.as_str(), &c.meta[&f.name]))
}

/// Builds the graph over the public functions of `contracts`.
///
/// Rule 1 links a reader to every other function of its contract that
/// writes a state variable it reads. Rule 2 drops a link when every shared
/// variable is only written under access control. Rule 3 drops links
/// between two `nonReentrant` functions of one contract. Rule 4 handles
/// observed `calls` inside the DApp: a guarded callee that writes state is
/// cut off, any other callee extends the search; a guarded, writing
/// manipulable function loses all its outgoing edges.
pub fn build_intra_dapp_graph(
    contracts: &[Arc<Contract>],
    manipulable: &FunctionRef,
    calls: &[(FunctionRef, FunctionRef)],
) -> IntraDAppGraph {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut pruned = Vec::new();
    let metas: BTreeMap<FunctionRef, &FunctionMeta> = contracts
        .iter()
        .flat_map(|c| public_fns(c).map(move |(n, m)| (FunctionRef::new(c.address(), n), m)))
        .collect();
    let manipulable_safe = metas.get(manipulable).is_some_and(|m| is_safe(m));

    for c in contracts {
        for (rname, rmeta) in public_fns(c) {
            nodes.push(FunctionRef::new(c.address(), rname));
            for (wname, wmeta) in public_fns(c) {
                if rname == wname {
                    continue;
                }
                let shared: BTreeSet<String> = rmeta.reads.intersection(&wmeta.writes).cloned().collect();
                if shared.is_empty() {
                    continue;
                }
                let from = FunctionRef::new(c.address(), rname);
                let to = FunctionRef::new(c.address(), wname);
                let unguarded: BTreeSet<String> = shared.intersection(&wmeta.unguarded_writes).cloned().collect();
                let rule = if unguarded.is_empty() {
                    Some(PruneRule::AccessControl)
                } else if rmeta.non_reentrant && wmeta.non_reentrant {
                    Some(PruneRule::NonReentrant)
                } else if manipulable_safe && from == *manipulable {
                    Some(PruneRule::CrossContract)
                } else {
                    None
                };
                match rule {
                    Some(rule) => pruned.push(PrunedEdge { edge: Edge { from, to, kind: EdgeKind::Dependency { shared } }, rule }),
                    None => edges.push(Edge { from, to, kind: EdgeKind::Dependency { shared: unguarded } }),
                }
            }
        }
    }

    for (from, to) in calls {
        if !metas.contains_key(from) || !metas.contains_key(to) {
            continue;
        }
        let edge = Edge { from: from.clone(), to: to.clone(), kind: EdgeKind::Call };
        if is_safe(metas[to]) || (manipulable_safe && from == manipulable) {
            pruned.push(PrunedEdge { edge, rule: PruneRule::CrossContract });
        } else {
            edges.push(edge);
        }
    }

    nodes.sort();
    edges.sort();
    pruned.sort_by(|a, b| a.edge.cmp(&b.edge));
    IntraDAppGraph { manipulable: manipulable.clone(), nodes, edges, pruned_edges: pruned, manipulable_safe }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateEntry {
    pub entry_fn: FunctionRef,
    pub manipulable_fn: FunctionRef,
    pub shared_state: BTreeSet<String>,
    pub importance: u64,
    pub origin_txs: Vec<TxHash>,
}

/// Writers reachable from the manipulable function over surviving edges.
/// Graph nodes are public functions and a writer is never a view, so every
/// endpoint found this way qualifies.
pub fn candidate_entries(graph: &IntraDAppGraph, m: &Manipulable, importance: u64) -> Vec<CandidateEntry> {
    let mut out: BTreeMap<FunctionRef, BTreeSet<String>> = BTreeMap::new();
    let mut seen = BTreeSet::from([graph.manipulable.clone()]);
    let mut queue = VecDeque::from([graph.manipulable.clone()]);
    while let Some(f) = queue.pop_front() {
        for e in graph.edges.iter().filter(|e| e.from == f) {
            if let EdgeKind::Dependency { shared } = &e.kind {
                out.entry(e.to.clone()).or_default().extend(shared.iter().cloned());
            }
            if seen.insert(e.to.clone()) {
                queue.push_back(e.to.clone());
            }
        }
    }
    out.into_iter()
        .filter(|(entry, _)| *entry != m.function)
        .map(|(entry_fn, shared_state)| CandidateEntry {
            entry_fn,
            manipulable_fn: m.function.clone(),
            shared_state,
            importance,
            origin_txs: m.origin_txs.clone(),
        })
        .collect()
}

pub(super) fn sort_candidates(c: &mut [CandidateEntry]) {
    c.sort_by(|a, b| {
        b.importance
            .cmp(&a.importance)
            .then_with(|| a.manipulable_fn.cmp(&b.manipulable_fn))
            .then_with(|| a.entry_fn.cmp(&b.entry_fn))
    });
}

/// DOT rendering of the victim-to-manipulable flow and every graph.
pub fn render_dot(victim: &str, analysis: &Analysis) -> String {
    let mut out = String::from("digraph rorscan {\n  compound=true;\n");
    let _ = writeln!(out, "  \"victim\" [label=\"{victim}\", shape=house];");
    for m in &analysis.manipulable.functions {
        let _ = writeln!(out, "  \"victim\" -> \"{}\" [label=\"uses\", color=red];", m.function);
    }
    for p in &analysis.manipulable.pruned_calls {
        let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"pruned call\", style=dashed, color=gray];", p.caller, p.callee);
    }
    for (i, g) in analysis.graphs.iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_{i} {{\n    label=\"{}\";", g.manipulable);
        g.write_body(&mut out, "    ");
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}
