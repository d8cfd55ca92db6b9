//! Static per-function facts: state reads and writes, access-control
//! dominance, and call-site target provenance.
//!
//! Facts are computed over the function body with intra-contract internal
//! calls inlined, so a public function's sets include everything its
//! helpers touch. Provenance flows through locals and internal-call
//! arguments.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{ContractIR, Expr, FunctionDef, Guard, IrError, Stmt};
use crate::ir::BinOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Constant,
    StateDerived,
    SenderDerived,
    ParameterDerived,
}

impl TargetKind {
    /// Whether a caller of the enclosing transaction chooses the target.
    pub fn is_controllable(self) -> bool {
        matches!(self, TargetKind::SenderDerived | TargetKind::ParameterDerived)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Call,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallSite {
    /// Function whose body holds the statement (a helper, for inlined sites).
    pub function: String,
    pub index: usize,
    pub kind: SiteKind,
    pub target_kind: TargetKind,
    pub is_static: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FunctionMeta {
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
    /// Written state variables with at least one write not dominated by access control.
    pub unguarded_writes: BTreeSet<String>,
    pub call_sites: Vec<CallSite>,
    pub guarded_write: bool,
    pub non_reentrant: bool,
    pub payable: bool,
    pub has_params: bool,
    pub is_view: bool,
}

impl FunctionMeta {
    pub fn site(&self, function: &str, index: usize) -> Option<&CallSite> {
        self.call_sites.iter().find(|s| s.function == function && s.index == index)
    }
}

const PARAM: u8 = 1;
const SENDER: u8 = 2;
const STATE: u8 = 4;

fn classify(p: u8) -> TargetKind {
    if p & PARAM != 0 {
        TargetKind::ParameterDerived
    } else if p & SENDER != 0 {
        TargetKind::SenderDerived
    } else if p & STATE != 0 {
        TargetKind::StateDerived
    } else {
        TargetKind::Constant
    }
}

fn provenance(e: &Expr, env: &HashMap<String, u8>) -> u8 {
    let mut p = 0;
    e.walk(&mut |sub| {
        p |= match sub {
            Expr::Var(v) => env.get(v).copied().unwrap_or(0),
            Expr::Sender => SENDER,
            Expr::Value => PARAM,
            Expr::Sload { .. } => STATE,
            _ => 0,
        }
    });
    p
}

fn privileged(e: &Expr) -> bool {
    matches!(e, Expr::Lit(_) | Expr::Sload { key: None, .. })
}

/// `msg.sender == <constant or scalar state var>`, possibly inside a conjunction.
pub(crate) fn is_owner_check(e: &Expr) -> bool {
    match e {
        Expr::Bin(BinOp::Eq, a, b) => {
            (matches!(**a, Expr::Sender) && privileged(b)) || (matches!(**b, Expr::Sender) && privileged(a))
        }
        Expr::Bin(BinOp::And, a, b) => is_owner_check(a) || is_owner_check(b),
        _ => false,
    }
}

struct Walker<'a> {
    contract: &'a ContractIR,
    meta: FunctionMeta,
    sites: BTreeMap<(String, usize), CallSite>,
    non_static_call: bool,
}

impl Walker<'_> {
    fn reads_in(&mut self, e: &Expr) {
        for v in e.state_reads() {
            self.meta.reads.insert(v.to_string());
        }
    }

    fn site(&mut self, function: &str, index: usize, kind: SiteKind, target_kind: TargetKind, is_static: bool) {
        let entry = self.sites.entry((function.to_string(), index)).or_insert(CallSite {
            function: function.to_string(),
            index,
            kind,
            target_kind,
            is_static,
        });
        entry.target_kind = entry.target_kind.max(target_kind);
    }

    fn function(&mut self, f: &FunctionDef, env: &mut HashMap<String, u8>, guarded: bool) -> u8 {
        let mut next = 0;
        self.block(&f.name, &f.body, env, guarded, &mut next)
    }

    /// Returns the union provenance of values returned from this block.
    fn block(
        &mut self,
        fname: &str,
        body: &[Stmt],
        env: &mut HashMap<String, u8>,
        mut guarded: bool,
        next: &mut usize,
    ) -> u8 {
        let mut ret = 0;
        for s in body {
            let idx = *next;
            *next += 1;
            match s {
                Stmt::Require { cond, .. } => {
                    self.reads_in(cond);
                    if is_owner_check(cond) {
                        guarded = true;
                    }
                }
                Stmt::ReadState { var, key, into } => {
                    self.meta.reads.insert(var.clone());
                    let kp = key.as_ref().map_or(0, |k| {
                        self.reads_in(k);
                        provenance(k, env)
                    });
                    env.insert(into.clone(), STATE | kp);
                }
                Stmt::WriteState { var, key, value } => {
                    if let Some(k) = key {
                        self.reads_in(k);
                    }
                    self.reads_in(value);
                    self.meta.writes.insert(var.clone());
                    if !guarded {
                        self.meta.unguarded_writes.insert(var.clone());
                    }
                }
                Stmt::Call { target, args, value, is_static, into, .. } => {
                    self.reads_in(target);
                    args.iter().for_each(|a| self.reads_in(a));
                    if let Some(v) = value {
                        self.reads_in(v);
                    }
                    if !is_static {
                        self.non_static_call = true;
                    }
                    let tk = classify(provenance(target, env));
                    self.site(fname, idx, SiteKind::Call, tk, *is_static);
                    for n in into {
                        env.insert(n.clone(), STATE);
                    }
                }
                Stmt::NativeTransfer { target, amount } => {
                    self.reads_in(target);
                    self.reads_in(amount);
                    self.non_static_call = true;
                    let tk = classify(provenance(target, env));
                    self.site(fname, idx, SiteKind::Transfer, tk, false);
                }
                Stmt::Return(es) => {
                    for e in es {
                        self.reads_in(e);
                        ret |= provenance(e, env);
                    }
                }
                Stmt::If { cond, then_branch, else_branch } => {
                    self.reads_in(cond);
                    let mut then_env = env.clone();
                    let mut else_env = env.clone();
                    ret |= self.block(fname, then_branch, &mut then_env, guarded || is_owner_check(cond), next);
                    ret |= self.block(fname, else_branch, &mut else_env, guarded, next);
                    for (k, v) in env.iter_mut() {
                        *v = then_env[k] | else_env[k];
                    }
                }
                Stmt::Let { name, value } => {
                    self.reads_in(value);
                    env.insert(name.clone(), provenance(value, env));
                }
                Stmt::Internal { function, args, into } => {
                    let callee = self.contract.function(function).expect("validated at parse");
                    let mut callee_env = HashMap::new();
                    for (p, a) in callee.params.iter().zip(args) {
                        self.reads_in(a);
                        callee_env.insert(p.name.clone(), provenance(a, env));
                    }
                    let callee_guarded = guarded || callee.guards.iter().any(|g| matches!(g, Guard::AccessControl(_)));
                    if let Some(Guard::AccessControl(e)) = callee.guards.iter().find(|g| matches!(g, Guard::AccessControl(_))) {
                        self.reads_in(e);
                    }
                    let rp = self.function(callee, &mut callee_env, callee_guarded);
                    for n in into {
                        env.insert(n.clone(), rp);
                    }
                }
            }
        }
        ret
    }
}

pub fn function_meta(contract: &ContractIR, function: &str) -> Result<FunctionMeta, IrError> {
    let f = contract
        .function(function)
        .ok_or_else(|| IrError::UnknownFunction(function.to_string()))?;
    let mut w = Walker { contract, meta: FunctionMeta::default(), sites: BTreeMap::new(), non_static_call: false };
    let mut guarded = false;
    for g in &f.guards {
        if let Guard::AccessControl(e) = g {
            w.reads_in(e);
            guarded = true;
        }
    }
    let mut env: HashMap<String, u8> = f.params.iter().map(|p| (p.name.clone(), PARAM)).collect();
    w.function(f, &mut env, guarded);

    let mut meta = w.meta;
    meta.call_sites = w.sites.into_values().collect();
    meta.guarded_write = meta.unguarded_writes.is_empty();
    meta.non_reentrant = f.non_reentrant();
    meta.payable = f.payable;
    meta.has_params = !f.params.is_empty();
    meta.is_view = meta.writes.is_empty() && !w.non_static_call && !f.payable;
    Ok(meta)
}

/// True when every state write of `function` is dominated by an owner-style
/// check on `msg.sender`. Vacuously true for functions that never write.
pub fn is_access_controlled(contract: &ContractIR, function: &str) -> Result<bool, IrError> {
    function_meta(contract, function).map(|m| m.guarded_write)
}
