use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Deserialize;

use super::{
    ContractIR, Expr, FunctionDef, Guard, IrError, Param, Selector, StateVar, Stmt, VarKind, Visibility,
};
use crate::types::Address;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContract {
    address: Option<Address>,
    name: Option<String>,
    #[serde(default)]
    state_vars: Vec<StateVar>,
    #[serde(default)]
    functions: Vec<RawFunction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    name: String,
    selector: Option<Selector>,
    #[serde(default)]
    params: Vec<Param>,
    #[serde(default = "public")]
    visibility: Visibility,
    #[serde(default)]
    payable: bool,
    #[serde(default)]
    guards: Vec<RawGuard>,
    #[serde(default)]
    body: Vec<RawStmt>,
}

fn public() -> Visibility {
    Visibility::Public
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawGuard {
    Named(String),
    Caller {
        #[serde(rename = "onlyCaller")]
        only_caller: String,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Into {
    One(String),
    Many(Vec<String>),
}

impl Into {
    fn into_vec(self) -> Vec<String> {
        match self {
            Into::One(s) => vec![s],
            Into::Many(v) => v,
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawStmt {
    require: Option<String>,
    reason: Option<String>,
    read: Option<String>,
    key: Option<String>,
    into: Option<Into>,
    write: Option<String>,
    value: Option<String>,
    call: Option<String>,
    sig: Option<String>,
    selector: Option<Selector>,
    args: Option<Vec<String>>,
    #[serde(rename = "static")]
    is_static: Option<bool>,
    transfer: Option<String>,
    amount: Option<String>,
    #[serde(rename = "return")]
    ret: Option<Vec<String>>,
    #[serde(rename = "if")]
    cond: Option<String>,
    then: Option<Vec<RawStmt>>,
    #[serde(rename = "else")]
    otherwise: Option<Vec<RawStmt>>,
    #[serde(rename = "let")]
    bind: Option<String>,
    internal: Option<String>,
}

/// Parses an IR document. `default_address` is used when the document
/// omits `address` (e.g. when embedded in a snapshot entry).
pub fn parse_contract(doc: &serde_json::Value, default_address: Option<Address>) -> Result<ContractIR, IrError> {
    let raw: RawContract = serde_json::from_value(doc.clone()).map_err(|e| IrError::Schema(e.to_string()))?;
    let address = match (raw.address, default_address) {
        (Some(a), Some(d)) if a != d => {
            return Err(IrError::Schema(format!("document address {a} does not match {d}")))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(IrError::Schema("missing `address`".into())),
    };

    let mut slots = BTreeSet::new();
    let mut names = BTreeSet::new();
    for v in &raw.state_vars {
        if !slots.insert(v.slot) {
            return Err(IrError::Schema(format!("duplicate slot {} (`{}`)", v.slot, v.name)));
        }
        if !names.insert(v.name.as_str()) {
            return Err(IrError::Schema(format!("duplicate state variable `{}`", v.name)));
        }
    }

    let mut functions = Vec::with_capacity(raw.functions.len());
    for rf in raw.functions {
        functions.push(lower_function(rf)?);
    }
    let contract = ContractIR {
        address,
        name: raw.name.unwrap_or_else(|| address.to_string()),
        state_vars: raw.state_vars,
        functions,
    };
    validate(&contract)?;
    Ok(contract)
}

fn lower_function(rf: RawFunction) -> Result<FunctionDef, IrError> {
    let fname = rf.name.clone();
    let guards = rf
        .guards
        .into_iter()
        .map(|g| match g {
            RawGuard::Named(n) if n == "nonReentrant" => Ok(Guard::NonReentrant),
            RawGuard::Named(n) if n == "onlyOwner" => Ok(Guard::AccessControl(Expr::Sload {
                var: "owner".into(),
                key: None,
            })),
            RawGuard::Named(n) => Err(IrError::Invalid { function: fname.clone(), msg: format!("unknown guard `{n}`") }),
            RawGuard::Caller { only_caller } => Ok(Guard::AccessControl(Expr::parse(&only_caller)?)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let body = lower_block(&fname, rf.body)?;
    let mut f = FunctionDef {
        name: rf.name,
        selector: Selector::default(),
        params: rf.params,
        visibility: rf.visibility,
        payable: rf.payable,
        guards,
        body,
    };
    f.selector = rf.selector.unwrap_or_else(|| Selector::from_signature(&f.signature()));
    Ok(f)
}

fn lower_block(function: &str, raw: Vec<RawStmt>) -> Result<Vec<Stmt>, IrError> {
    raw.into_iter().map(|s| lower_stmt(function, s)).collect()
}

fn lower_stmt(function: &str, s: RawStmt) -> Result<Stmt, IrError> {
    let schema = |msg: String| IrError::Invalid { function: function.to_string(), msg };
    let kinds = [
        ("require", s.require.is_some()),
        ("read", s.read.is_some()),
        ("write", s.write.is_some()),
        ("call", s.call.is_some()),
        ("transfer", s.transfer.is_some()),
        ("return", s.ret.is_some()),
        ("if", s.cond.is_some()),
        ("let", s.bind.is_some()),
        ("internal", s.internal.is_some()),
    ];
    let present: Vec<&str> = kinds.iter().filter(|(_, p)| *p).map(|(k, _)| *k).collect();
    let kind = match present.as_slice() {
        [k] => *k,
        [] => return Err(schema("statement has no kind".into())),
        many => return Err(schema(format!("statement mixes kinds {many:?}"))),
    };
    let fields = [
        ("reason", s.reason.is_some()),
        ("key", s.key.is_some()),
        ("into", s.into.is_some()),
        ("value", s.value.is_some()),
        ("sig", s.sig.is_some()),
        ("selector", s.selector.is_some()),
        ("args", s.args.is_some()),
        ("static", s.is_static.is_some()),
        ("amount", s.amount.is_some()),
        ("then", s.then.is_some()),
        ("else", s.otherwise.is_some()),
    ];
    let allowed: &[&str] = match kind {
        "require" => &["reason"],
        "read" => &["key", "into"],
        "write" => &["key", "value"],
        "call" => &["sig", "selector", "args", "value", "static", "into"],
        "transfer" => &["amount"],
        "return" => &[],
        "if" => &["then", "else"],
        "let" => &["value"],
        _ => &["args", "into"],
    };
    if let Some((f, _)) = fields.iter().find(|(f, p)| *p && !allowed.contains(f)) {
        return Err(schema(format!("field `{f}` is not valid on a `{kind}` statement")));
    }
    let opt_expr = |e: Option<String>| e.as_deref().map(Expr::parse).transpose();
    let exprs = |v: Option<Vec<String>>| -> Result<Vec<Expr>, IrError> {
        v.unwrap_or_default().iter().map(|e| Expr::parse(e).map_err(IrError::from)).collect()
    };

    Ok(match kind {
        "require" => Stmt::Require {
            cond: Expr::parse(s.require.as_deref().unwrap())?,
            reason: s.reason.unwrap_or_default(),
        },
        "read" => Stmt::ReadState {
            var: s.read.unwrap(),
            key: opt_expr(s.key)?,
            into: match s.into {
                Some(Into::One(n)) => n,
                _ => return Err(schema("`read` needs a single `into` local".into())),
            },
        },
        "write" => Stmt::WriteState {
            var: s.write.unwrap(),
            key: opt_expr(s.key)?,
            value: opt_expr(s.value)?.ok_or_else(|| schema("`write` needs a `value`".into()))?,
        },
        "call" => {
            let sig = s.sig.ok_or_else(|| schema("`call` needs a `sig`".into()))?;
            Stmt::Call {
                target: Expr::parse(s.call.as_deref().unwrap())?,
                selector: s.selector.unwrap_or_else(|| Selector::from_signature(&sig)),
                signature: sig,
                args: exprs(s.args)?,
                value: opt_expr(s.value)?,
                is_static: s.is_static.unwrap_or(false),
                into: s.into.map(Into::into_vec).unwrap_or_default(),
            }
        }
        "transfer" => Stmt::NativeTransfer {
            target: Expr::parse(s.transfer.as_deref().unwrap())?,
            amount: opt_expr(s.amount)?.ok_or_else(|| schema("`transfer` needs an `amount`".into()))?,
        },
        "return" => Stmt::Return(exprs(s.ret)?),
        "if" => Stmt::If {
            cond: Expr::parse(s.cond.as_deref().unwrap())?,
            then_branch: lower_block(function, s.then.unwrap_or_default())?,
            else_branch: lower_block(function, s.otherwise.unwrap_or_default())?,
        },
        "let" => Stmt::Let {
            name: s.bind.unwrap(),
            value: opt_expr(s.value)?.ok_or_else(|| schema("`let` needs a `value`".into()))?,
        },
        _ => Stmt::Internal {
            function: s.internal.unwrap(),
            args: exprs(s.args)?,
            into: s.into.map(Into::into_vec).unwrap_or_default(),
        },
    })
}

fn validate(c: &ContractIR) -> Result<(), IrError> {
    let mut names = HashSet::new();
    let mut selectors = BTreeMap::new();
    for f in &c.functions {
        if !names.insert(f.name.as_str()) {
            return Err(IrError::Schema(format!("duplicate function `{}`", f.name)));
        }
        if f.is_public() {
            if let Some(other) = selectors.insert(f.selector, f.name.as_str()) {
                return Err(IrError::Schema(format!(
                    "selector {} shared by `{other}` and `{}`",
                    f.selector, f.name
                )));
            }
        }
    }
    for f in &c.functions {
        let mut scope: HashSet<String> = HashSet::new();
        for p in &f.params {
            if !scope.insert(p.name.clone()) {
                return Err(IrError::Invalid { function: f.name.clone(), msg: format!("duplicate parameter `{}`", p.name) });
            }
        }
        let cx = Checker { contract: c, function: &f.name };
        for g in &f.guards {
            if let Guard::AccessControl(e) = g {
                cx.expr(e, &scope)?;
            }
        }
        cx.block(&f.body, &mut scope)?;
    }
    check_internal_acyclic(c)
}

struct Checker<'a> {
    contract: &'a ContractIR,
    function: &'a str,
}

impl Checker<'_> {
    fn invalid(&self, msg: String) -> IrError {
        IrError::Invalid { function: self.function.to_string(), msg }
    }

    fn state(&self, var: &str, has_key: bool) -> Result<(), IrError> {
        let sv = self.contract.state_var(var).ok_or_else(|| IrError::UnknownStateVar {
            function: self.function.to_string(),
            name: var.to_string(),
        })?;
        match (sv.kind, has_key) {
            (VarKind::Map, false) => Err(self.invalid(format!("map `{var}` accessed without a key"))),
            (VarKind::Scalar, true) => Err(self.invalid(format!("scalar `{var}` accessed with a key"))),
            _ => Ok(()),
        }
    }

    fn expr(&self, e: &Expr, scope: &HashSet<String>) -> Result<(), IrError> {
        let mut err = None;
        e.walk(&mut |sub| {
            if err.is_some() {
                return;
            }
            match sub {
                Expr::Var(v) if !scope.contains(v) => {
                    err = Some(IrError::Unbound { function: self.function.to_string(), name: v.clone() })
                }
                Expr::Sload { var, key } => {
                    if let Err(e) = self.state(var, key.is_some()) {
                        err = Some(e);
                    }
                }
                _ => {}
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn block(&self, body: &[Stmt], scope: &mut HashSet<String>) -> Result<(), IrError> {
        for s in body {
            match s {
                Stmt::Require { cond, .. } => self.expr(cond, scope)?,
                Stmt::ReadState { var, key, into } => {
                    self.state(var, key.is_some())?;
                    if let Some(k) = key {
                        self.expr(k, scope)?;
                    }
                    scope.insert(into.clone());
                }
                Stmt::WriteState { var, key, value } => {
                    self.state(var, key.is_some())?;
                    if let Some(k) = key {
                        self.expr(k, scope)?;
                    }
                    self.expr(value, scope)?;
                }
                Stmt::Call { target, args, value, into, .. } => {
                    self.expr(target, scope)?;
                    for a in args {
                        self.expr(a, scope)?;
                    }
                    if let Some(v) = value {
                        self.expr(v, scope)?;
                    }
                    scope.extend(into.iter().cloned());
                }
                Stmt::NativeTransfer { target, amount } => {
                    self.expr(target, scope)?;
                    self.expr(amount, scope)?;
                }
                Stmt::Return(es) => {
                    for e in es {
                        self.expr(e, scope)?;
                    }
                }
                Stmt::If { cond, then_branch, else_branch } => {
                    self.expr(cond, scope)?;
                    self.block(then_branch, &mut scope.clone())?;
                    self.block(else_branch, &mut scope.clone())?;
                }
                Stmt::Let { name, value } => {
                    self.expr(value, scope)?;
                    scope.insert(name.clone());
                }
                Stmt::Internal { function, args, into } => {
                    let callee = self
                        .contract
                        .function(function)
                        .ok_or_else(|| self.invalid(format!("internal call to unknown function `{function}`")))?;
                    if callee.params.len() != args.len() {
                        return Err(self.invalid(format!(
                            "`{function}` takes {} argument(s), {} given",
                            callee.params.len(),
                            args.len()
                        )));
                    }
                    for a in args {
                        self.expr(a, scope)?;
                    }
                    scope.extend(into.iter().cloned());
                }
            }
        }
        Ok(())
    }
}

fn internal_callees(body: &[Stmt]) -> Vec<&str> {
    let mut out = Vec::new();
    Stmt::visit_indexed(body, &mut |_, s| {
        if let Stmt::Internal { function, .. } = s {
            out.push(function.as_str());
        }
    });
    out
}

fn check_internal_acyclic(c: &ContractIR) -> Result<(), IrError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit<'a>(c: &'a ContractIR, name: &'a str, marks: &mut BTreeMap<&'a str, Mark>) -> Result<(), IrError> {
        match marks.get(name) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Active) => {
                return Err(IrError::Invalid { function: name.to_string(), msg: "recursive internal call".into() })
            }
            None => {}
        }
        marks.insert(name, Mark::Active);
        let f = c.function(name).expect("validated");
        for callee in internal_callees(&f.body) {
            visit(c, callee, marks)?;
        }
        marks.insert(name, Mark::Done);
        Ok(())
    }
    let mut marks = BTreeMap::new();
    for f in &c.functions {
        visit(c, &f.name, &mut marks)?;
    }
    Ok(())
}
