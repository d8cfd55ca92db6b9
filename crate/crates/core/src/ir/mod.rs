//! Executable contract representation and static per-function facts.
//!
//! A contract is described by a JSON document with top-level keys
//! `address`, `name`, `state_vars` and `functions`. Function bodies are
//! statement lists over the expression language in [`expr`]. See
//! `docs/ir.md` for the full format.

pub mod abi;
pub mod expr;
pub mod meta;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::Address;

pub use abi::{abi_of, AbiSpec, Selector, Value};
pub use expr::{BinOp, Expr};
pub use meta::{function_meta, is_access_controlled, CallSite, FunctionMeta, SiteKind, TargetKind};
pub use parse::parse_contract;

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("in {function}: unbound identifier `{name}`")]
    Unbound { function: String, name: String },
    #[error("in {function}: unknown state variable `{name}`")]
    UnknownStateVar { function: String, name: String },
    #[error("in {function}: {msg}")]
    Invalid { function: String, msg: String },
    #[error(transparent)]
    Expr(#[from] expr::ExprError),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{0}` is internal and has no ABI")]
    InternalFunction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    #[serde(alias = "uint", alias = "uint256")]
    Uint256,
    Address,
    Bool,
    Bytes,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamType::Uint256 => "uint256",
            ParamType::Address => "address",
            ParamType::Bool => "bool",
            ParamType::Bytes => "bytes",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Scalar,
    Map,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateVar {
    pub name: String,
    pub slot: u64,
    #[serde(default = "default_kind")]
    pub kind: VarKind,
}

fn default_kind() -> VarKind {
    VarKind::Scalar
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Guard {
    NonReentrant,
    /// Only the caller equal to the expression's value may enter.
    AccessControl(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Require {
        cond: Expr,
        reason: String,
    },
    ReadState {
        var: String,
        key: Option<Expr>,
        into: String,
    },
    WriteState {
        var: String,
        key: Option<Expr>,
        value: Expr,
    },
    Call {
        target: Expr,
        signature: String,
        selector: Selector,
        args: Vec<Expr>,
        value: Option<Expr>,
        is_static: bool,
        into: Vec<String>,
    },
    NativeTransfer {
        target: Expr,
        amount: Expr,
    },
    Return(Vec<Expr>),
    If {
        cond: Expr,
        then_branch: Vec<Stmt>,
        else_branch: Vec<Stmt>,
    },
    Let {
        name: String,
        value: Expr,
    },
    /// Intra-contract call; executes in the caller's frame.
    Internal {
        function: String,
        args: Vec<Expr>,
        into: Vec<String>,
    },
}

impl Stmt {
    /// Pre-order visit; the index passed to `f` is the statement's site index.
    pub fn visit_indexed<'a>(body: &'a [Stmt], f: &mut impl FnMut(usize, &'a Stmt)) {
        fn go<'a>(body: &'a [Stmt], next: &mut usize, f: &mut impl FnMut(usize, &'a Stmt)) {
            for s in body {
                let idx = *next;
                *next += 1;
                f(idx, s);
                if let Stmt::If { then_branch, else_branch, .. } = s {
                    go(then_branch, next, f);
                    go(else_branch, next, f);
                }
            }
        }
        let mut next = 0;
        go(body, &mut next, f);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub selector: Selector,
    pub params: Vec<Param>,
    pub visibility: Visibility,
    pub payable: bool,
    pub guards: Vec<Guard>,
    pub body: Vec<Stmt>,
}

impl FunctionDef {
    pub fn signature(&self) -> String {
        let tys: Vec<String> = self.params.iter().map(|p| p.ty.to_string()).collect();
        format!("{}({})", self.name, tys.join(","))
    }

    pub fn is_public(&self) -> bool {
        self.visibility == Visibility::Public
    }

    pub fn non_reentrant(&self) -> bool {
        self.guards.iter().any(|g| matches!(g, Guard::NonReentrant))
    }

    /// Handler run when native funds are sent without calldata.
    pub fn is_receive(&self) -> bool {
        self.name == "receive" && self.params.is_empty() && self.is_public()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractIR {
    pub address: Address,
    pub name: String,
    pub state_vars: Vec<StateVar>,
    pub functions: Vec<FunctionDef>,
}

impl ContractIR {
    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn by_selector(&self, sel: Selector) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.is_public() && f.selector == sel)
    }

    pub fn state_var(&self, name: &str) -> Option<&StateVar> {
        self.state_vars.iter().find(|v| v.name == name)
    }

    pub fn receive(&self) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.is_receive())
    }
}

/// A parsed contract together with the static facts of each function.
#[derive(Debug, Clone)]
pub struct Contract {
    pub ir: ContractIR,
    pub meta: BTreeMap<String, FunctionMeta>,
}

impl Contract {
    pub fn new(ir: ContractIR) -> Self {
        let meta = ir
            .functions
            .iter()
            .map(|f| (f.name.clone(), function_meta(&ir, &f.name).expect("function exists")))
            .collect();
        Contract { ir, meta }
    }

    pub fn address(&self) -> Address {
        self.ir.address
    }

    pub fn name(&self) -> &str {
        &self.ir.name
    }

    pub fn meta(&self, function: &str) -> Option<&FunctionMeta> {
        self.meta.get(function)
    }
}

/// Identifies a function across contracts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FunctionRef {
    pub contract: Address,
    pub function: String,
}

impl FunctionRef {
    pub fn new(contract: Address, function: impl Into<String>) -> Self {
        FunctionRef { contract, function: function.into() }
    }
}

impl fmt::Display for FunctionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.contract, self.function)
    }
}

/// Concrete storage location of a state variable entry. Scalars live at
/// their declared slot; map entries at `keccak256(key . slot)`.
pub fn storage_slot(var: &StateVar, key: Option<crate::types::Word>) -> crate::types::Word {
    use crate::types::Word;
    match (var.kind, key) {
        (VarKind::Map, Some(k)) => {
            let mut buf = [0u8; 64];
            buf[..32].copy_from_slice(&k.to_big_endian());
            buf[32..].copy_from_slice(&Word::from(var.slot).to_big_endian());
            Word::from_big_endian(&abi::keccak256(&buf))
        }
        _ => Word::from(var.slot),
    }
}
