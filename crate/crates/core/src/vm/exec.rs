use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::*;
use crate::ir::abi::{decode_args, split_selector};
use crate::ir::{storage_slot, BinOp, Contract, Expr, FunctionDef, Guard, Stmt};

const MAX_DEPTH: usize = 128;

enum Halt {
    Revert(String),
    Abort,
    Fatal(ReplayError),
}

impl From<ChainError> for Halt {
    fn from(e: ChainError) -> Self {
        Halt::Fatal(ReplayError::Store(e))
    }
}

fn revert<T>(msg: impl Into<String>) -> Result<T, Halt> {
    Err(Halt::Revert(msg.into()))
}

enum Flow {
    Next,
    Return(Vec<Value>),
}

/// Keys touched by one (possibly nested) transaction execution.
#[derive(Default)]
struct Level {
    storage: BTreeSet<(Address, Word)>,
    balances: BTreeSet<Address>,
}

/// Live world state shared by a transaction and any transactions the hook
/// injects into it.
pub(super) struct Machine<'a> {
    env: ReplayEnv<'a>,
    storage: BTreeMap<(Address, Word), Word>,
    balances: BTreeMap<Address, Word>,
    locks: BTreeSet<Address>,
    levels: Vec<Level>,
}

/// Per-transaction execution log.
struct Exec<'h> {
    records: Vec<ContextRecord>,
    points: Vec<HijackPoint>,
    seq: u64,
    block_number: u64,
    timestamp: u64,
    hook: Option<&'h mut dyn HijackHook>,
}

struct Frame {
    contract: Arc<Contract>,
    /// Function reported as the record frame; internal helpers run in their caller's frame.
    function: String,
    sender: Address,
    value: Word,
    is_static: bool,
    depth: usize,
}

impl Frame {
    fn address(&self) -> Address {
        self.contract.address()
    }

    fn frame_ref(&self) -> FunctionRef {
        FunctionRef::new(self.address(), self.function.clone())
    }
}

type Locals = HashMap<String, Value>;

const STACK_RED_ZONE: usize = 256 * 1024;
const STACK_SEGMENT: usize = 4 * 1024 * 1024;

fn stmt_size(s: &Stmt) -> usize {
    match s {
        Stmt::If { then_branch, else_branch, .. } => 1 + block_size(then_branch) + block_size(else_branch),
        _ => 1,
    }
}

fn block_size(b: &[Stmt]) -> usize {
    b.iter().map(stmt_size).sum()
}

fn as_word(v: &Value) -> Result<Word, Halt> {
    v.word().ok_or_else(|| Halt::Revert("bytes value used as a word".into()))
}

fn truthy(w: Word) -> bool {
    !w.is_zero()
}

fn flag(b: bool) -> Word {
    if b {
        Word::one()
    } else {
        Word::zero()
    }
}

fn binop(op: BinOp, a: Word, b: Word) -> Word {
    match op {
        BinOp::Add => a.overflowing_add(b).0,
        BinOp::Sub => a.overflowing_sub(b).0,
        BinOp::Mul => a.overflowing_mul(b).0,
        BinOp::Div => a.checked_div(b).unwrap_or_default(),
        BinOp::Rem => a.checked_rem(b).unwrap_or_default(),
        BinOp::Lt => flag(a < b),
        BinOp::Le => flag(a <= b),
        BinOp::Gt => flag(a > b),
        BinOp::Ge => flag(a >= b),
        BinOp::Eq => flag(a == b),
        BinOp::Ne => flag(a != b),
        BinOp::And => flag(truthy(a) && truthy(b)),
        BinOp::Or => flag(truthy(a) || truthy(b)),
    }
}

/// Handle given to a [`HijackHook`] for running transactions mid-execution.
pub struct HijackContext<'m, 'a> {
    m: &'m mut Machine<'a>,
}

impl HijackContext<'_, '_> {
    /// Executes `tx` against the in-flight state without a hook. Locks held
    /// by the paused transaction stay held. A revert undoes only the
    /// effects of `tx` itself.
    pub fn execute(&mut self, tx: &TransactionRecord) -> Result<ExecutionTrace, ReplayError> {
        self.m.run_tx(tx, None)
    }
}

impl<'a> Machine<'a> {
    pub(super) fn new(env: ReplayEnv<'a>) -> Self {
        Machine {
            env,
            storage: BTreeMap::new(),
            balances: BTreeMap::new(),
            locks: BTreeSet::new(),
            levels: Vec::new(),
        }
    }

    pub(super) fn run_tx(
        &mut self,
        tx: &TransactionRecord,
        hook: Option<&mut dyn HijackHook>,
    ) -> Result<ExecutionTrace, ReplayError> {
        let to = tx.to.ok_or(ReplayError::UnknownContract(tx.hash))?;
        let contract = self.env.store.contract(to).ok_or(ReplayError::UnknownContract(tx.hash))?.clone();
        let (function, args) = if tx.calldata.is_empty() {
            match contract.ir.receive() {
                Some(f) => (Some(f.name.clone()), Vec::new()),
                None => (None, Vec::new()),
            }
        } else {
            let (sel, data) = split_selector(&tx.calldata).map_err(|e| ReplayError::MalformedCalldata(e.to_string()))?;
            let f = contract
                .ir
                .by_selector(sel)
                .ok_or(ReplayError::UnknownSelector { contract: to, selector: sel })?;
            let types: Vec<_> = f.params.iter().map(|p| p.ty).collect();
            let args = decode_args(&types, data).map_err(|e| ReplayError::MalformedCalldata(e.to_string()))?;
            (Some(f.name.clone()), args)
        };

        let saved = (self.storage.clone(), self.balances.clone(), self.locks.clone());
        self.levels.push(Level::default());
        let mut ex = Exec {
            records: Vec::new(),
            points: Vec::new(),
            seq: 0,
            block_number: tx.block_number,
            timestamp: tx.timestamp,
            hook,
        };

        // The outer sender's funds are not modelled; value is simply credited.
        let result = self.credit(to, tx.value).and_then(|()| match &function {
            Some(name) => {
                let f = contract.ir.function(name).expect("resolved above");
                let frame = Frame {
                    contract: contract.clone(),
                    function: name.clone(),
                    sender: tx.sender,
                    value: tx.value,
                    is_static: false,
                    depth: 0,
                };
                self.call_function(&mut ex, &frame, f, args)
            }
            None => Ok(Vec::new()),
        });

        let level = self.levels.pop().expect("pushed above");
        let (outcome, state_overlay, balance_overlay) = match result {
            Ok(ret) => {
                let st = level.storage.iter().map(|k| (*k, self.storage[k])).collect();
                let bal = level.balances.iter().map(|a| (*a, self.balances[a])).collect();
                if let Some(parent) = self.levels.last_mut() {
                    parent.storage.extend(level.storage);
                    parent.balances.extend(level.balances);
                }
                (Outcome::Success(ret), st, bal)
            }
            Err(halt) => {
                (self.storage, self.balances, self.locks) = saved;
                match halt {
                    Halt::Revert(r) => (Outcome::Revert(r), BTreeMap::new(), BTreeMap::new()),
                    Halt::Abort => (Outcome::Revert("aborted by hijack hook".into()), BTreeMap::new(), BTreeMap::new()),
                    Halt::Fatal(e) => return Err(e),
                }
            }
        };
        Ok(ExecutionTrace {
            tx: tx.hash,
            records: ex.records,
            outcome,
            state_overlay,
            balance_overlay,
            hijack_points: ex.points,
        })
    }

    fn sload(&mut self, addr: Address, slot: Word) -> Result<Word, Halt> {
        match self.storage.get(&(addr, slot)) {
            Some(w) => Ok(*w),
            None => Ok(self.env.store.fetch_storage(addr, slot)?),
        }
    }

    fn sstore(&mut self, addr: Address, slot: Word, value: Word) {
        self.storage.insert((addr, slot), value);
        self.levels.last_mut().expect("inside a transaction").storage.insert((addr, slot));
    }

    fn balance(&mut self, addr: Address) -> Result<Word, Halt> {
        match self.balances.get(&addr) {
            Some(w) => Ok(*w),
            None => Ok(self.env.store.fetch_balance(addr)?),
        }
    }

    fn set_balance(&mut self, addr: Address, w: Word) {
        self.balances.insert(addr, w);
        self.levels.last_mut().expect("inside a transaction").balances.insert(addr);
    }

    fn credit(&mut self, addr: Address, amount: Word) -> Result<(), Halt> {
        if amount.is_zero() {
            return Ok(());
        }
        let b = self.balance(addr)?;
        match b.checked_add(amount) {
            Some(n) => {
                self.set_balance(addr, n);
                Ok(())
            }
            None => revert("balance overflow"),
        }
    }

    fn move_value(&mut self, from: Address, to: Address, amount: Word) -> Result<(), Halt> {
        if amount.is_zero() {
            return Ok(());
        }
        let b = self.balance(from)?;
        if b < amount {
            return revert("insufficient balance");
        }
        self.set_balance(from, b - amount);
        self.credit(to, amount)
    }

    fn emit(&mut self, ex: &mut Exec<'_>, target: Address, operation: Operation, detail: Detail, frame: &Frame) -> u64 {
        let seq = ex.seq;
        ex.seq += 1;
        let dapp = self.env.dapp_of(target);
        ex.records.push(ContextRecord {
            seq,
            target: Target { address: target, dapp },
            operation,
            detail,
            frame: frame.frame_ref(),
            depth: frame.depth,
        });
        seq
    }

    /// Runs a public entry (or `receive`) in a fresh frame: payability, guards, body.
    fn call_function(
        &mut self,
        ex: &mut Exec<'_>,
        frame: &Frame,
        f: &FunctionDef,
        args: Vec<Value>,
    ) -> Result<Vec<Value>, Halt> {
        if !frame.value.is_zero() && !f.payable {
            return revert(format!("{} is not payable", f.name));
        }
        // Nested calls recurse natively; grow the stack instead of
        // overflowing near the depth limit.
        stacker::maybe_grow(STACK_RED_ZONE, STACK_SEGMENT, || self.run_body(ex, frame, f, args))
    }

    /// Applies guards, binds parameters and executes `f`'s body in `frame`.
    fn run_body(&mut self, ex: &mut Exec<'_>, frame: &Frame, f: &FunctionDef, args: Vec<Value>) -> Result<Vec<Value>, Halt> {
        let mut locals: Locals = f.params.iter().map(|p| p.name.clone()).zip(args).collect();
        let mut locked = false;
        for g in &f.guards {
            match g {
                Guard::AccessControl(e) => {
                    let allowed = self.eval_word(ex, frame, &locals, e)?;
                    if allowed != frame.sender.to_word() {
                        return revert("caller is not authorized");
                    }
                }
                Guard::NonReentrant => {
                    if self.locks.contains(&frame.address()) {
                        return revert("reentrant call");
                    }
                    // A static frame only checks the lock.
                    if !frame.is_static {
                        self.locks.insert(frame.address());
                        locked = true;
                    }
                }
            }
        }
        let flow = self.exec_block(ex, frame, &mut locals, &f.name, &f.body, 0)?;
        if locked {
            self.locks.remove(&frame.address());
        }
        Ok(match flow {
            Flow::Return(v) => v,
            Flow::Next => Vec::new(),
        })
    }

    fn exec_block(
        &mut self,
        ex: &mut Exec<'_>,
        frame: &Frame,
        locals: &mut Locals,
        body_fn: &str,
        body: &[Stmt],
        base: usize,
    ) -> Result<Flow, Halt> {
        let mut next = base;
        for s in body {
            let idx = next;
            next += stmt_size(s);
            match s {
                Stmt::Require { cond, reason } => {
                    if !truthy(self.eval_word(ex, frame, locals, cond)?) {
                        return revert(reason.clone());
                    }
                }
                Stmt::ReadState { var, key, into } => {
                    let key = match key {
                        Some(k) => Some(self.eval_word(ex, frame, locals, k)?),
                        None => None,
                    };
                    let w = self.read_var(ex, frame, var, key)?;
                    locals.insert(into.clone(), Value::Word(w));
                }
                Stmt::WriteState { var, key, value } => {
                    let key = match key {
                        Some(k) => Some(self.eval_word(ex, frame, locals, k)?),
                        None => None,
                    };
                    let v = self.eval_word(ex, frame, locals, value)?;
                    if frame.is_static {
                        return revert("state write in static call");
                    }
                    let sv = frame.contract.ir.state_var(var).expect("validated at parse");
                    let slot = storage_slot(sv, key);
                    self.sstore(frame.address(), slot, v);
                    let detail = Detail::Slot(SlotDetail { var: var.clone(), key, slot, value: v });
                    self.emit(ex, frame.address(), Operation::Write, detail, frame);
                }
                Stmt::Call { target, selector, args, value, is_static, into, .. } => {
                    let target = Address::from_word(self.eval_word(ex, frame, locals, target)?);
                    let mut argv = Vec::with_capacity(args.len());
                    for a in args {
                        argv.push(self.eval(ex, frame, locals, a)?);
                    }
                    let value = match value {
                        Some(v) => self.eval_word(ex, frame, locals, v)?,
                        None => Word::zero(),
                    };
                    let ret = self.external_call(ex, frame, body_fn, idx, target, *selector, argv, value, *is_static)?;
                    for (i, name) in into.iter().enumerate() {
                        locals.insert(name.clone(), ret.get(i).cloned().unwrap_or(Value::Word(Word::zero())));
                    }
                }
                Stmt::NativeTransfer { target, amount } => {
                    let target = Address::from_word(self.eval_word(ex, frame, locals, target)?);
                    let amount = self.eval_word(ex, frame, locals, amount)?;
                    self.transfer(ex, frame, body_fn, idx, target, amount)?;
                }
                Stmt::Return(es) => {
                    let mut out = Vec::with_capacity(es.len());
                    for e in es {
                        out.push(self.eval(ex, frame, locals, e)?);
                    }
                    return Ok(Flow::Return(out));
                }
                Stmt::If { cond, then_branch, else_branch } => {
                    let c = truthy(self.eval_word(ex, frame, locals, cond)?);
                    // Branch-local bindings do not escape the branch.
                    let mut inner = locals.clone();
                    let flow = if c {
                        self.exec_block(ex, frame, &mut inner, body_fn, then_branch, idx + 1)?
                    } else {
                        self.exec_block(ex, frame, &mut inner, body_fn, else_branch, idx + 1 + block_size(then_branch))?
                    };
                    for (k, v) in locals.iter_mut() {
                        *v = inner.remove(k).expect("outer locals survive");
                    }
                    if let Flow::Return(v) = flow {
                        return Ok(Flow::Return(v));
                    }
                }
                Stmt::Let { name, value } => {
                    let v = self.eval(ex, frame, locals, value)?;
                    locals.insert(name.clone(), v);
                }
                Stmt::Internal { function, args, into } => {
                    let callee = frame.contract.ir.function(function).expect("validated at parse");
                    let mut argv = Vec::with_capacity(args.len());
                    for a in args {
                        argv.push(self.eval(ex, frame, locals, a)?);
                    }
                    let ret = self.run_body(ex, frame, callee, argv)?;
                    for (i, name) in into.iter().enumerate() {
                        locals.insert(name.clone(), ret.get(i).cloned().unwrap_or(Value::Word(Word::zero())));
                    }
                }
            }
        }
        Ok(Flow::Next)
    }

    fn read_var(&mut self, ex: &mut Exec<'_>, frame: &Frame, var: &str, key: Option<Word>) -> Result<Word, Halt> {
        let sv = frame.contract.ir.state_var(var).expect("validated at parse");
        let slot = storage_slot(sv, key);
        let w = self.sload(frame.address(), slot)?;
        let detail = Detail::Slot(SlotDetail { var: var.to_string(), key, slot, value: w });
        self.emit(ex, frame.address(), Operation::Read, detail, frame);
        Ok(w)
    }

    fn site(frame: &Frame, body_fn: &str, idx: usize) -> SiteRef {
        SiteRef { contract: frame.address(), function: body_fn.to_string(), index: idx }
    }

    fn controllable(frame: &Frame, body_fn: &str, idx: usize) -> bool {
        frame
            .contract
            .meta(&frame.function)
            .and_then(|m| m.site(body_fn, idx))
            .is_some_and(|s| s.target_kind.is_controllable())
    }

    /// Records a hijack point for a controllable site and runs the hook, if any.
    fn maybe_hijack(
        &mut self,
        ex: &mut Exec<'_>,
        frame: &Frame,
        site: SiteRef,
        seq: u64,
        recipient: Address,
    ) -> Result<(), Halt> {
        if !Self::controllable(frame, &site.function, site.index) {
            return Ok(());
        }
        let point = HijackPoint { seq, site, recipient };
        ex.points.push(point.clone());
        if let Some(hook) = ex.hook.take() {
            let action = hook.on_hijack(&point, &mut HijackContext { m: self });
            ex.hook = Some(hook);
            if action == HookAction::Abort {
                return Err(Halt::Abort);
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn external_call(
        &mut self,
        ex: &mut Exec<'_>,
        frame: &Frame,
        body_fn: &str,
        idx: usize,
        target: Address,
        selector: Selector,
        args: Vec<Value>,
        value: Word,
        is_static: bool,
    ) -> Result<Vec<Value>, Halt> {
        if frame.depth + 1 >= MAX_DEPTH {
            return revert("call depth exceeded");
        }
        if frame.is_static && !value.is_zero() {
            return revert("value transfer in static call");
        }
        let callee = self.env.store.contract(target).cloned();
        let func = callee.as_ref().and_then(|c| c.ir.by_selector(selector).cloned());
        self.move_value(frame.address(), target, value)?;
        let site = Self::site(frame, body_fn, idx);
        let detail = Detail::Call(CallDetail {
            callee: target,
            function: func.as_ref().map(|f| f.name.clone()),
            selector: Some(selector),
            is_static,
            value,
            kind: SiteKind::Call,
            site: site.clone(),
        });
        let seq = self.emit(ex, target, Operation::Invoke, detail, frame);
        self.maybe_hijack(ex, frame, site, seq, target)?;

        let Some(callee) = callee else {
            return Ok(Vec::new());
        };
        let Some(f) = func else {
            return revert(format!("{target} has no function {selector}"));
        };
        if f.params.len() != args.len() {
            return revert(format!("{} expects {} argument(s)", f.name, f.params.len()));
        }
        let inner = Frame {
            contract: callee,
            function: f.name.clone(),
            sender: frame.address(),
            value,
            is_static: frame.is_static || is_static,
            depth: frame.depth + 1,
        };
        self.call_function(ex, &inner, &f, args)
    }

    fn transfer(
        &mut self,
        ex: &mut Exec<'_>,
        frame: &Frame,
        body_fn: &str,
        idx: usize,
        target: Address,
        amount: Word,
    ) -> Result<(), Halt> {
        if frame.is_static {
            return revert("transfer in static call");
        }
        if frame.depth + 1 >= MAX_DEPTH {
            return revert("call depth exceeded");
        }
        self.move_value(frame.address(), target, amount)?;
        let callee = self.env.store.contract(target).cloned();
        let receive = callee.as_ref().and_then(|c| c.ir.receive().cloned());
        let site = Self::site(frame, body_fn, idx);
        let detail = Detail::Call(CallDetail {
            callee: target,
            function: receive.as_ref().map(|f| f.name.clone()),
            selector: None,
            is_static: false,
            value: amount,
            kind: SiteKind::Transfer,
            site: site.clone(),
        });
        let seq = self.emit(ex, target, Operation::Invoke, detail, frame);
        self.maybe_hijack(ex, frame, site, seq, target)?;
        if let (Some(callee), Some(f)) = (callee, receive) {
            let inner = Frame {
                contract: callee,
                function: f.name.clone(),
                sender: frame.address(),
                value: amount,
                is_static: false,
                depth: frame.depth + 1,
            };
            self.call_function(ex, &inner, &f, Vec::new())?;
        }
        Ok(())
    }

    fn eval_word(&mut self, ex: &mut Exec<'_>, frame: &Frame, locals: &Locals, e: &Expr) -> Result<Word, Halt> {
        let v = self.eval(ex, frame, locals, e)?;
        as_word(&v)
    }

    fn eval(&mut self, ex: &mut Exec<'_>, frame: &Frame, locals: &Locals, e: &Expr) -> Result<Value, Halt> {
        let w = match e {
            Expr::Lit(w) => *w,
            Expr::Var(name) => {
                return Ok(locals.get(name).cloned().unwrap_or(Value::Word(Word::zero())));
            }
            Expr::Sender => frame.sender.to_word(),
            Expr::Value => frame.value,
            Expr::SelfAddr => frame.address().to_word(),
            Expr::Timestamp => Word::from(ex.timestamp),
            Expr::BlockNumber => Word::from(ex.block_number),
            Expr::Sload { var, key } => {
                let key = match key {
                    Some(k) => Some(self.eval_word(ex, frame, locals, k)?),
                    None => None,
                };
                self.read_var(ex, frame, var, key)?
            }
            Expr::Not(a) => flag(!truthy(self.eval_word(ex, frame, locals, a)?)),
            Expr::Len(a) => match self.eval(ex, frame, locals, a)? {
                Value::Bytes(b) => Word::from(b.len()),
                Value::Word(_) => Word::from(32u8),
            },
            Expr::Bin(op, a, b) => {
                let x = self.eval_word(ex, frame, locals, a)?;
                match op {
                    BinOp::And if !truthy(x) => Word::zero(),
                    BinOp::Or if truthy(x) => Word::one(),
                    _ => {
                        let y = self.eval_word(ex, frame, locals, b)?;
                        binop(*op, x, y)
                    }
                }
            }
        };
        Ok(Value::Word(w))
    }
}
