//! Random contract worlds for differential checks of the replay engine.
//!
//! Literal call targets only point at higher-numbered contracts and every
//! function holds at most one call with a runtime-chosen target, so nested
//! execution stays linear even when such calls recurse.

use rand::seq::SliceRandom;
use rand::Rng;
use rorscan_core::chain::{ChainSnapshot, ChainStore, SnapshotDoc};
use rorscan_core::ir::abi::{encode_call, Value};
use rorscan_core::ir::ParamType;
use rorscan_core::types::{TxHash, Word};
use rorscan_core::TransactionRecord;
use serde_json::{json, Value as Json};

use super::{addr, hash};

const SCALARS: [&str; 4] = ["s0", "s1", "s2", "s3"];
const USERS: [&str; 3] = ["a1", "a2", "a3"];

struct Sig {
    name: String,
    params: Vec<(&'static str, &'static str)>,
}

impl Sig {
    fn signature(&self) -> String {
        let tys: Vec<_> = self.params.iter().map(|p| p.1).collect();
        format!("{}({})", self.name, tys.join(","))
    }
}

struct FnGen<'r, R: Rng> {
    rng: &'r mut R,
    me: usize,
    sigs: &'r [Vec<Sig>],
    internals: &'r [String],
    scope: Vec<String>,
    locals: usize,
    dynamic_call_used: bool,
}

impl<R: Rng> FnGen<'_, R> {
    fn atom(&mut self) -> String {
        match self.rng.gen_range(0..8) {
            0 => self.rng.gen_range(0..50u32).to_string(),
            1 => "msg.sender".into(),
            2 => "msg.value".into(),
            3 => "block.timestamp".into(),
            4 => format!("(sload {})", SCALARS.choose(self.rng).unwrap()),
            5 => {
                let k = self.atom_simple();
                format!("(sload m0 {k})")
            }
            _ => match self.scope.choose(self.rng) {
                Some(v) => v.clone(),
                None => "1".into(),
            },
        }
    }

    fn atom_simple(&mut self) -> String {
        match self.scope.choose(self.rng) {
            Some(v) if self.rng.gen_bool(0.5) => v.clone(),
            _ => "msg.sender".into(),
        }
    }

    fn expr(&mut self, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.5) {
            return self.atom();
        }
        let op = ["+", "-", "*", "/", "%", "<", "<=", "==", "!=", "and", "or"].choose(self.rng).unwrap();
        let (a, b) = (self.expr(depth - 1), self.expr(depth - 1));
        format!("({op} {a} {b})")
    }

    fn fresh(&mut self) -> String {
        self.locals += 1;
        format!("l{}", self.locals)
    }

    fn block(&mut self, depth: u32, len: usize, allow_internal: bool) -> Vec<Json> {
        let mut out = Vec::new();
        for _ in 0..len {
            out.push(self.stmt(depth, allow_internal));
        }
        if self.rng.gen_bool(0.3) {
            let e = self.expr(1);
            out.push(json!({"return": [e]}));
        }
        out
    }

    fn stmt(&mut self, depth: u32, allow_internal: bool) -> Json {
        loop {
            match self.rng.gen_range(0..10) {
                0 => {
                    let into = self.fresh();
                    let s = if self.rng.gen_bool(0.5) {
                        json!({"read": SCALARS.choose(self.rng).unwrap(), "into": into})
                    } else {
                        let k = self.atom_simple();
                        json!({"read": "m0", "key": k, "into": into})
                    };
                    self.scope.push(into);
                    return s;
                }
                1 | 2 => {
                    let v = self.expr(2);
                    return if self.rng.gen_bool(0.6) {
                        json!({"write": SCALARS.choose(self.rng).unwrap(), "value": v})
                    } else {
                        let k = self.atom_simple();
                        json!({"write": "m0", "key": k, "value": v})
                    };
                }
                3 => {
                    let name = self.fresh();
                    let v = self.expr(2);
                    self.scope.push(name.clone());
                    return json!({"let": name, "value": v});
                }
                4 => {
                    let c = self.expr(1);
                    return json!({"require": format!("(or (< {c} 40) (== msg.sender 0x{:0>40}))", "a1"), "reason": "gen"});
                }
                5 if depth > 0 => {
                    let c = self.expr(1);
                    let saved = self.scope.len();
                    let n = self.rng.gen_range(1..3);
                    let then = self.block(depth - 1, n, allow_internal);
                    self.scope.truncate(saved);
                    let n = self.rng.gen_range(0..2);
                    let other = self.block(depth - 1, n, allow_internal);
                    self.scope.truncate(saved);
                    return json!({"if": c, "then": then, "else": other});
                }
                6 if allow_internal && !self.internals.is_empty() => {
                    let f = self.internals.choose(self.rng).unwrap().clone();
                    let arg = self.expr(1);
                    let into = self.fresh();
                    self.scope.push(into.clone());
                    return json!({"internal": f, "args": [arg], "into": into});
                }
                7 | 8 => {
                    let upward: Vec<usize> = (self.me + 1..self.sigs.len()).collect();
                    let dynamic = !self.dynamic_call_used && self.rng.gen_bool(0.4);
                    let (target, callee) = if dynamic {
                        self.dynamic_call_used = true;
                        let t = if self.scope.iter().any(|s| s == "who") && self.rng.gen_bool(0.5) {
                            "who".to_string()
                        } else {
                            "msg.sender".to_string()
                        };
                        (t, self.rng.gen_range(0..self.sigs.len()))
                    } else if let Some(&j) = upward.choose(self.rng) {
                        (format!("0x{:0>40}", format!("c{}", j + 1)), j)
                    } else {
                        continue;
                    };
                    let sigs = self.sigs;
                    let sig = sigs[callee].choose(self.rng).unwrap();
                    let args: Vec<String> = sig
                        .params
                        .iter()
                        .map(|(_, ty)| if *ty == "address" { self.atom_simple() } else { self.expr(1) })
                        .collect();
                    let into = self.fresh();
                    self.scope.push(into.clone());
                    let is_static = self.rng.gen_bool(0.3);
                    let mut s = json!({"call": target, "sig": sig.signature(), "args": args, "static": is_static, "into": [into]});
                    if !is_static && self.rng.gen_bool(0.2) {
                        s["value"] = json!(self.rng.gen_range(0..3u32).to_string());
                    }
                    return s;
                }
                9 => {
                    let t = if self.scope.iter().any(|s| s == "who") && self.rng.gen_bool(0.5) { "who" } else { "msg.sender" };
                    return json!({"transfer": t, "amount": self.rng.gen_range(0..5u32).to_string()});
                }
                _ => continue,
            }
        }
    }
}

/// A random world: the snapshot plus transactions to replay against it.
pub struct World {
    pub store: ChainStore,
    pub txs: Vec<TransactionRecord>,
}

pub fn world(rng: &mut impl Rng, n_txs: usize) -> World {
    let n = rng.gen_range(2..=4);
    let params_pool: [(&str, &str); 3] = [("amt", "uint256"), ("who", "address"), ("flag", "bool")];
    let sigs: Vec<Vec<Sig>> = (0..n)
        .map(|_| {
            (0..rng.gen_range(2..=4))
                .map(|k| Sig {
                    name: format!("f{k}"),
                    params: params_pool.iter().copied().filter(|_| rng.gen_bool(0.5)).collect(),
                })
                .collect()
        })
        .collect();

    let mut contracts = Vec::new();
    let mut storage = Vec::new();
    let mut balances = serde_json::Map::new();
    for i in 0..n {
        let me = addr(&format!("c{}", i + 1));
        let internals: Vec<String> = (0..rng.gen_range(0..=2)).map(|k| format!("g{k}")).collect();
        let mut functions = Vec::new();
        for g in &internals {
            let mut fg = FnGen {
                rng: &mut *rng,
                me: i,
                sigs: &sigs,
                internals: &[],
                scope: vec!["x".into()],
                locals: 0,
                dynamic_call_used: false,
            };
            let len = fg.rng.gen_range(1..4);
            let body = fg.block(1, len, false);
            functions.push(json!({"name": g, "visibility": "internal", "params": [{"name": "x", "type": "uint256"}], "body": body}));
        }
        for sig in &sigs[i] {
            let mut guards = Vec::new();
            if rng.gen_bool(0.3) {
                guards.push(json!("nonReentrant"));
            }
            if rng.gen_bool(0.2) {
                guards.push(json!("onlyOwner"));
            }
            let payable = rng.gen_bool(0.3);
            let mut fg = FnGen {
                rng: &mut *rng,
                me: i,
                sigs: &sigs,
                internals: &internals,
                scope: sig.params.iter().map(|p| p.0.to_string()).collect(),
                locals: 0,
                dynamic_call_used: false,
            };
            let len = fg.rng.gen_range(1..6);
            let body = fg.block(2, len, true);
            let params: Vec<Json> = sig.params.iter().map(|(n, t)| json!({"name": n, "type": t})).collect();
            functions.push(json!({"name": sig.name, "params": params, "payable": payable, "guards": guards, "body": body}));
        }
        if rng.gen_bool(0.4) {
            functions.push(json!({"name": "receive", "payable": true, "body": [{"write": "s0", "value": "(+ (sload s0) msg.value)"}]}));
        }
        let mut vars = vec![json!({"name": "owner", "slot": 0}), json!({"name": "m0", "slot": 1, "kind": "map"})];
        vars.extend(SCALARS.iter().enumerate().map(|(k, s)| json!({"name": s, "slot": k + 2})));
        contracts.push(json!({
            "address": me.to_string(),
            "ir": {"name": format!("Gen{}", i + 1), "state_vars": vars, "functions": functions},
            "creation": {"deploy_tx": hash(&format!("d{}", i + 1)).to_string(), "creator": addr("b1").to_string()}
        }));
        let owner = USERS.choose(rng).unwrap();
        storage.push(json!({"address": me.to_string(), "var": "owner", "value": addr(owner).to_string()}));
        for s in SCALARS {
            storage.push(json!({"address": me.to_string(), "var": s, "value": format!("{:#x}", rng.gen_range(0..60u32))}));
        }
        balances.insert(me.to_string(), json!(format!("{:#x}", rng.gen_range(0..20u32))));
    }

    let mut transactions: Vec<Json> = (0..n)
        .map(|i| {
            json!({"hash": hash(&format!("d{}", i + 1)).to_string(), "sender": addr("b1").to_string(),
                   "block_number": 1, "timestamp": 1_000})
        })
        .collect();
    let mut txs = Vec::new();
    for k in 0..n_txs {
        let i = rng.gen_range(0..n);
        let to = addr(&format!("c{}", i + 1));
        let calldata = if rng.gen_bool(0.05) {
            Vec::new()
        } else {
            let sig = sigs[i].choose(rng).unwrap();
            let (types, args): (Vec<ParamType>, Vec<Value>) = sig
                .params
                .iter()
                .map(|(_, ty)| match *ty {
                    "uint256" => (ParamType::Uint256, Value::Word(Word::from(rng.gen_range(0..80u32)))),
                    "address" => {
                        let pool = ["c1", "c2", "c3", "c4", "a1", "a2", "0"];
                        (ParamType::Address, Value::address(addr(pool.choose(rng).unwrap())))
                    }
                    _ => (ParamType::Bool, Value::bool(rng.gen_bool(0.5))),
                })
                .unzip();
            let sel = rorscan_core::ir::abi::Selector::from_signature(&sig.signature());
            encode_call(sel, &types, &args).unwrap()
        };
        let tx = TransactionRecord {
            hash: TxHash::from_low_u64(0x1000 + k as u64),
            sender: addr(USERS.choose(rng).unwrap()),
            to: Some(to),
            value: Word::from(if rng.gen_bool(0.3) { rng.gen_range(0..4u32) } else { 0 }),
            calldata,
            block_number: 10 + k as u64,
            timestamp: 2_000 + k as u64,
        };
        transactions.push(serde_json::to_value(&tx).unwrap());
        txs.push(tx);
    }
    let doc = json!({
        "contracts": contracts,
        "transactions": transactions,
        "storage": storage,
        "balances": balances,
        "builders": [{"builder": addr("b1").to_string(), "dapp": "gen"}]
    });
    let doc: SnapshotDoc = serde_json::from_value(doc).expect("generated snapshot parses");
    let snap = ChainSnapshot::from_doc(doc, None).expect("generated snapshot resolves");
    World { store: ChainStore::new(snap), txs }
}

/// Every trace event of `tx` must be covered by the static summary of the
/// public function whose frame emitted it. Returns the first violation.
pub fn check_agreement(w: &World, tx: &TransactionRecord, env: rorscan_core::ReplayEnv<'_>) -> Result<usize, String> {
    use rorscan_core::vm::{replay, Detail, Operation};
    let trace = replay(tx, env).map_err(|e| format!("replay error: {e}"))?;
    for r in &trace.records {
        let c = w.store.contract(r.frame.contract).ok_or("frame in unknown contract")?;
        let meta = c.meta(&r.frame.function).ok_or_else(|| format!("no meta for {}", r.frame))?;
        match (&r.operation, &r.detail) {
            (Operation::Read, Detail::Slot(d)) => {
                if r.target.address != r.frame.contract || !meta.reads.contains(&d.var) {
                    return Err(format!("read of {} in {} not in meta", d.var, r.frame));
                }
            }
            (Operation::Write, Detail::Slot(d)) => {
                if r.target.address != r.frame.contract || !meta.writes.contains(&d.var) {
                    return Err(format!("write of {} in {} not in meta", d.var, r.frame));
                }
            }
            (Operation::Invoke, Detail::Call(d)) => {
                let site = meta
                    .site(&d.site.function, d.site.index)
                    .ok_or_else(|| format!("invoke at {} in {} not a known site", d.site, r.frame))?;
                if site.kind != d.kind || site.is_static != d.is_static || d.site.contract != r.frame.contract {
                    return Err(format!("invoke at {} disagrees with its site", d.site));
                }
            }
            _ => return Err(format!("record {} has mismatched detail", r.seq)),
        }
    }
    Ok(trace.records.len())
}
