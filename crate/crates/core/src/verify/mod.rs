//! Dynamic confirmation of candidate entries. Each fuzz case of an entry
//! function is replayed; whenever control leaves it at a hijack point, the
//! victim transaction runs against the in-flight state. A finding needs the
//! entry to later overwrite state the victim read, in a DApp other than the
//! victim's.

mod cases;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{CandidateEntry, ContextDataset};
use crate::boundary::{DAppIdentity, Relation};
use crate::chain::TransactionRecord;
use crate::ir::abi::split_selector;
use crate::ir::FunctionRef;
use crate::types::{word_hex, word_hex_opt, Address, TxHash, Word};
use crate::vm::{
    reads_of, replay_with_hijack, state_diff, HijackContext, HijackHook, HijackPoint, HookAction, Operation, Outcome,
    ReplayEnv, SiteRef,
};

pub use cases::{
    build_candidate_list, CaseError, FundScale, FuzzCase, Limits, Lineage, Mutation, Seed, ATTACKER,
    MAX_MUTANTS_PER_SEED,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct LabeledFn {
    #[serde(flatten)]
    pub function: FunctionRef,
    pub contract_name: String,
    pub dapp: DAppIdentity,
}

impl std::fmt::Display for LabeledFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.contract_name, self.function.function)
    }
}

/// One storage slot in both raw and named form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct OverlapSlot {
    pub address: Address,
    #[serde(with = "word_hex")]
    pub slot: Word,
    pub var: String,
    #[serde(with = "word_hex_opt", skip_serializing_if = "Option::is_none")]
    pub key: Option<Word>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RorFinding {
    pub entry_fn: LabeledFn,
    pub victim_fn: LabeledFn,
    pub manipulable_fn: LabeledFn,
    pub manipulable_is_view: bool,
    pub hijack_site: SiteRef,
    pub overlap_slots: BTreeSet<OverlapSlot>,
    pub witness_entry_tx: FuzzCase,
    pub witness_victim_tx: TxHash,
    pub narrative: Vec<String>,
}

impl RorFinding {
    fn dedupe_key(&self) -> (FunctionRef, FunctionRef, Vec<(Address, Word)>) {
        (
            self.entry_fn.function.clone(),
            self.victim_fn.function.clone(),
            self.overlap_slots.iter().map(|s| (s.address, s.slot)).collect(),
        )
    }
}

/// What happened at one hijack point.
#[derive(Debug, Clone, Serialize)]
pub struct PointResult {
    pub point: HijackPoint,
    pub victim_outcome: Outcome,
    #[serde(skip)]
    pub victim_reads: BTreeSet<(Address, Word)>,
}

/// Per-case record for the fuzz log.
#[derive(Debug, Clone, Serialize)]
pub struct CaseLog {
    pub entry_fn: FunctionRef,
    pub victim_tx: TxHash,
    pub case: FuzzCase,
    pub entry_outcome: Option<Outcome>,
    pub error: Option<String>,
    pub points: Vec<PointResult>,
    pub finding: bool,
}

struct VictimHook<'t> {
    tx_o: &'t TransactionRecord,
    results: Vec<PointResult>,
}

impl HijackHook for VictimHook<'_> {
    fn on_hijack(&mut self, point: &HijackPoint, ctx: &mut HijackContext<'_, '_>) -> HookAction {
        let (victim_outcome, victim_reads) = match ctx.execute(self.tx_o) {
            Ok(t) => {
                let reads = if t.reverted() { BTreeSet::new() } else { reads_of(&t) };
                (t.outcome, reads)
            }
            Err(e) => (Outcome::Revert(e.to_string()), BTreeSet::new()),
        };
        self.results.push(PointResult { point: point.clone(), victim_outcome, victim_reads });
        HookAction::Proceed
    }
}

/// Function of the victim contract that `tx_o` calls.
fn victim_function(tx_o: &TransactionRecord, env: ReplayEnv<'_>) -> Option<FunctionRef> {
    let to = tx_o.to?;
    let ir = &env.store.contract(to)?.ir;
    let f = match split_selector(&tx_o.calldata) {
        Ok((sel, _)) => ir.by_selector(sel)?,
        Err(_) => ir.receive()?,
    };
    Some(FunctionRef::new(to, f.name.clone()))
}

fn labeled(f: FunctionRef, env: ReplayEnv<'_>) -> LabeledFn {
    let dapp = env.dapp_of(f.contract);
    let contract_name = env.store.contract(f.contract).map(|c| c.name().to_string()).unwrap_or_default();
    LabeledFn { function: f, contract_name, dapp }
}

/// Replays `case` with `tx_o` injected at every hijack point and checks for
/// a stale read. Returns the finding, if any, and the case log.
pub fn verify(
    case: &FuzzCase,
    candidate: &CandidateEntry,
    tx_o: &TransactionRecord,
    env: ReplayEnv<'_>,
) -> (Option<RorFinding>, CaseLog) {
    let mut log = CaseLog {
        entry_fn: candidate.entry_fn.clone(),
        victim_tx: tx_o.hash,
        case: case.clone(),
        entry_outcome: None,
        error: None,
        points: vec![],
        finding: false,
    };
    let mut hook = VictimHook { tx_o, results: Vec::new() };
    let trace = match replay_with_hijack(&case.tx, env, &mut hook) {
        Ok(t) => t,
        Err(e) => {
            log.error = Some(e.to_string());
            return (None, log);
        }
    };
    log.entry_outcome = Some(trace.outcome.clone());
    log.points = hook.results;
    let Some(victim) = tx_o.to else { return (None, log) };
    if trace.reverted() || env.boundaries.same_dapp(candidate.entry_fn.contract, victim, env.store) == Relation::Same {
        return (None, log);
    }

    // Names of written slots, from the entry trace itself.
    let names: BTreeMap<(Address, Word), (String, Option<Word>)> = trace
        .records
        .iter()
        .filter(|r| r.operation == Operation::Write)
        .filter_map(|r| {
            let s = r.slot()?;
            let d = match &r.detail {
                crate::vm::Detail::Slot(d) => d,
                _ => return None,
            };
            Some((s, (d.var.clone(), d.key)))
        })
        .collect();

    for p in &log.points {
        if !p.victim_outcome.is_success() {
            continue;
        }
        let written = state_diff(&trace, p.point.seq);
        let overlap: BTreeSet<OverlapSlot> = written
            .intersection(&p.victim_reads)
            .filter(|(a, _)| env.boundaries.same_dapp(*a, victim, env.store) == Relation::Different)
            .map(|&(address, slot)| {
                let (var, key) = names[&(address, slot)].clone();
                OverlapSlot { address, slot, var, key }
            })
            .collect();
        if overlap.is_empty() {
            continue;
        }
        let victim_fn = victim_function(tx_o, env).unwrap_or_else(|| FunctionRef::new(victim, "?"));
        let manipulable_is_view = env
            .store
            .contract(candidate.manipulable_fn.contract)
            .and_then(|c| c.meta(&candidate.manipulable_fn.function))
            .is_some_and(|m| m.is_view);
        let mut finding = RorFinding {
            entry_fn: labeled(candidate.entry_fn.clone(), env),
            victim_fn: labeled(victim_fn, env),
            manipulable_fn: labeled(candidate.manipulable_fn.clone(), env),
            manipulable_is_view,
            hijack_site: p.point.site.clone(),
            overlap_slots: overlap,
            witness_entry_tx: case.clone(),
            witness_victim_tx: tx_o.hash,
            narrative: vec![],
        };
        finding.narrative = narrative(&finding, &p.point, tx_o);
        log.finding = true;
        return (Some(finding), log);
    }
    (None, log)
}

fn narrative(f: &RorFinding, point: &HijackPoint, tx_o: &TransactionRecord) -> Vec<String> {
    let case = &f.witness_entry_tx;
    let vars: Vec<&str> = f.overlap_slots.iter().map(|s| s.var.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let vars = vars.join(", ");
    let mut steps = vec![
        format!(
            "1. {} calls {} [{}] with value {:#x} (case {})",
            case.tx.sender, f.entry_fn, f.entry_fn.dapp, case.tx.value, case.tx.hash
        ),
        format!("2. control passes to {} at {}", point.recipient, f.hijack_site),
        format!(
            "3. {} [{}] is entered by replaying {} from {}",
            f.victim_fn, f.victim_fn.dapp, tx_o.hash, tx_o.sender
        ),
        format!(
            "4. {} reads {} through {} before the entry call has finished",
            f.victim_fn, vars, f.manipulable_fn
        ),
        format!("5. {} then writes {}, so the value seen in step 4 was stale", f.entry_fn, vars),
    ];
    if case.tx.sender != tx_o.sender {
        steps.push(format!(
            "note: the entry call and the victim call use different senders ({} and {})",
            case.tx.sender, tx_o.sender
        ));
    } else {
        steps.push(format!("note: both calls use sender {}", tx_o.sender));
    }
    steps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CampaignConfig {
    /// History window per entry contract when picking seeds.
    pub max_txs: usize,
    pub limits: Limits,
    /// Maximum number of verify calls.
    pub budget: usize,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig { max_txs: 1000, limits: Limits::default(), budget: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignResult {
    pub findings: Vec<RorFinding>,
    pub verify_calls: usize,
    pub budget_exhausted: bool,
    pub log: Vec<CaseLog>,
}

/// Verifies candidates in order, stopping each at its first finding.
pub fn run_campaign(
    candidates: &[CandidateEntry],
    ds: &ContextDataset,
    env: ReplayEnv<'_>,
    config: CampaignConfig,
) -> CampaignResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = CampaignResult::default();
    let mut seen = BTreeSet::new();
    let origin: BTreeMap<TxHash, &TransactionRecord> = ds.traces.iter().map(|t| (t.tx.hash, &t.tx)).collect();
    let mut history_cache: BTreeMap<Address, Vec<TransactionRecord>> = BTreeMap::new();

    'candidates: for cand in candidates {
        let contract = cand.entry_fn.contract;
        let history = match history_cache.get(&contract) {
            Some(h) => h,
            None => {
                let h = env.store.fetch_transactions_of(contract, config.max_txs).unwrap_or_else(|e| {
                    log::warn!("no history for {contract}: {e}");
                    Vec::new()
                });
                history_cache.entry(contract).or_insert(h)
            }
        };
        for h in &cand.origin_txs {
            let Some(tx_o) = origin.get(h) else { continue };
            let cases = match build_candidate_list(cand, tx_o, history, env.store, config.limits, &mut rng) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("skipping candidate {}: {e}", cand.entry_fn);
                    continue 'candidates;
                }
            };
            for case in &cases {
                if out.verify_calls >= config.budget {
                    log::warn!("verification budget of {} calls exhausted", config.budget);
                    out.budget_exhausted = true;
                    break 'candidates;
                }
                out.verify_calls += 1;
                let (finding, entry) = verify(case, cand, tx_o, env);
                out.log.push(entry);
                if let Some(f) = finding {
                    if seen.insert(f.dedupe_key()) {
                        out.findings.push(f);
                    }
                    continue 'candidates;
                }
            }
        }
    }
    out
}

/// Whether a finding's witness pair still produces the same overlap.
pub fn replay_witness(f: &RorFinding, env: ReplayEnv<'_>) -> bool {
    let Some(tx_o) = env.store.transaction(f.witness_victim_tx) else { return false };
    let cand = CandidateEntry {
        entry_fn: f.entry_fn.function.clone(),
        manipulable_fn: f.manipulable_fn.function.clone(),
        shared_state: BTreeSet::new(),
        importance: 0,
        origin_txs: vec![],
    };
    match verify(&f.witness_entry_tx, &cand, tx_o, env).0 {
        Some(again) => again.overlap_slots == f.overlap_slots && again.hijack_site == f.hijack_site,
        None => false,
    }
}
