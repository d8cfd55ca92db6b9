mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use rorscan_core::analysis::*;
use rorscan_core::boundary::{Boundaries, DAppIdentity};
use rorscan_core::ir::FunctionRef;
use rorscan_core::vm::ReplayEnv;
use serde_json::{json, Value};

fn names(fs: &[Manipulable]) -> Vec<String> {
    fs.iter().map(|m| m.function.to_string()).collect()
}

fn candidate_keys(a: &Analysis) -> BTreeSet<(FunctionRef, FunctionRef)> {
    a.candidates.iter().map(|c| (c.entry_fn.clone(), c.manipulable_fn.clone())).collect()
}

#[test]
fn oracle_vault_dataset() {
    let s = store("oracle_vault.json");
    let (ds, _) = analyze_store(&s, true, addr(POOL));
    assert_eq!(ds.traces.len(), 3);
    assert_eq!(ds.revert_count(), 0);
    assert_eq!(ds.victim_dapp, DAppIdentity::Known("victimDApp".into()));
    for t in &ds.traces {
        assert_eq!(t.tx.to, Some(addr(POOL)));
        assert!(t.trace.records.iter().any(|r| r.target.address == addr(VAULT)));
    }
}

#[test]
fn empty_history_gives_empty_dataset() {
    let s = store("oracle_vault.json");
    let (ds, a) = analyze_store(&s, true, addr(VAULT));
    assert!(ds.traces.is_empty());
    assert!(a.manipulable.functions.is_empty() && a.candidates.is_empty());
}

#[test]
fn unknown_victim_is_an_error() {
    let s = store("oracle_vault.json");
    let b = boundaries(&s);
    assert!(matches!(
        collect_contextual_data(addr("99"), 10, ReplayEnv::new(&s, &b)),
        Err(AnalysisError::UnknownVictim(_))
    ));
}

#[test]
fn join_pool_dataset_invokes_get_balance() {
    let s = store("join_pool.json");
    let (ds, a) = analyze_store(&s, true, addr(POOL));
    assert!(ds.traces.iter().all(|t| t
        .trace
        .records
        .iter()
        .any(|r| r.callee_ref() == Some(fref(VAULT, "getBalance")))));
    assert_eq!(names(&a.manipulable.functions), [fref(VAULT, "getBalance").to_string()]);
    let c = &a.candidates;
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].entry_fn, fref(VAULT, "joinPool"));
    assert_eq!(c[0].shared_state, BTreeSet::from(["balance".to_string()]));
}

#[test]
fn oracle_vault_manipulable_with_boundaries() {
    let s = store("oracle_vault.json");
    let (_, a) = analyze_store(&s, true, addr(POOL));
    assert_eq!(names(&a.manipulable.functions), [fref(VAULT, "getFunds").to_string()]);
    assert!(a.manipulable.functions[0].is_view);
    assert_eq!(
        a.manipulable.pruned_calls,
        vec![PrunedCall { caller: fref(POOL, "decrease"), callee: fref(ORACLE, "doHardWork") }]
    );
}

#[test]
fn oracle_vault_manipulable_without_boundaries() {
    let s = store("oracle_vault.json");
    let (_, a) = analyze_store(&s, false, addr(POOL));
    let got: BTreeSet<_> = a.manipulable.functions.iter().map(|m| m.function.clone()).collect();
    let want = BTreeSet::from([fref(ORACLE, "getPrice"), fref(ORACLE, "doHardWork"), fref(VAULT, "getFunds")]);
    assert_eq!(got, want);
    assert!(a.manipulable.pruned_calls.is_empty());
    let safe = a.graphs.iter().find(|g| g.manipulable == fref(ORACLE, "doHardWork")).unwrap();
    assert!(safe.manipulable_safe);
}

#[test]
fn oracle_vault_ranking() {
    let s = store("oracle_vault.json");
    let (_, a) = analyze_store(&s, true, addr(POOL));
    assert_eq!(a.ranking.len(), 1);
    let r = &a.ranking[0];
    assert_eq!((r.c_invoke, r.c_read, r.c_write, r.importance), (3, 6, 0, 9));

    let (_, off) = analyze_store(&s, false, addr(POOL));
    let order: Vec<_> = off.ranking.iter().map(|r| (r.function.function.clone(), r.importance)).collect();
    assert_eq!(order, [("getPrice".into(), 12), ("getFunds".into(), 9), ("doHardWork".into(), 6)]);
}

#[test]
fn ranking_ties_and_absent_functions() {
    let s = store("oracle_vault.json");
    let (ds, _) = analyze_store(&s, true, addr(POOL));
    let fake = |c: &str, f: &str| Manipulable {
        function: fref(c, f),
        dapp: DAppIdentity::Unknown,
        is_view: true,
        origin_txs: vec![],
    };
    let fns = vec![fake(VAULT, "zzz"), fake(VAULT, "getFunds"), fake(ORACLE, "nothing"), fake(VAULT, "aaa")];
    let r = rank_manipulable(&ds, &fns);
    let order: Vec<_> = r.iter().map(|u| (u.function.to_string(), u.importance)).collect();
    assert_eq!(
        order,
        [
            (fref(VAULT, "getFunds").to_string(), 9),
            (fref(ORACLE, "nothing").to_string(), 0),
            (fref(VAULT, "aaa").to_string(), 0),
            (fref(VAULT, "zzz").to_string(), 0),
        ]
    );
}

/// Importance recount from a JSONL dump of every record, using only the
/// serialized form.
fn brute_force(ds: &ContextDataset) -> BTreeMap<(String, String), u64> {
    let mut log = String::new();
    for t in &ds.traces {
        for r in &t.trace.records {
            log.push_str(&serde_json::to_string(r).unwrap());
            log.push('\n');
        }
    }
    let mut counts = BTreeMap::new();
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let key = match v["operation"].as_str().unwrap() {
            "invoke" => match v["detail"]["call"]["function"].as_str() {
                Some(f) => (v["detail"]["call"]["callee"].as_str().unwrap().to_string(), f.to_string()),
                None => continue,
            },
            _ => (v["frame"]["contract"].as_str().unwrap().to_string(), v["frame"]["function"].as_str().unwrap().to_string()),
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

#[test]
fn importance_matches_brute_force_on_all_fixtures() {
    for (name, victim) in [("oracle_vault.json", POOL), ("join_pool.json", POOL)]
        .into_iter()
        .chain(["a_same_dapp", "b_owner_guarded", "c_both_nonreentrant", "d_guarded_callee", "e_update_first"].map(|n| {
            let p: &'static str = Box::leak(format!("negative/{n}.json").into_boxed_str());
            (p, POOL)
        }))
    {
        for on in [true, false] {
            let s = store(name);
            let (ds, a) = analyze_store(&s, on, addr(victim));
            let oracle = brute_force(&ds);
            for r in &a.ranking {
                let key = (r.function.contract.to_string(), r.function.function.clone());
                assert_eq!(r.importance, oracle.get(&key).copied().unwrap_or(0), "{name} {}", r.function);
            }
            for w in a.ranking.windows(2) {
                assert!(
                    w[0].importance > w[1].importance
                        || (w[0].importance == w[1].importance && w[0].function < w[1].function)
                );
            }
        }
    }
}

#[test]
fn oracle_vault_graph_rules() {
    let s = store("oracle_vault.json");
    let (_, a) = analyze_store(&s, true, addr(POOL));
    let g = &a.graphs[0];
    assert_eq!(g.manipulable, fref(VAULT, "getFunds"));
    let dep = |from: &str, to: &str, vars: &[&str]| Edge {
        from: fref(VAULT, from),
        to: fref(VAULT, to),
        kind: EdgeKind::Dependency { shared: vars.iter().map(|v| v.to_string()).collect() },
    };
    assert!(g.edges.contains(&dep("getFunds", "exitVault", &["balance"])));
    let pruned: BTreeMap<_, _> = g.pruned_edges.iter().map(|p| ((p.edge.from.function.clone(), p.edge.to.function.clone()), p.rule)).collect();
    assert_eq!(pruned[&("getRate".into(), "setRate".into())], PruneRule::AccessControl);
    assert_eq!(pruned[&("swap".into(), "setRate".into())], PruneRule::AccessControl);
    assert_eq!(pruned[&("swap".into(), "exitVault".into())], PruneRule::NonReentrant);
    assert!(!g.edges.iter().any(|e| e.from.function == "swap" && e.to.function == "exitVault"));
    for e in &g.edges {
        assert_ne!(e.from, e.to);
    }
    let dot = g.to_dot();
    assert!(dot.starts_with("digraph") && dot.contains("getFunds"));
}

#[test]
fn oracle_vault_candidates() {
    let s = store("oracle_vault.json");
    let (ds, a) = analyze_store(&s, true, addr(POOL));
    assert_eq!(a.candidates.len(), 1);
    let c = &a.candidates[0];
    assert_eq!(c.entry_fn, fref(VAULT, "exitVault"));
    assert_eq!(c.manipulable_fn, fref(VAULT, "getFunds"));
    assert_eq!(c.shared_state, BTreeSet::from(["balance".to_string()]));
    assert_eq!(c.importance, 9);
    let all: Vec<_> = ds.traces.iter().map(|t| t.tx.hash).collect();
    assert_eq!(c.origin_txs, all);
}

#[test]
fn single_function_contract_has_empty_graph() {
    let s = store_from_json(json!({
        "contracts": [{
            "address": addr("c9").to_string(),
            "ir": {"state_vars": [{"name": "x", "slot": 0}], "functions": [{"name": "f", "body": [{"write": "x", "value": "(+ (sload x) 1)"}]}]},
            "creation": {"deploy_tx": hash("d9").to_string(), "creator": addr("b9").to_string()}
        }],
        "transactions": [{"hash": hash("d9").to_string(), "sender": addr("b9").to_string(), "block_number": 1, "timestamp": 1}]
    }));
    let c = s.contract(addr("c9")).unwrap().clone();
    let g = build_intra_dapp_graph(&[c], &fref("c9", "f"), &[]);
    assert!(g.edges.is_empty() && g.pruned_edges.is_empty());
    let m = Manipulable { function: fref("c9", "f"), dapp: DAppIdentity::Unknown, is_view: false, origin_txs: vec![] };
    assert!(candidate_entries(&g, &m, 0).is_empty());
}

#[test]
fn boundary_off_has_strictly_more_candidates_on_oracle_vault() {
    let s = store("oracle_vault.json");
    let (_, on) = analyze_store(&s, true, addr(POOL));
    let (_, off) = analyze_store(&s, false, addr(POOL));
    assert!(candidate_keys(&on).is_subset(&candidate_keys(&off)));
    assert!(candidate_keys(&off).len() > candidate_keys(&on).len());
    assert!(off.candidates.iter().any(|c| c.entry_fn == fref(ORACLE, "poke")));
}

fn negatives() -> [&'static str; 5] {
    [
        "negative/a_same_dapp.json",
        "negative/b_owner_guarded.json",
        "negative/c_both_nonreentrant.json",
        "negative/d_guarded_callee.json",
        "negative/e_update_first.json",
    ]
}

#[test]
fn candidate_sets_are_boundary_conservative() {
    for name in ["oracle_vault.json", "join_pool.json"].into_iter().chain(negatives()) {
        let s = store(name);
        let (_, on) = analyze_store(&s, true, addr(POOL));
        let (_, off) = analyze_store(&s, false, addr(POOL));
        assert!(candidate_keys(&on).is_subset(&candidate_keys(&off)), "{name}");
    }
}

#[test]
fn pruned_graph_is_subset_of_rule_one_graph() {
    for name in ["oracle_vault.json", "join_pool.json"].into_iter().chain(negatives()) {
        let s = store(name);
        for on in [true, false] {
            let (_, a) = analyze_store(&s, on, addr(POOL));
            for g in &a.graphs {
                let all = g.unpruned_edges();
                assert!(g.edges.iter().all(|e| all.contains(e)));
                for e in &g.edges {
                    if let EdgeKind::Dependency { .. } = e.kind {
                        let c = s.contract(e.to.contract).unwrap();
                        assert!(!c.meta(&e.to.function).unwrap().guarded_write, "{name}: {}", e.to);
                    }
                }
            }
        }
    }
}

fn function_mut<'a>(doc: &'a mut Value, contract: &str, name: &str) -> &'a mut Value {
    let c = doc["contracts"]
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .find(|c| c["address"] == json!(addr(contract).to_string()))
        .unwrap();
    c["ir"]["functions"].as_array_mut().unwrap().iter_mut().find(|f| f["name"] == name).unwrap()
}

#[test]
fn neutralizing_a_rule_grows_candidates() {
    let cases: [(&str, &str, &str); 3] = [
        ("negative/b_owner_guarded.json", VAULT, "exitVault"),
        ("negative/c_both_nonreentrant.json", VAULT, "getFunds"),
        ("negative/d_guarded_callee.json", "c4", "report"),
    ];
    for (name, contract, func) in cases {
        let doc = fixture_json(name);
        let (_, before) = analyze_store(&store_from_json(doc.clone()), true, addr(POOL));
        let mut mutated = doc;
        let f = function_mut(&mut mutated, contract, func);
        let kept: Vec<Value> = f["guards"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|g| *g == &json!("nonReentrant") && func != "getFunds")
            .cloned()
            .collect();
        f["guards"] = Value::Array(kept);
        let (_, after) = analyze_store(&store_from_json(mutated), true, addr(POOL));
        let (b, a) = (candidate_keys(&before), candidate_keys(&after));
        assert!(b.is_subset(&a) && a.len() > b.len(), "{name}: {b:?} -> {a:?}");
    }
}

#[test]
fn negative_rule_pruning_is_visible() {
    let s = store("negative/d_guarded_callee.json");
    let (_, a) = analyze_store(&s, true, addr(POOL));
    assert!(a.candidates.is_empty());
    assert!(a
        .manipulable
        .pruned_calls
        .iter()
        .any(|p| p.caller == fref(VAULT, "getFunds") && p.callee == fref("c4", "report")));

    let s = store("negative/a_same_dapp.json");
    let (_, a) = analyze_store(&s, true, addr(POOL));
    assert!(a.manipulable.functions.is_empty());
}

#[test]
fn analysis_is_deterministic() {
    let s = store("oracle_vault.json");
    let one = serde_json::to_string(&analyze_store(&s, false, addr(POOL)).1).unwrap();
    let two = serde_json::to_string(&analyze_store(&s, false, addr(POOL)).1).unwrap();
    assert_eq!(one, two);
}

#[test]
fn dot_export_names_every_graph() {
    let s = store("oracle_vault.json");
    let (_, a) = analyze_store(&s, false, addr(POOL));
    let dot = render_dot("Pool.decrease", &a);
    assert_eq!(dot.matches("subgraph cluster_").count(), a.graphs.len());
    let _ = Boundaries::disabled();
}
