mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use common::*;
use rorscan_core::pipeline::{run_with_store, PipelineError};
use rorscan_core::*;
use serde_json::Value;

fn config(name: &str) -> RunConfig {
    RunConfig::new(addr(POOL).to_string().parse().unwrap(), fixture(name))
}

fn json(report: &Report) -> Value {
    serde_json::from_str(&render_report(report, Format::Json)).unwrap()
}

#[test]
fn oracle_vault_end_to_end() {
    let start = Instant::now();
    let out = run_pipeline(&config("oracle_vault.json")).unwrap();
    assert!(start.elapsed().as_secs() < 10);
    let r = &out.report;
    assert_eq!(r.findings.len(), 1);
    let f = &r.findings[0];
    assert_eq!(
        (f.entry_fn.function.function.as_str(), f.victim_fn.function.function.as_str(), f.manipulable_fn.function.function.as_str()),
        ("exitVault", "decrease", "getFunds")
    );
    assert_eq!(f.overlap_slots.iter().map(|s| s.var.as_str()).collect::<Vec<_>>(), ["balance"]);
    assert_eq!(r.dataset.txs_replayed, 3);
    assert_eq!(r.builders, 2);
}

#[test]
fn oracle_vault_without_boundaries_keeps_the_finding() {
    let on = run_pipeline(&config("oracle_vault.json")).unwrap().report;
    let mut c = config("oracle_vault.json");
    c.boundary_mode = BoundaryMode::Off;
    let off = run_pipeline(&c).unwrap().report;
    assert!(off.candidates.len() > on.candidates.len());
    assert_eq!(off.builders, 0);
    let key = |f: &RorFinding| (f.entry_fn.function.clone(), f.victim_fn.function.clone(), f.overlap_slots.clone());
    let on_keys: BTreeSet<_> = on.findings.iter().map(key).collect();
    let off_keys: BTreeSet<_> = off.findings.iter().map(key).collect();
    assert!(on_keys.is_subset(&off_keys));
}

#[test]
fn negative_fixtures_report_nothing() {
    for n in ["a_same_dapp", "b_owner_guarded", "c_both_nonreentrant", "d_guarded_callee", "e_update_first"] {
        let r = run_pipeline(&config(&format!("negative/{n}.json"))).unwrap().report;
        assert!(r.findings.is_empty(), "{n}");
    }
}

#[test]
fn analyze_only_matches_full_run_sections() {
    let full = json(&run_pipeline(&config("oracle_vault.json")).unwrap().report);
    let mut c = config("oracle_vault.json");
    c.analyze_only = true;
    let out = run_pipeline(&c).unwrap();
    assert!(out.campaign.is_none());
    let part = json(&out.report);
    for k in ["dataset", "manipulable", "ranking", "candidates"] {
        assert_eq!(full[k], part[k], "{k}");
    }
    assert_eq!(part["verification"], Value::Null);
    assert_eq!(part["findings"], Value::Array(vec![]));
}

#[test]
fn report_echoes_every_setting() {
    let v = json(&run_pipeline(&config("negative/b_owner_guarded.json")).unwrap().report);
    assert_eq!(v["schema_version"], 1);
    let cfg = v["config"].as_object().unwrap();
    for (k, want) in [
        ("max_txs", Value::from(1000)),
        ("txs_per_entry", Value::from(300)),
        ("budget", Value::from(5000)),
        ("seed", Value::from(0)),
        ("boundary_mode", Value::from("on")),
        ("fund_fuzz", Value::from(true)),
        ("input_fuzz", Value::from(true)),
        ("analyze_only", Value::from(false)),
        ("format", Value::from("json")),
        ("rpc_url", Value::Null),
        ("builders", Value::Null),
    ] {
        assert_eq!(cfg[k], want, "{k}");
    }
    assert_eq!(cfg["target"], addr(POOL).to_string());
    for k in ["dataset", "manipulable", "ranking", "candidates", "verification"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert_eq!(v["findings"], Value::Array(vec![]));
    assert!(v.get("timings_ms").is_none());
}

#[test]
fn timings_are_opt_in() {
    let mut c = config("oracle_vault.json");
    c.timings = true;
    let r = run_pipeline(&c).unwrap().report;
    let t = r.timings_ms.unwrap();
    assert_eq!(t.keys().map(String::as_str).collect::<Vec<_>>(), ["analysis", "boundaries", "context", "verification"]);
}

#[test]
fn rendering_is_byte_stable() {
    for name in ["oracle_vault.json", "join_pool.json"] {
        let a = run_pipeline(&config(name)).unwrap().report;
        let b = run_pipeline(&config(name)).unwrap().report;
        for fmt in [Format::Json, Format::Text] {
            assert_eq!(render_report(&a, fmt), render_report(&a, fmt));
            assert_eq!(render_report(&a, fmt), render_report(&b, fmt));
        }
    }
}

#[test]
fn text_narrative_follows_attack_order() {
    let r = run_pipeline(&config("oracle_vault.json")).unwrap().report;
    let text = render_report(&r, Format::Text);
    for word in ["exitVault", "decrease", "getFunds", "balance"] {
        assert!(text.contains(word), "{word}");
    }
    let pos = |s: &str| text.find(s).unwrap_or_else(|| panic!("missing {s}"));
    let steps = ["1. ", "2. control passes", "3. Pool.decrease", "4. Pool.decrease reads balance", "5. Vault.exitVault then writes"];
    for w in steps.windows(2) {
        assert!(pos(w[0]) < pos(w[1]));
    }
}

#[test]
fn builders_file_overrides_snapshot_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("builders.json");
    let one = serde_json::json!([
        {"builder": addr("b1").to_string(), "dapp": "one"},
        {"builder": addr("b2").to_string(), "dapp": "one"}
    ]);
    std::fs::write(&path, one.to_string()).unwrap();
    let mut c = config("oracle_vault.json");
    c.builders = Some(path);
    let r = run_pipeline(&c).unwrap().report;
    assert!(r.findings.is_empty());
    assert_eq!(r.dataset.victim_dapp, DAppIdentity::Known("one".into()));
}

#[test]
fn config_and_target_errors() {
    let mut c = config("oracle_vault.json");
    c.target = addr("99");
    assert!(matches!(run_pipeline(&c), Err(PipelineError::TargetNotFound(_))));
    let c = config("does_not_exist.json");
    assert!(matches!(run_pipeline(&c), Err(PipelineError::Chain(_))));
    let mut c = config("oracle_vault.json");
    c.rpc_url = Some("http://127.0.0.1:1".into());
    assert!(matches!(run_pipeline(&c), Err(PipelineError::Config(_))));
    let mut c = config("oracle_vault.json");
    c.max_txs = 0;
    assert!(matches!(run_with_store(&c, &store("oracle_vault.json")), Err(PipelineError::Config(_))));
}

#[test]
fn max_txs_limits_the_dataset() {
    let mut c = config("oracle_vault.json");
    c.max_txs = 1;
    let r = run_pipeline(&c).unwrap().report;
    assert_eq!(r.dataset.txs_replayed, 1);
    assert_eq!(r.findings.len(), 1);
    assert_eq!(r.findings[0].witness_victim_tx, hash("03"));
}
