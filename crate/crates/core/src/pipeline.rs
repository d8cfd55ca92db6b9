//! End-to-end run: boundaries, context collection, analysis, verification.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{analyze, collect_contextual_data, Analysis, AnalysisError, ContextDataset};
use crate::boundary::{load_builders, BoundaryError, Boundaries};
use crate::chain::{load_snapshot, rpc::RpcClient, ChainError, ChainStore};
use crate::report::{DatasetSummary, Report, VerificationSummary, SCHEMA_VERSION};
use crate::types::Address;
use crate::verify::{run_campaign, CampaignConfig, CampaignResult, Limits};
use crate::vm::ReplayEnv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    #[default]
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunConfig {
    pub target: Address,
    pub snapshot: Option<PathBuf>,
    pub rpc_url: Option<String>,
    /// Builder labels; when absent those embedded in the snapshot are used.
    pub builders: Option<PathBuf>,
    pub max_txs: usize,
    pub txs_per_entry: usize,
    pub budget: usize,
    pub seed: u64,
    pub boundary_mode: BoundaryMode,
    pub fund_fuzz: bool,
    pub input_fuzz: bool,
    pub analyze_only: bool,
    pub format: Format,
    /// Include wall-clock stage timings in the report.
    pub timings: bool,
}

impl RunConfig {
    pub fn new(target: Address, snapshot: impl Into<PathBuf>) -> Self {
        RunConfig {
            target,
            snapshot: Some(snapshot.into()),
            rpc_url: None,
            builders: None,
            max_txs: 1000,
            txs_per_entry: 300,
            budget: 5000,
            seed: 0,
            boundary_mode: BoundaryMode::On,
            fund_fuzz: true,
            input_fuzz: true,
            analyze_only: false,
            format: Format::Json,
            timings: false,
        }
    }

    pub fn campaign(&self) -> CampaignConfig {
        CampaignConfig {
            max_txs: self.max_txs,
            limits: Limits { txs_per_entry: self.txs_per_entry, fund_fuzz: self.fund_fuzz, input_fuzz: self.input_fuzz },
            budget: self.budget,
            seed: self.seed,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error("target {0} not found in the chain data")]
    TargetNotFound(Address),
}

/// Everything a run produced; the report plus the raw material behind it.
#[derive(Debug)]
pub struct RunOutput {
    pub report: Report,
    pub dataset: ContextDataset,
    pub analysis: Analysis,
    pub campaign: Option<CampaignResult>,
}

pub fn open_store(config: &RunConfig) -> Result<ChainStore, PipelineError> {
    match (&config.snapshot, &config.rpc_url) {
        (Some(path), None) => Ok(ChainStore::new(load_snapshot(path)?)),
        (None, Some(url)) => Ok(RpcClient::new(url.clone()).into_store()?),
        (Some(_), Some(_)) => Err(PipelineError::Config("give either a snapshot or an RPC URL, not both".into())),
        (None, None) => Err(PipelineError::Config("a snapshot or an RPC URL is required".into())),
    }
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunOutput, PipelineError> {
    let store = open_store(config)?;
    run_with_store(config, &store)
}

pub fn run_with_store(config: &RunConfig, store: &ChainStore) -> Result<RunOutput, PipelineError> {
    if config.max_txs == 0 {
        return Err(PipelineError::Config("max_txs must be positive".into()));
    }
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1000.0);
        clock = Instant::now();
    };

    let boundaries = match config.boundary_mode {
        BoundaryMode::Off => Boundaries::disabled(),
        BoundaryMode::On => match &config.builders {
            Some(path) => Boundaries::new(&load_builders(path)?)?,
            None => Boundaries::new(store.builders())?,
        },
    };
    let env = ReplayEnv::new(store, &boundaries);
    if !store.is_contract(config.target) {
        return Err(PipelineError::TargetNotFound(config.target));
    }
    log::info!("{} builder label(s) in effect", boundaries.entries().len());
    lap("boundaries", &mut timings);

    let dataset = collect_contextual_data(config.target, config.max_txs, env).map_err(|e| match e {
        AnalysisError::UnknownVictim(a) => PipelineError::TargetNotFound(a),
        AnalysisError::Chain(c) => PipelineError::Chain(c),
    })?;
    log::info!("replayed {} victim transaction(s), {} reverted", dataset.traces.len(), dataset.revert_count());
    lap("context", &mut timings);

    let analysis = analyze(&dataset, env);
    log::info!(
        "{} manipulable function(s), {} candidate entry function(s)",
        analysis.ranking.len(),
        analysis.candidates.len()
    );
    lap("analysis", &mut timings);

    let campaign = (!config.analyze_only).then(|| run_campaign(&analysis.candidates, &dataset, env, config.campaign()));
    if let Some(c) = &campaign {
        log::info!("{} verification call(s), {} finding(s)", c.verify_calls, c.findings.len());
        lap("verification", &mut timings);
    }

    let report = Report {
        schema_version: SCHEMA_VERSION,
        tool: concat!("rorscan ", env!("CARGO_PKG_VERSION")).to_string(),
        config: config.clone(),
        builders: boundaries.entries().len(),
        dataset: DatasetSummary {
            victim: dataset.victim,
            victim_dapp: dataset.victim_dapp.clone(),
            txs_replayed: dataset.traces.len(),
            revert_count: dataset.revert_count(),
            skipped: dataset.skipped.len(),
        },
        manipulable: analysis.manipulable.clone(),
        ranking: analysis.ranking.clone(),
        candidates: analysis.candidates.clone(),
        verification: campaign.as_ref().map(|c| VerificationSummary {
            verify_calls: c.verify_calls,
            budget_exhausted: c.budget_exhausted,
        }),
        findings: campaign.as_ref().map(|c| c.findings.clone()).unwrap_or_default(),
        timings_ms: config.timings.then_some(timings),
    };
    Ok(RunOutput { report, dataset, analysis, campaign })
}
