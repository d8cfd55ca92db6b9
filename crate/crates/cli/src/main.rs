use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rorscan_core::analysis::render_dot;
use rorscan_core::pipeline::{run_pipeline, BoundaryMode, Format, RunConfig};
use rorscan_core::{render_report, Address, ContextRecord, TxHash};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rorscan", version, about = "Find read-only reentrancy across DApp boundaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a victim contract and verify candidate entry points.
    Detect(DetectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Text,
}

#[derive(clap::Args)]
struct DetectArgs {
    /// Chain snapshot (JSON).
    #[arg(long, required_unless_present = "rpc_url")]
    snapshot: Option<PathBuf>,
    /// Victim contract address.
    #[arg(long)]
    target: Address,
    /// Builder label file; defaults to the labels inside the snapshot.
    #[arg(long)]
    builders: Option<PathBuf>,
    /// Fetch chain data from a JSON-RPC endpoint instead of a snapshot.
    #[arg(long, conflicts_with = "snapshot")]
    rpc_url: Option<String>,
    /// Most recent victim transactions to replay.
    #[arg(long, default_value_t = 1000)]
    max_txs: usize,
    /// Historical seeds per entry function.
    #[arg(long, default_value_t = 300)]
    txs_per_entry: usize,
    /// Maximum verification attempts.
    #[arg(long, default_value_t = 5000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "on")]
    boundary_mode: Mode,
    /// Disable mutation of transaction value.
    #[arg(long)]
    no_fund_fuzz: bool,
    /// Disable mutation of call arguments.
    #[arg(long)]
    no_input_fuzz: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: OutFormat,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Write every context record of the victim traces as JSON lines.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the dependency graphs in DOT format.
    #[arg(long)]
    graph_out: Option<PathBuf>,
    /// Write one JSON line per verification attempt.
    #[arg(long)]
    fuzz_log: Option<PathBuf>,
    /// Stop after static analysis.
    #[arg(long)]
    analyze_only: bool,
    /// Include stage timings in the report.
    #[arg(long)]
    timings: bool,
}

impl DetectArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            target: self.target,
            snapshot: self.snapshot.clone(),
            rpc_url: self.rpc_url.clone(),
            builders: self.builders.clone(),
            max_txs: self.max_txs,
            txs_per_entry: self.txs_per_entry,
            budget: self.budget,
            seed: self.seed,
            boundary_mode: match self.boundary_mode {
                Mode::On => BoundaryMode::On,
                Mode::Off => BoundaryMode::Off,
            },
            fund_fuzz: !self.no_fund_fuzz,
            input_fuzz: !self.no_input_fuzz,
            analyze_only: self.analyze_only,
            format: match self.format {
                OutFormat::Json => Format::Json,
                OutFormat::Text => Format::Text,
            },
            timings: self.timings,
        }
    }
}

fn write_lines<T: serde::Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    tx: TxHash,
    #[serde(flatten)]
    record: &'a ContextRecord,
}

fn detect(args: &DetectArgs) -> anyhow::Result<bool> {
    let config = args.config();
    let out = run_pipeline(&config)?;

    if let Some(path) = &args.trace_out {
        let lines = out.dataset.traces.iter().flat_map(|t| {
            t.trace.records.iter().map(move |record| TraceLine { tx: t.trace.tx, record })
        });
        write_lines(path, lines)?;
    }
    if let Some(path) = &args.graph_out {
        let dot = render_dot(&config.target.to_string(), &out.analysis);
        std::fs::write(path, dot).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.fuzz_log {
        write_lines(path, out.campaign.iter().flat_map(|c| c.log.iter()))?;
    }

    let doc = render_report(&out.report, config.format);
    match &args.out {
        Some(path) => std::fs::write(path, doc).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(doc.as_bytes())?,
    }
    Ok(!out.report.findings.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let Command::Detect(args) = cli.command;
    match detect(&args) {
        Ok(true) => ExitCode::from(2),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
