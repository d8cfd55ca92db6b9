//! Read-only reentrancy detection across DApp boundaries, over a local
//! snapshot of chain state.

pub mod analysis;
pub mod boundary;
pub mod chain;
pub mod ir;
pub mod pipeline;
pub mod report;
pub mod types;
pub mod verify;
pub mod vm;

pub use analysis::{CandidateEntry, ContextDataset, UsageStats};
pub use boundary::{Boundaries, BuilderEntry, DAppIdentity};
pub use chain::{ChainStore, TransactionRecord};
pub use ir::FunctionRef;
pub use pipeline::{run_pipeline, BoundaryMode, Format, PipelineError, RunConfig, RunOutput};
pub use report::{render_report, Report};
pub use types::{Address, TxHash, Word};
pub use verify::RorFinding;
pub use vm::{ContextRecord, ExecutionTrace, ReplayEnv};
