//! Shared helpers for the benchmarks.

use std::path::PathBuf;

/// Path of a file under the workspace `fixtures/` directory.
pub fn fixture(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "fixtures", name].iter().collect()
}
