//! Pipeline driver wiring the core modules into CLI commands:
//! `build-trees`, `gen-c2`, `judge`, `export`, `baseline`, `rag`, `stats`.
//!
//! Every stage reads the previous stage's JSONL, writes its own with a
//! header line (schema, toolkit version, config hash, random seed), and is
//! idempotent given identical inputs, journal, and seed. Long-running
//! stages resume by skipping ids already present in their output file.

pub mod commands;
pub mod config;
pub mod jsonl;
pub mod logging;
pub mod runner;

/// Outcome counters of one command run, used to pick the exit code.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CmdReport {
    /// Items that produced output.
    pub processed: usize,
    /// Items skipped on purpose (already present, filtered input lines).
    pub skipped: usize,
    /// Items that failed and were logged.
    pub failed: usize,
}

impl CmdReport {
    pub fn failure_fraction(&self) -> f64 {
        let attempted = self.processed + self.failed;
        if attempted == 0 {
            0.0
        } else {
            self.failed as f64 / attempted as f64
        }
    }
}
