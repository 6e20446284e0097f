//! Library surface of the `maf` binary.
//!
//! The binary itself is a thin argument-parsing shell; everything it does is
//! exposed here so integration tests can run the same code paths in-process
//! with scripted language-model clients.

pub mod commands;
pub mod config;

pub use commands::{
    build_client, cmd_ablate, cmd_check, cmd_report, cmd_run, execute_ablate, execute_run,
    read_traces_file, render_ablation_table, render_curve_table, render_run_summary,
    semantic_digest, AblationSummary, ReportRender, RunOverrides, RunSummary, VariantOutcome,
};
pub use config::AppConfig;
