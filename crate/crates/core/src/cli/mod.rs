//! Batch front end: configuration, runs, result tables and comparisons.

pub mod compare;
pub mod config;
pub mod runner;
pub mod table;

pub use compare::{compare_columns, compare_dirs, compare_tables, ColumnReport, CompareReport};
pub use config::{parse_config, schema_text, FreeSolver, ObservableKind, RunConfig, RunMode};
pub use runner::{apply_overrides, compute, resolve_output_dir, run, write_outcome, Overrides, RunOutcome};
pub use table::ResultTable;
