//! Declarative sweeps over strategies, skews, budgets, client counts and seeds.

pub mod config;
pub mod report;
pub mod results;
pub mod runner;

pub use config::{parse_config, parse_config_str, DatasetSource, EvalSet, ExperimentPlan, OutputFormat, OUTPUT_DIR_ENV};
pub use report::{pivot, GroupKey};
pub use results::{emit_results, read_results, CellKey, ResultRow, ResultsTable};
pub use runner::{prepare_data, run_and_emit, run_cell, run_experiment, ExperimentOutcome};
