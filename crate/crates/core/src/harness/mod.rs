//! Experiment orchestration: declarative TOML configs, the multi-seed
//! runner with content-hashed run directories, and table/figure emission.

pub mod checkpoint;
pub mod config;
pub mod plot;
pub mod runner;
pub mod table;

pub use config::{ExperimentConfig, ExperimentKind, ReplayMode, StrategySpec};
pub use plot::{emit_plot, FigureId};
pub use runner::{load_run_results, run_experiment, RunArtifacts};
pub use table::{emit_table, Table, TableId};
