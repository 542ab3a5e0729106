//! Synthetic data, workload replay and report comparison for sketchd.

pub mod compare;
pub mod corpus;
mod error;
pub mod run;
pub mod synth;
pub mod workload;

pub use compare::{check_consistent, compare, crossover, Summary, SummaryRow};
pub use error::{CliError, Result};
pub use run::{checksum, eval_plain, run_workload, Mode, QueryOutcome, ReportRow, RunReport, Runner};
pub use synth::SynthConfig;
pub use workload::{MixedWorkload, Ratio, Record, UpdateSpec, Workload};
