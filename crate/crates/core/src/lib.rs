//! Output-similarity-aware token reduction for diffusion transformers,
//! exercised on a small deterministic attention model.
//!
//! A run alternates *Matching* steps, which compute full attention and derive
//! (destination, source) token pairs from the attention **output**, with
//! *Reduction* steps, which reuse those pairs to drop source tokens before
//! attention and copy their destination's output back afterwards. How long a
//! pair set may be reused is calibrated offline from the pair match rate
//! between golden (current-output) matchings and older ones.
//!
//! ```no_run
//! use dito::prelude::*;
//!
//! let cfg = ExperimentConfig::default();
//! let cal = dito::commands::calibrate(&cfg)?;
//! let result = run_dito(&cfg.run_config(Variant::Dito), &cal.schedule)?;
//! println!("mean recovery error {}", result.mean_recovery_error());
//! # Ok::<(), dito::Error>(())
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod flops;
pub mod linalg;
pub mod matching;
pub mod model;
pub mod penalty;
pub mod pipeline;
pub mod pmr;
pub mod reduce;
pub mod scheduler;

pub use error::{Error, Result};

/// The types and entry points most programs need.
pub mod prelude {
    pub use crate::config::ExperimentConfig;
    pub use crate::error::{Error, Result};
    pub use crate::linalg::{Matrix, Metric, TokenMatrix};
    pub use crate::matching::{bipartition, golden_match, PairSet, Partition, PartitionStrategy};
    pub use crate::model::{run_dense, ModelConfig, Trajectory};
    pub use crate::penalty::SelectionHistory;
    pub use crate::pipeline::{
        compare_recovery, run_dense_result, run_dito, run_input_baseline, run_output_oracle, RunConfig, RunResult,
        Variant,
    };
    pub use crate::pmr::{build_pmr_table, max_intervals, MaxIntervals, PmrTable};
    pub use crate::reduce::ReduceMode;
    pub use crate::scheduler::{build_schedule, validate_schedule, Schedule};
}
