//! Config-driven experiment pipeline behind the `flextune` binary.

mod commands;
mod config;

pub use commands::{
    cmd_pretrain, cmd_retrieve, cmd_select, cmd_sweep, describe, expected_network, prepare, target_splits,
    PretrainMetrics, Prepared, RetrievalSummary,
};
pub use config::{ExperimentConfig, RetrievalConfig, SourceSpec, SplitConfig, TargetDomain};
