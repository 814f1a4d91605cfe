//! Data files, evaluation suites, reports, experiment runners and the CLI.

pub mod ablation;
pub mod cli;
pub mod config;
pub mod data;
pub mod report;
pub mod suite;

pub use ablation::{eval_protocol, run_ablation, AblationConfig, ArmResult, ExperimentReport};
pub use cli::{run_command, run_command_to, worker_count, THREADS_ENV};
pub use config::{RunConfig, CONFIG_VERSION, DEFAULT_HIDDEN_SIZES};
pub use data::{
    format_masked_csv, generate_synthetic, load_dataset, parse_masked_csv, save_dataset, Dataset, GroundTruth,
    SyntheticKind,
};
pub use report::{dist_report, DistColumn, DistMode, DistReport};
pub use suite::{draw_eval_masks, marginal_nll_suite, mask_stream_hash, score_marginals, BpdNorm, SuiteResult};
