//! Zero-shot transfer protocol, variant registry, statistical comparison
//! across seeds and trajectory export.

mod embed;
mod protocol;
mod stats;
mod variants;

pub use embed::{export_trajectory_embeddings, EmbeddingMatrix, LabeledEpisode, Transition};
pub use protocol::{
    evaluate_counts, evaluate_zero_shot, mean, params_checksum, rollout_counts, std_error, EvalOptions, EvalReport, EvalRow,
    Protocol,
};
pub use stats::{compare_pair, compare_runs, mann_whitney, seed_means, Comparison, PairRow, RankTest, SummaryRow};
pub use variants::{build_variant, config_diff, VariantName};
