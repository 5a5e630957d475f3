//! Detection metrics and the analysis protocols built on them.

pub mod metrics;
mod protocols;
mod report;

pub use metrics::{auroc, f1_at, f1_sweep, roc_points, RocPoint};
pub use protocols::{
    all_triplets, prefix_auroc_curve, shapley_attribution, triplet_ablation, window_size_sweep,
    AblationTable, AttributionTable, FeatureAttribution, PrefixRow, SweepRow, TripletRow,
};
pub use report::{evaluate, score_sequences, EvalReport, RuntimeStats, ScoredSequence};
