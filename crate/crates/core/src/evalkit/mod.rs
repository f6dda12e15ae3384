//! Composition scoring, FID-proxy and experiment summaries.

mod fid;
mod score;
mod summary;

pub use fid::{feature_stats, fid_proxy, fid_proxy_against, pooled_features, FEATURE_DIM, MIN_IMAGES, POOL};
pub use score::{composition_score, composition_score_with, detect_half, CompositionScore, Detection, DetectorConfig, ObjectMatch};
pub use summary::{
    comparison_table, plot_tradeoff, tradeoff_curve, write_table_csv, write_tradeoff_csv, Category, TableRow, TradeoffPoint,
};

#[cfg(test)]
mod tests;
