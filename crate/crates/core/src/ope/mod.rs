//! Off-policy evaluation and alignment metrics.

mod behavior;
mod metrics;
mod wis;

pub use behavior::{
    auc, fit_behavior_model, one_hot_features, BehaviorFitOptions, BehaviorModel, CandidateScore,
    SelectionReport, DEFAULT_C_GRID,
};
pub use metrics::{
    appropriate_intensification, constraint_satisfaction_rate, logged_concordance,
    model_concordance, EvaluationReport, MetricRow, Rate, Recommender,
};
pub use wis::{soften, wis, EpisodeTerm, WisReport, BEHAVIOR_FLOOR, DEFAULT_EPSILON};
