//! Training on the joint loss and mAP / miAP evaluation.

pub mod metrics;
pub mod train;

pub use crate::model::joint_loss;
pub use metrics::{average_precision, subset_metrics, ClassAp, MetricsReport, Subset, SubsetMetrics};
pub use train::{
    evaluate, log_csv, lr_on_plateau, prepare_graph, score_all, train, EpochLog, PlateauScheduler, PreparedSplit, TrainConfig,
    TrainOutcome,
};
