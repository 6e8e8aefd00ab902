//! The two networks of the pipeline and their training loops.

pub mod arch;
pub mod nets;

pub use arch::{classifier_network, regressor_network, summarize, ArchRow};
pub use nets::{build_classifier, build_regressor, classify_patch, predict_center, ClassifierNet, RegressorNet};
pub mod train;

pub use train::{
    evaluate_loss, fit, train_classifier, train_regressor, HistoryRecord, Task, TrainConfig, TrainHistory, Trained,
    Trainer,
};
