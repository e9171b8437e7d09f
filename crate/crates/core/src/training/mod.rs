//! Optimizer, learning-rate schedule, augmentation and the epoch loop.

pub mod adam;
pub mod augment;
pub mod epoch;
pub mod report;
pub mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use augment::{augment, fit_side, AugmentConfig};
pub use epoch::{
    classifier_geometry, evaluate_classifier, predict, pretrain_epoch, supervised_epoch, train_epoch, EpochStats,
    EvalResult, MaskPolicy, Mode, Model, TrainConfig,
};
pub use report::{EpochRecord, RunReport, CSV_HEADER};
pub use schedule::{cosine_lr, ScheduleConfig};
