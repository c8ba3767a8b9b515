//! Toy training, evaluation, inference and file formats.

pub mod config;
pub mod data;
pub mod export;
pub mod gradsuite;
pub mod imageio;
pub mod infer;
pub mod metrics;
pub mod optim;
pub mod train;
pub mod weights;

pub use config::{RunConfig, TrainConfig, IGNORE_INDEX};
pub use data::{augment, generate, AugmentParams, Sample, SyntheticConfig};
pub use export::{export_weightmaps, write_weightmaps, WeightmapEntry};
pub use gradsuite::{gradcheck_hgd, gradcheck_suite, OpSummary, SUITE_OPS};
pub use infer::{multiscale_infer, SegmentationModel, EVAL_SCALES};
pub use metrics::{compute_metrics, Confusion, SegMetrics};
pub use optim::{poly_lr, sgd_update, Sgd};
pub use train::{evaluate, evaluate_multiscale, train_step, train_toy, LogRecord, TrainOutcome};
pub use weights::{load_weights, save_weights, NamedTensor};
