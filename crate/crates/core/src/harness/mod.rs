//! Training, evaluation, checkpointing, ablation and quality-map export.

mod ablate;
mod checkpoint;
mod config;
mod data;
mod eval;
mod optim;
mod pretrain;
mod qmap;
mod train;

pub use ablate::{ablate, context_experiment, AblationRow, AblationTable, ContextOutcome};
pub use checkpoint::{Checkpoint, TensorEntry, BLOB_FILE, MANIFEST_FILE};
pub use config::{DataConfig, LrSchedule, OptimConfig, COSINE_FLOOR, PretrainConfig, RunConfig};
pub use data::{clip_pair, prepare, Sample};
pub use eval::{evaluate, write_predictions, EvalReport, Prediction};
pub use optim::AdamW;
pub use pretrain::{pretrain_backbone, transfer_backbone, PretrainReport};
pub use qmap::{export_quality_map, MapExport, QualityMapReport};
pub use train::{train, train_with_init, write_log, EpochLog, TrainOutcome};
