//! Synthetic biased-stream experiments.
//!
//! A stream draws classes from a biased marginal, places raw data around
//! well-separated ambient prototypes, and feeds a linear encoder trained by
//! contrastive descent with negatives supplied by a working memory. The
//! sweeps turn the safety and drift claims into measured reports.

mod encoder;
mod experiment;
mod stream;
mod sweeps;

pub use encoder::{batch_loss, encoder_gradient, Encoder, LossKind};
pub use experiment::{
    eviction_log_to_csv, probe_similarities, run_experiment, EvictionLogRow, ExperimentConfig,
    RunMetrics, RunOutput, EVICTION_CSV_HEADER,
};
pub use stream::{gen_stream, StreamConfig, StreamItem, StreamSampler};
pub use sweeps::{
    gradient_grid_csv, gradient_grid_report, observation1_report, theorem1_sweep, DriftGridReport,
    DriftRow, GradientGridRow, SafetySweepConfig, SafetySweepReport, GRADIENT_CSV_HEADER,
};
