//! outagewatch: sequence-encoded density forecasting for QoS metrics with
//! extreme-event classification, sustained-exceedance outage detection, and
//! deterministic end-to-end pipelines.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod infer;
pub mod ingest;
pub mod labeling;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use infer::{DecisionConfig, ModelBundle, OutageEvent, ProbSeries};
pub use ingest::{MetricFrame, Schema};
pub use labeling::{AlertRecord, LabelParams, ProxyLabelSeries};
pub use model::{EncoderKind, LossKind, MixtureParams, ModelConfig};
pub use train::{Checkpoint, Dataset, TrainOptions, TrainReport};
