//! Inference and validation toolkit for exoskeleton torque networks.
//!
//! The crate covers the path from raw gait recordings to validation reports:
//! [`ingest`] loads trials, [`signal`] provides uniform-rate primitives,
//! [`ecn`] defines and trains the control network, [`gait`] segments cycles,
//! [`metrics`] computes correlations and joint-power summaries, [`synth`]
//! generates trials with a closed-form torque oracle, [`pipeline`] wires
//! inference into evaluation and [`delay_study`] runs torque-delay sweeps.

pub mod delay_study;
pub mod ecn;
pub mod gait;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod signal;
pub mod synth;

pub use ecn::{EcnModel, FeatureWindow, TrainConfig, TrainSample};
pub use gait::{GaitCycleSet, SegmentConfig};
pub use ingest::{Condition, Joint, Trial, TrialCatalog};
pub use metrics::{CorrelationReport, PowerSummary};
pub use signal::UniformSeries;
