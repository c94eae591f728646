//! Experiment harness around `spectral_enkf`: config handling, the three
//! experiments and their CSV/JSON/SVG outputs.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::{ExperimentConfig, ExperimentKind, MethodName, OutputFormat, TransformChoice};
pub use error::CliError;
pub use experiment::{run, MethodMetrics, MetricsReport, RunOutput};
