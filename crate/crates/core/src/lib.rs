//! Synthetic MTPL ratemaking data by MICE amputation-imputation, and the
//! fidelity and GLM-consistency metrics used to score synthetic tables.
pub mod augment;
pub mod claims_sim;
pub mod forest;
pub mod glm;
pub mod metrics;
pub mod mice;
pub mod portfolio;
pub mod rng;
pub mod runner;
pub mod tabular;
pub mod terms;

pub use augment::{assemble, partition_synthetic, AugmentError, StructureParam};
pub use claims_sim::{builtin_scenario, Scenario, ScenarioError, ScenarioKind};
pub use forest::{Forest, ForestError, ForestParams};
pub use glm::{DesignSpec, FittedGlm, GlmError, IrlsOptions};
pub use metrics::{DatasetMetrics, MetricError, MetricOptions, ModelMetricInputs, MseConvention, RatioTable};
pub use mice::{AmputationPlan, MiceError, MiceParams, MissingMask, Strategy};
pub use runner::{ExperimentConfig, MetricReport, ResultsStore, RunnerError};
pub use tabular::{Column, ColumnKind, ColumnRole, ColumnSpec, DataError, Dataset, Schema};
pub use terms::{Factor, Term};

/// Any error raised by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Mice(#[from] MiceError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
}
