//! Sparse identification of ODE right-hand sides by fitting dictionary
//! coefficients through one-step RK4 predictions between samples.

pub mod baseline;
pub mod benchmarks;
pub mod dictionary;
pub mod error;
mod kernel;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod regression;
pub mod render;
pub mod rk4;
pub mod sparsify;
pub mod trajectory;

pub use dictionary::{Dictionary, DictionarySpec, FeatureDescriptor, FeatureKind};
pub use error::{Error, Result};
pub use model::{CoefficientMatrix, FormKind, ModelForm, ModelPart, PartRole};
pub use regression::{LossConfig, OptimizerConfig, SolverConfig, TrainingData};
pub use rk4::{Direction, PredictionPair, Rk4Weights};
pub use trajectory::{Trajectory, TrajectorySet};
pub use pipeline::{run_discovery, DiscoveryConfig, NormalizationMode};
pub use sparsify::{DiscoveredModel, ThresholdMode, Tolerance};
