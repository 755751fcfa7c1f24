//! Discriminative event-based modelling of disease progression from
//! cross-sectional biomarker data, including training strategies for
//! stratified populations and a simulation and evaluation harness.

pub mod dataset;
pub mod evaluate;
pub mod mixture;
pub mod model;
pub mod ordering;
pub mod seeds;
pub mod simulate;
pub mod staging;

pub use dataset::{BiomarkerDataset, CsvSchema, DiagnosisLabel, Direction, Subject};
pub use mixture::{MixtureFit, MixtureSet, OptimizerOptions, Strategy};
pub use model::{fit_model, FittedModel};
pub use ordering::DiseaseTimeline;
pub use simulate::{GroundTruth, SimulationConfig};
pub use staging::PatientStage;
