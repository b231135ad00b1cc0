//! Dataset generation, end-to-end method runs and result emission for the
//! cluster-Ising phase-classification experiments.

pub mod config;
pub mod dataset;
pub mod methods;
pub mod results;

pub use config::{BackendSpec, DatasetSpec, ExperimentConfig, Method, PhaseRule, Task};
pub use dataset::{generate_dataset, load_dataset, Dataset, LabeledState};
pub use methods::{run_method, CurvePoint, RunResult, ShotLedger, StateOutput};
pub use results::{emit_results, Format};
