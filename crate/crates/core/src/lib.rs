//! Simulation backends, shadow tomography, partitioned Neyman-Pearson tests and
//! baseline classifiers for phases of the one-dimensional cluster-Ising model.

pub mod backend;
pub mod baselines;
pub mod density;
pub mod error;
pub mod lanczos;
pub mod linalg;
pub mod npclassify;
pub mod partition;
pub mod qcnn;
pub mod pauli;
pub mod rng;
pub mod shadows;
pub mod statevector;
pub mod tensornet;

pub use backend::{QuantumState, ShotSampler};
pub use density::DensityMatrix;
pub use error::{Error, Result};
pub use partition::{Partition, RemainderPolicy};
pub use pauli::{build_cluster_ising, Boundary, Pauli, PauliString, PauliSum};
pub use rng::RngStream;
pub use statevector::{ground_state, GroundState, GroundStateOptions, StateVector};
