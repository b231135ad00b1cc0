//! One interface over the statevector and MPS representations.

use rand::Rng;

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{dagger, CMatrix};
use crate::partition::Partition;
use crate::pauli::{PauliString, PauliSum};
use crate::statevector::StateVector;
use crate::tensornet::{GroupSampler, Mps};

/// A pure many-body state held by either backend.
#[derive(Clone, Debug)]
pub enum QuantumState {
    Dense(StateVector),
    Mps(Mps),
}

impl From<StateVector> for QuantumState {
    fn from(s: StateVector) -> Self {
        QuantumState::Dense(s)
    }
}

impl From<Mps> for QuantumState {
    fn from(m: Mps) -> Self {
        QuantumState::Mps(m)
    }
}

impl QuantumState {
    pub fn n_qubits(&self) -> usize {
        match self {
            QuantumState::Dense(s) => s.n_qubits(),
            QuantumState::Mps(m) => m.n_sites(),
        }
    }

    pub fn backend_name(&self) -> &'static str {
        match self {
            QuantumState::Dense(_) => "statevector",
            QuantumState::Mps(_) => "mps",
        }
    }

    pub fn rdm(&self, group: &[usize]) -> Result<DensityMatrix> {
        match self {
            QuantumState::Dense(s) => s.reduced_density_matrix(group),
            QuantumState::Mps(m) => m.rdm(group),
        }
    }

    pub fn rdms(&self, partition: &Partition) -> Result<Vec<DensityMatrix>> {
        match self {
            QuantumState::Dense(s) => partition.groups().iter().map(|g| s.reduced_density_matrix(g)).collect(),
            QuantumState::Mps(m) => m.rdms(partition),
        }
    }

    pub fn expectation(&self, obs: &PauliSum) -> Result<f64> {
        match self {
            QuantumState::Dense(s) => s.expectation(obs),
            QuantumState::Mps(m) => m.expectation(obs),
        }
    }

    pub fn expectation_string(&self, p: &PauliString) -> Result<f64> {
        match self {
            QuantumState::Dense(s) => s.expectation_string(p),
            QuantumState::Mps(m) => m.expectation_string(p),
        }
    }

    pub fn hamming_weight_distribution(&self) -> Result<Vec<f64>> {
        match self {
            QuantumState::Dense(s) => Ok(s.hamming_weight_distribution()),
            QuantumState::Mps(m) => m.hamming_weight_distribution(),
        }
    }

    /// Distribution of the number of label-1 groups when group `j` is measured
    /// in the orthonormal basis formed by the columns of `bases[j]`.
    pub fn grouped_label_distribution_in_bases(
        &self,
        partition: &Partition,
        bases: &[CMatrix],
        labelers: &[Vec<u8>],
    ) -> Result<Vec<f64>> {
        if bases.len() != partition.len() {
            return Err(Error::Dimension("one measurement basis per group required".into()));
        }
        match self {
            QuantumState::Dense(s) => {
                let mut rotated = s.clone();
                for (v, g) in bases.iter().zip(partition.groups()) {
                    rotated.apply_group_unitary_unchecked(&dagger(&v.view()).view(), g)?;
                }
                rotated.grouped_label_distribution(partition, labelers)
            }
            QuantumState::Mps(m) => m.grouped_label_distribution_in_bases(partition, Some(bases), labelers),
        }
    }

    /// Prepares repeated single-shot measurements over `partition`.
    pub fn shot_sampler<'a>(&'a self, partition: &'a Partition) -> Result<ShotSampler<'a>> {
        if partition.n_qubits() != self.n_qubits() {
            return Err(Error::Dimension("partition size differs from the state".into()));
        }
        Ok(match self {
            QuantumState::Dense(s) => ShotSampler::Dense { state: s, partition },
            QuantumState::Mps(m) => ShotSampler::Mps(GroupSampler::new(m, partition)?),
        })
    }
}

/// Draws one computational-basis shot after rotating every group by its own unitary.
pub enum ShotSampler<'a> {
    Dense { state: &'a StateVector, partition: &'a Partition },
    Mps(GroupSampler),
}

impl ShotSampler<'_> {
    /// Local outcome index for every group; `None` leaves a group unrotated.
    pub fn shot<R: Rng + ?Sized>(&self, unitaries: &[Option<&CMatrix>], rng: &mut R) -> Result<Vec<usize>> {
        match self {
            ShotSampler::Dense { state, partition } => {
                if unitaries.len() != partition.len() {
                    return Err(Error::Dimension("one unitary slot per group required".into()));
                }
                let mut rotated = (*state).clone();
                for (u, g) in unitaries.iter().zip(partition.groups()) {
                    if let Some(u) = u {
                        rotated.apply_group_unitary_unchecked(&u.view(), g)?;
                    }
                }
                let b = rotated.sample(1, rng)[0];
                partition.groups().iter().map(|g| rotated.group_outcome(b, g)).collect()
            }
            ShotSampler::Mps(s) => {
                if unitaries.len() != s.n_groups() {
                    return Err(Error::Dimension("one unitary slot per group required".into()));
                }
                Ok(s.shot(unitaries, rng))
            }
        }
    }
}
