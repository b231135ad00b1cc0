//! Ground-state datasets and their on-disk checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use qphase_core::linalg::C64;
use qphase_core::tensornet::{dmrg_ground_state, mpo_from_pauli_sum, DmrgOptions, Mps};
use qphase_core::{build_cluster_ising, ground_state, Error, GroundStateOptions, QuantumState, Result, RngStream, StateVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, BackendSpec, DatasetSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug)]
pub struct LabeledState {
    pub j1: f64,
    pub j2: f64,
    pub label: u8,
    pub energy: f64,
    pub state: QuantumState,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<LabeledState>,
    pub test: Vec<LabeledState>,
}

impl Dataset {
    pub fn train_labels(&self) -> Vec<u8> {
        self.train.iter().map(|s| s.label).collect()
    }

    pub fn test_labels(&self) -> Vec<u8> {
        self.test.iter().map(|s| s.label).collect()
    }

    /// Dense copies of the states, as the QCNN circuits need.
    pub fn dense(states: &[LabeledState]) -> Result<Vec<StateVector>> {
        states
            .iter()
            .map(|s| match &s.state {
                QuantumState::Dense(v) => Ok(v.clone()),
                QuantumState::Mps(m) => m.to_statevector(),
            })
            .collect()
    }
}

/// `(split, j1, j2, label)` for every point of a `DatasetSpec`, training points first.
pub fn dataset_points(spec: &DatasetSpec) -> Result<Vec<(Split, f64, f64, u8)>> {
    spec.validate()?;
    let mut points: Vec<_> = spec.train.iter().map(|p| (Split::Train, p.j1, p.j2, p.label)).collect();
    let mut rng = RngStream::new(spec.seed).child("test-points").rng();
    let t = &spec.test;
    for _ in 0..t.count {
        let j1 = t.j1[0] + (t.j1[1] - t.j1[0]) * rng.random::<f64>();
        let j2 = t.j2[0] + (t.j2[1] - t.j2[0]) * rng.random::<f64>();
        points.push((Split::Test, j1, j2, t.rule.label(j1, j2)?));
    }
    Ok(points)
}

/// The ground state at one point with the selected backend.
pub fn solve_point(spec: &DatasetSpec, j1: f64, j2: f64) -> Result<(QuantumState, f64)> {
    let h = build_cluster_ising(spec.l, j1, j2, spec.boundary)?;
    match spec.backend {
        BackendSpec::Statevector => {
            let gs = ground_state(&h, &GroundStateOptions::default())?;
            Ok((gs.state.into(), gs.energy))
        }
        BackendSpec::Mps { chi_max } => {
            let mpo = mpo_from_pauli_sum(&h)?;
            let r = dmrg_ground_state(&mpo, &DmrgOptions { chi_max, ..DmrgOptions::default() })?;
            if !r.converged {
                return Err(Error::ConvergenceFailure { iterations: r.sweep_energies.len(), residual: f64::NAN });
            }
            Ok((r.mps.into(), r.energy))
        }
    }
}

pub const STATEVECTOR_FORMAT: &str = "qphase-statevector";
pub const MANIFEST_FORMAT: &str = "qphase-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVectorFile {
    pub format: String,
    pub version: u32,
    pub n_qubits: usize,
    pub amplitudes: Vec<[f64; 2]>,
}

impl StateVectorFile {
    pub fn from_state(s: &StateVector) -> Self {
        Self {
            format: STATEVECTOR_FORMAT.into(),
            version: 1,
            n_qubits: s.n_qubits(),
            amplitudes: s.amplitudes().iter().map(|z| [z.re, z.im]).collect(),
        }
    }

    pub fn to_state(&self) -> Result<StateVector> {
        if self.format != STATEVECTOR_FORMAT || self.version != 1 {
            return Err(Error::InvalidConfig(format!("not a statevector file: {} v{}", self.format, self.version)));
        }
        if self.amplitudes.len() != 1usize << self.n_qubits {
            return Err(Error::Dimension("amplitude count does not match the qubit count".into()));
        }
        StateVector::new(self.amplitudes.iter().map(|&[re, im]| C64::new(re, im)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub index: usize,
    pub j1: f64,
    pub j2: f64,
    pub label: u8,
    pub energy: f64,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFailure {
    pub split: Split,
    pub index: usize,
    pub j1: f64,
    pub j2: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub spec: DatasetSpec,
    pub complete: bool,
    pub entries: Vec<ManifestEntry>,
    pub failures: Vec<ManifestFailure>,
}

fn state_bytes(state: &QuantumState) -> Result<Vec<u8>> {
    Ok(match state {
        QuantumState::Dense(s) => serde_json::to_vec(&StateVectorFile::from_state(s))?,
        QuantumState::Mps(m) => serde_json::to_vec(&m.to_checkpoint())?,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Solves every point (in parallel; results keep point order). With a
/// checkpoint directory each state is written as it is available and a
/// manifest records hashes; a failing point leaves a partial manifest and
/// aborts the run.
pub fn generate_dataset(spec: &DatasetSpec, checkpoint: Option<&Path>) -> Result<Dataset> {
    let points = dataset_points(spec)?;
    if let Some(dir) = checkpoint {
        fs::create_dir_all(dir)?;
    }
    let mut counters = [0usize; 2];
    let indexed: Vec<(Split, usize, f64, f64, u8)> = points
        .iter()
        .map(|&(split, j1, j2, label)| {
            let c = &mut counters[split as usize];
            *c += 1;
            (split, *c - 1, j1, j2, label)
        })
        .collect();
    let solved: Vec<Result<(QuantumState, f64, Option<ManifestEntry>)>> = indexed
        .par_iter()
        .map(|&(split, index, j1, j2, label)| {
            let (state, energy) = solve_point(spec, j1, j2)?;
            let entry = match checkpoint {
                Some(dir) => {
                    let file = format!("{}-{index:04}.json", split_name(split));
                    let bytes = state_bytes(&state)?;
                    fs::write(dir.join(&file), &bytes)?;
                    Some(ManifestEntry { split, index, j1, j2, label, energy, file, sha256: sha256_hex(&bytes) })
                }
                None => None,
            };
            Ok((state, energy, entry))
        })
        .collect();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut data = Dataset { spec: spec.clone(), train: Vec::new(), test: Vec::new() };
    for (&(split, index, j1, j2, label), r) in indexed.iter().zip(solved) {
        match r {
            Ok((state, energy, entry)) => {
                entries.extend(entry);
                let s = LabeledState { j1, j2, label, energy, state };
                match split {
                    Split::Train => data.train.push(s),
                    Split::Test => data.test.push(s),
                }
            }
            Err(e) => failures.push(ManifestFailure { split, index, j1, j2, error: e.to_string() }),
        }
    }
    if let Some(dir) = checkpoint {
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            spec: spec.clone(),
            complete: failures.is_empty(),
            entries,
            failures: failures.clone(),
        };
        fs::write(manifest_path(dir), serde_json::to_string_pretty(&manifest)?)?;
    }
    if let Some(f) = failures.first() {
        return Err(Error::NumericalFailure(format!(
            "{} of {} states failed; first at ({}, {}): {}",
            failures.len(),
            points.len(),
            f.j1,
            f.j2,
            f.error
        )));
    }
    Ok(data)
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_slice(&fs::read(manifest_path(dir))?)?;
    if m.format != MANIFEST_FORMAT || m.version != 1 {
        return Err(Error::InvalidConfig(format!("not a dataset manifest: {} v{}", m.format, m.version)));
    }
    Ok(m)
}

/// Reloads a complete checkpoint, verifying every file hash.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    if !m.complete {
        return Err(Error::InvalidConfig(format!("dataset in {} is partial", dir.display())));
    }
    let mut data = Dataset { spec: m.spec.clone(), train: Vec::new(), test: Vec::new() };
    for e in &m.entries {
        let bytes = fs::read(dir.join(&e.file))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Error::InvalidConfig(format!("hash mismatch for {}", e.file)));
        }
        let state: QuantumState = match m.spec.backend {
            BackendSpec::Statevector => serde_json::from_slice::<StateVectorFile>(&bytes)?.to_state()?.into(),
            BackendSpec::Mps { .. } => Mps::from_checkpoint(&serde_json::from_slice(&bytes)?)?.into(),
        };
        let s = LabeledState { j1: e.j1, j2: e.j2, label: e.label, energy: e.energy, state };
        match e.split {
            Split::Train => data.train.push(s),
            Split::Test => data.test.push(s),
        }
    }
    Ok(data)
}
