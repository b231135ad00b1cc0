//! Dataset and experiment configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use qphase_core::baselines::{default_alpha_levels, default_log_c_grid, RampRule};
use qphase_core::npclassify::{default_a_grid, linspace};
use qphase_core::qcnn::Evaluation;
use qphase_core::{Boundary, Error, RemainderPolicy, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Which nontrivial phase is separated from the trivial one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Spt,
    Fm,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Spt => "spt",
            Task::Fm => "fm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Npt,
    OrderParam,
    ExactQcnn,
    Qcnn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Npt, Method::OrderParam, Method::ExactQcnn, Method::Qcnn];

    pub fn id(self) -> &'static str {
        match self {
            Method::Npt => "npt",
            Method::OrderParam => "order-param",
            Method::ExactQcnn => "exact-qcnn",
            Method::Qcnn => "qcnn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    J1,
    J2,
}

/// How a point `(J1, J2)` is assigned its label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhaseRule {
    /// Label 1 iff the coupling is strictly above `value`.
    Threshold { coupling: Coupling, value: f64 },
    /// Counts the roots of `1 + J1 z + J2 z²` inside the unit disk: none is
    /// label 0, `target` is label 1, anything else is outside the task.
    Winding { target: u8 },
}

/// Roots of `1 + J1 z + J2 z²` strictly inside the unit disk; `None` on the circle.
pub fn winding_number(j1: f64, j2: f64) -> Option<u8> {
    const EDGE: f64 = 1e-12;
    let inside = |r: f64| {
        if (r - 1.0).abs() < EDGE {
            None
        } else {
            Some(u8::from(r < 1.0))
        }
    };
    if j2 == 0.0 {
        if j1 == 0.0 {
            return Some(0);
        }
        return inside(1.0 / j1.abs());
    }
    let disc = j1 * j1 - 4.0 * j2;
    let moduli = if disc >= 0.0 {
        let s = disc.sqrt();
        // Stable pair: q = −(J1 + sign(J1)·s)/2, roots q/J2 and 1/q.
        let q = -0.5 * (j1 + if j1 >= 0.0 { s } else { -s });
        [(q / j2).abs(), (1.0 / q).abs()]
    } else {
        let r = (1.0 / j2.abs()).sqrt();
        [r, r]
    };
    Some(inside(moduli[0])? + inside(moduli[1])?)
}

impl PhaseRule {
    pub fn label(&self, j1: f64, j2: f64) -> Result<u8> {
        match *self {
            PhaseRule::Threshold { coupling, value } => {
                let x = match coupling {
                    Coupling::J1 => j1,
                    Coupling::J2 => j2,
                };
                Ok(u8::from(x > value))
            }
            PhaseRule::Winding { target } => match winding_number(j1, j2) {
                Some(0) => Ok(0),
                Some(w) if w == target => Ok(1),
                Some(w) => Err(Error::InvalidConfig(format!("({j1}, {j2}) has winding {w}, outside the task"))),
                None => Err(Error::InvalidConfig(format!("({j1}, {j2}) lies on a phase boundary"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPoint {
    pub j1: f64,
    pub j2: f64,
    pub label: u8,
}

/// Uniformly sampled test points in a rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRegion {
    pub j1: [f64; 2],
    pub j2: [f64; 2],
    pub count: usize,
    pub rule: PhaseRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    Statevector,
    Mps { chi_max: usize },
}

impl FromStr for BackendSpec {
    type Err = Error;

    /// `statevector`, `mps` (χ = 200) or `mps:<chi>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "statevector" => Ok(BackendSpec::Statevector),
            None if s == "mps" => Ok(BackendSpec::Mps { chi_max: 200 }),
            Some(("mps", chi)) => chi
                .parse()
                .map(|chi_max| BackendSpec::Mps { chi_max })
                .map_err(|_| Error::InvalidConfig(format!("bad bond dimension in {s:?}"))),
            _ => Err(Error::InvalidConfig(format!("unknown backend {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub l: usize,
    #[serde(default)]
    pub boundary: Boundary,
    pub train: Vec<TrainPoint>,
    pub test: TestRegion,
    pub backend: BackendSpec,
    pub seed: u64,
    /// Where the coordinates come from; carried into every output.
    #[serde(default)]
    pub note: String,
}

pub const DEFAULT_COORDINATES_NOTE: &str =
    "default coordinates: reconstructed training line and test box, not published values";

impl DatasetSpec {
    /// Twenty training points on the J1 = 0 (SPT) or J2 = 0 (FM) line over
    /// [0, 2] and a near-boundary test box.
    pub fn default_for(task: Task, l: usize) -> Self {
        let line = linspace(0.0, 2.0, 20);
        let (train, j1, j2): (Vec<TrainPoint>, _, _) = match task {
            Task::Spt => (
                line.iter().map(|&j2| TrainPoint { j1: 0.0, j2, label: u8::from(j2 > 1.0) }).collect(),
                [0.0, 0.5],
                [0.8, 1.2],
            ),
            Task::Fm => (
                line.iter().map(|&j1| TrainPoint { j1, j2: 0.0, label: u8::from(j1 > 1.0) }).collect(),
                [0.8, 1.2],
                [0.0, 0.5],
            ),
        };
        let target = match task {
            Task::Spt => 2,
            Task::Fm => 1,
        };
        let backend = if l <= 20 { BackendSpec::Statevector } else { BackendSpec::Mps { chi_max: 200 } };
        Self {
            l,
            boundary: Boundary::Open,
            train,
            test: TestRegion { j1, j2, count: 100, rule: PhaseRule::Winding { target } },
            backend,
            seed: 0,
            note: DEFAULT_COORDINATES_NOTE.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 3 {
            return Err(Error::InvalidSystemSize(format!("L = {} is below 3", self.l)));
        }
        if self.train.is_empty() {
            return Err(Error::InvalidConfig("no training points".into()));
        }
        if self.test.count == 0 {
            return Err(Error::InvalidConfig("test count must be at least 1".into()));
        }
        let [a, b] = self.test.j1;
        let [c, d] = self.test.j2;
        if !(a <= b && c <= d && [a, b, c, d].iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidConfig("test box bounds must be finite and ordered".into()));
        }
        if let BackendSpec::Mps { chi_max } = self.backend {
            if chi_max == 0 {
                return Err(Error::InvalidConfig("χ_max must be positive".into()));
            }
            if self.boundary == Boundary::Periodic {
                return Err(Error::InvalidConfig("the MPS backend supports open boundaries only".into()));
            }
        }
        for p in &self.train {
            if p.label > 1 {
                return Err(Error::InvalidConfig(format!("label {} at ({}, {})", p.label, p.j1, p.j2)));
            }
            let expect = self.test.rule.label(p.j1, p.j2)?;
            if expect != p.label {
                return Err(Error::InvalidConfig(format!(
                    "training point ({}, {}) carries label {} but the rule gives {expect}",
                    p.j1, p.j2, p.label
                )));
            }
        }
        if !self.train.iter().any(|p| p.label == 0) || !self.train.iter().any(|p| p.label == 1) {
            return Err(Error::DegenerateTrainingSet("both labels need at least one training point".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NptConfig {
    /// Qubits per group.
    pub k: usize,
    /// Shadow snapshots per training state.
    pub t_state: usize,
    pub a_grid: Vec<f64>,
    pub n_ent: usize,
    /// Depolarizing probability applied to training snapshots.
    pub noise_p: f64,
    pub remainder: RemainderPolicy,
}

impl Default for NptConfig {
    fn default() -> Self {
        Self { k: 3, t_state: 30, a_grid: default_a_grid(), n_ent: 1, noise_p: 0.0, remainder: RemainderPolicy::Exclude }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrderParamConfig {
    /// `⟨O⟩_th` of the binomial test.
    pub threshold: f64,
    pub log_c_grid: Vec<f64>,
    pub mc_samples: usize,
    pub ramp_rule: RampRule,
}

impl Default for OrderParamConfig {
    fn default() -> Self {
        Self { threshold: 0.0, log_c_grid: default_log_c_grid(), mc_samples: 10_000, ramp_rule: RampRule::Max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExactQcnnConfig {
    /// Pooling layers; the deepest valid circuit when absent.
    pub depth: Option<usize>,
    pub threshold: f64,
}

impl Default for ExactQcnnConfig {
    fn default() -> Self {
        Self { depth: None, threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QcnnConfig {
    pub epochs: usize,
    pub evaluation: Evaluation,
    pub depth: Option<usize>,
    pub threshold: f64,
    /// Record the validation loss after every epoch.
    pub track_validation: bool,
}

impl Default for QcnnConfig {
    fn default() -> Self {
        Self { epochs: 150, evaluation: Evaluation::Exact, depth: None, threshold: 0.5, track_validation: true }
    }
}

/// Everything a run depends on besides the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: Task,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub npt: NptConfig,
    #[serde(default)]
    pub order_param: OrderParamConfig,
    #[serde(default)]
    pub exact_qcnn: ExactQcnnConfig,
    #[serde(default)]
    pub qcnn: QcnnConfig,
    /// Test copy counts `n` at which every error curve is tabulated.
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    /// Significance levels swept by the binomial tests.
    #[serde(default = "default_alpha_levels")]
    pub alpha_levels: Vec<f64>,
}

pub fn default_n_grid() -> Vec<usize> {
    (1..=30).collect()
}

impl ExperimentConfig {
    pub fn default_for(task: Task, l: usize) -> Self {
        let k = match task {
            Task::Spt => 3,
            Task::Fm => 2,
        };
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            task,
            dataset: DatasetSpec::default_for(task, l),
            npt: NptConfig { k, ..NptConfig::default() },
            order_param: OrderParamConfig::default(),
            exact_qcnn: ExactQcnnConfig::default(),
            qcnn: QcnnConfig::default(),
            n_grid: default_n_grid(),
            alpha_levels: default_alpha_levels(),
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!("config schema {} is not {CONFIG_SCHEMA_VERSION}", self.schema_version)));
        }
        self.dataset.validate()?;
        let npt = &self.npt;
        if npt.k == 0 || npt.k > self.dataset.l {
            return Err(Error::InvalidConfig(format!("group size {} for L = {}", npt.k, self.dataset.l)));
        }
        if npt.t_state == 0 || npt.n_ent == 0 {
            return Err(Error::InvalidConfig("t_state and n_ent must be positive".into()));
        }
        if npt.a_grid.is_empty() || npt.a_grid.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("the a-grid needs finite values".into()));
        }
        if !(0.0..=1.0).contains(&npt.noise_p) {
            return Err(Error::InvalidProbability(npt.noise_p));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::InvalidConfig("the n-grid needs positive copy counts".into()));
        }
        if self.alpha_levels.is_empty() || self.alpha_levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidConfig("significance levels must lie in (0, 1)".into()));
        }
        if self.qcnn.epochs == 0 {
            return Err(Error::InvalidConfig("the QCNN needs at least one epoch".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the config and the run seed.
    pub fn hash(&self, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(seed.to_le_bytes());
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
