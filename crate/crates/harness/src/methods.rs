//! End-to-end runs of every classification method on a generated dataset.

use std::time::Instant;

use qphase_core::baselines::{bayes_test_error_probs, binomial_error_probs, build_binomial_ump, BayesTest, StateErrors};
use qphase_core::npclassify::{
    average_by_label, error_probabilities, train_from_averages, PartitionedNpClassifier, TrainingAverages,
};
use qphase_core::pauli::o_spt;
use qphase_core::qcnn::{
    exact_qcnn_fm_circuit, exact_qcnn_spt_circuit, fm_max_depth, init_params, spsa_train, spt_max_depth, Evaluation,
    Pooling, QcnnCheckpoint, QcnnLayout, QcnnModel, SpsaConfig, SpsaGains, TrainOutcome,
};
use qphase_core::shadows::{collect_snapshots, reconstruct_all, SnapshotSet};
use qphase_core::statevector::DEFAULT_STATEVECTOR_CAP;
use qphase_core::{Error, Partition, Result, RngStream, StateVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, NptConfig, Task};
use crate::dataset::{Dataset, LabeledState};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Training copies a method consumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotLedger {
    pub training_states: usize,
    /// Measured copies of each training state (shadow snapshots).
    pub copies_per_state: u64,
    /// Circuit evaluations on training states.
    pub evaluations: u64,
    /// Measured copies per evaluation (0 when expectations are exact).
    pub shots_per_evaluation: u64,
    /// Copies drawn from label-0 and label-1 training states.
    pub per_phase: [u64; 2],
    pub training_copies: u64,
    pub formula: String,
}

impl ShotLedger {
    pub fn none() -> Self {
        Self {
            training_states: 0,
            copies_per_state: 0,
            evaluations: 0,
            shots_per_evaluation: 0,
            per_phase: [0, 0],
            training_copies: 0,
            formula: "no training data".into(),
        }
    }

    /// `T_state` snapshots of every training state.
    pub fn shadows(labels: &[u8], t_state: usize) -> Self {
        let n = labels.len();
        let ones = labels.iter().filter(|&&y| y == 1).count() as u64;
        let t = t_state as u64;
        Self {
            training_states: n,
            copies_per_state: t,
            evaluations: 0,
            shots_per_evaluation: 0,
            per_phase: [(n as u64 - ones) * t, ones * t],
            training_copies: n as u64 * t,
            formula: format!("N_train × T_state = {n} × {t_state}"),
        }
    }

    /// Two loss evaluations per SPSA epoch on every training state.
    pub fn spsa(labels: &[u8], epochs: usize, mode: Evaluation) -> Self {
        let n = labels.len() as u64;
        let ones = labels.iter().filter(|&&y| y == 1).count() as u64;
        let per_state = 2 * epochs as u64;
        let shots = match mode {
            Evaluation::Exact => 0,
            Evaluation::Shots(s) => s as u64,
        };
        Self {
            training_states: labels.len(),
            copies_per_state: 0,
            evaluations: n * per_state,
            shots_per_evaluation: shots,
            per_phase: [(n - ones) * per_state * shots, ones * per_state * shots],
            training_copies: n * per_state * shots,
            formula: format!("N_train × N_epoch × 2 × shots = {n} × {epochs} × 2 × {shots}"),
        }
    }

    /// The declared formula and the per-phase split both reproduce the total.
    pub fn is_consistent(&self) -> bool {
        let declared = self.training_states as u64 * self.copies_per_state + self.evaluations * self.shots_per_evaluation;
        declared == self.training_copies && self.per_phase[0] + self.per_phase[1] == self.training_copies
    }
}

/// One method output for one test state; `param` is the grid value it depends on, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateOutput {
    pub state: usize,
    pub j1: f64,
    pub j2: f64,
    pub label: u8,
    pub param: Option<f64>,
    /// The probability of deciding label 1 (npt), the QCNN output, or the order parameter.
    pub value: f64,
}

/// Phase-averaged errors at one grid value and copy count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub param: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl CurvePoint {
    pub fn error_sum(&self) -> f64 {
        self.alpha + self.beta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub method: Method,
    pub task: Task,
    pub l: usize,
    pub backend: String,
    pub seed: u64,
    pub config_hash: String,
    /// Name of the swept parameter of `curves`: `a`, `alpha_level` or `log_c`.
    pub curve_param: String,
    pub outputs: Vec<StateOutput>,
    pub curves: Vec<CurvePoint>,
    pub ledger: ShotLedger,
    pub wall_clock_s: f64,
    pub notes: Vec<String>,
}

impl RunResult {
    pub fn curve_at(&self, n: usize) -> impl Iterator<Item = &CurvePoint> {
        self.curves.iter().filter(move |c| c.n == n)
    }

    /// Least `α + β` over the grid at `n` copies.
    pub fn best_error_sum(&self, n: usize) -> Option<f64> {
        self.curve_at(n).map(CurvePoint::error_sum).min_by(f64::total_cmp)
    }

    /// Least tabulated `n` with a grid point meeting `α ≤ alpha_cap` and `β ≤ beta_target`.
    pub fn copies_to_power(&self, alpha_cap: f64, beta_target: f64) -> Option<usize> {
        self.curves.iter().filter(|c| c.alpha <= alpha_cap && c.beta <= beta_target).map(|c| c.n).min()
    }

    /// Mean squared error between `value` and the labels over outputs at `param`.
    pub fn validation_mse(&self, param: Option<f64>) -> Option<f64> {
        let sel: Vec<&StateOutput> = self.outputs.iter().filter(|o| o.param == param).collect();
        if sel.is_empty() {
            return None;
        }
        Some(sel.iter().map(|o| (o.value - o.label as f64).powi(2)).sum::<f64>() / sel.len() as f64)
    }
}

fn errors_to_point(param: f64, n: usize, e: &StateErrors) -> CurvePoint {
    CurvePoint { param, n, alpha: e.alpha, beta: e.beta }
}

/// Shadow estimates of the training RDMs and their label averages.
pub struct NptTraining {
    pub partition: Partition,
    pub snapshots: Vec<SnapshotSet>,
    pub averages: TrainingAverages,
    pub ledger: ShotLedger,
}

pub fn npt_partition(l: usize, cfg: &NptConfig) -> Result<Partition> {
    Partition::contiguous(l, cfg.k, cfg.remainder)
}

/// Collects `T_state` snapshots of each training state. Shot randomness for
/// state `i` comes from the stream `shadows/state#i`.
pub fn npt_train(data: &Dataset, cfg: &NptConfig, stream: &RngStream) -> Result<NptTraining> {
    let partition = npt_partition(data.spec.l, cfg)?;
    let base = stream.child("shadows");
    let snapshots = data
        .train
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = base.child_idx("state", i as u64).rng();
            collect_snapshots(&s.state, &partition, cfg.t_state, cfg.noise_p, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = data.train_labels();
    let averages = npt_averages(&snapshots, &labels)?;
    Ok(NptTraining { partition, snapshots, averages, ledger: ShotLedger::shadows(&labels, cfg.t_state) })
}

pub fn npt_averages(snapshots: &[SnapshotSet], labels: &[u8]) -> Result<TrainingAverages> {
    let rdms = snapshots.par_iter().map(reconstruct_all).collect::<Result<Vec<_>>>()?;
    average_by_label(&rdms, labels, None)
}

/// One classifier per grid value of `a`.
pub fn npt_classifiers(training: &NptTraining, cfg: &NptConfig, seed: u64) -> Result<Vec<PartitionedNpClassifier>> {
    cfg.a_grid
        .iter()
        .map(|&a| {
            let mut c = train_from_averages(&training.averages, &training.partition, a, cfg.n_ent)?;
            c.provenance.t_state = Some(cfg.t_state);
            c.provenance.seed = Some(seed);
            c.provenance.noise_p = cfg.noise_p;
            Ok(c)
        })
        .collect()
}

/// `p0[g][i]`: single-block probability that classifier `g` decides label 0 on test state `i`.
pub fn npt_decisions(classifiers: &[PartitionedNpClassifier], states: &[LabeledState]) -> Result<(Vec<Vec<f64>>, bool)> {
    let tasks: Vec<(usize, usize)> =
        (0..classifiers.len()).flat_map(|g| (0..states.len()).map(move |i| (g, i))).collect();
    let flat = tasks
        .par_iter()
        .map(|&(g, i)| classifiers[g].classify_probability(&states[i].state))
        .collect::<Result<Vec<_>>>()?;
    let approximate = flat.iter().any(|c| c.approximate);
    let p0 = flat.chunks(states.len().max(1)).map(|row| row.iter().map(|c| c.p0).collect()).collect();
    Ok((p0, approximate))
}

/// Error curves over the `a`-grid for every `n` divisible by `n_ent`.
pub fn npt_curves(a_grid: &[f64], p0: &[Vec<f64>], labels: &[u8], n_grid: &[usize], n_ent: usize) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for (&a, row) in a_grid.iter().zip(p0) {
        for &n in n_grid.iter().filter(|&&n| n % n_ent == 0) {
            let e = error_probabilities(a, row, labels, n, n_ent)?;
            out.push(CurvePoint { param: a, n, alpha: e.alpha, beta: e.beta });
        }
    }
    Ok(out)
}

fn state_outputs(states: &[LabeledState], param: Option<f64>, values: &[f64]) -> Vec<StateOutput> {
    states
        .iter()
        .zip(values)
        .enumerate()
        .map(|(i, (s, &value))| StateOutput { state: i, j1: s.j1, j2: s.j2, label: s.label, param, value })
        .collect()
}

/// Binomial tests at `⟨O⟩_th = threshold` over the significance sweep and every `n`.
pub fn binomial_curves(values: &[f64], labels: &[u8], threshold: f64, alpha_levels: &[f64], n_grid: &[usize]) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for &lvl in alpha_levels {
        for &n in n_grid {
            let test = build_binomial_ump(n, threshold, lvl)?;
            out.push(errors_to_point(lvl, n, &binomial_error_probs(&test, values, labels)?));
        }
    }
    Ok(out)
}

fn dense_states(states: &[LabeledState], l: usize) -> Result<Vec<StateVector>> {
    if l > DEFAULT_STATEVECTOR_CAP {
        return Err(Error::InvalidConfig(format!(
            "QCNN circuits run on dense states; L = {l} exceeds the cap of {DEFAULT_STATEVECTOR_CAP}"
        )));
    }
    Dataset::dense(states)
}

/// QCNN layout for a task: halving pooling for FM, thirding for SPT.
pub fn qcnn_layout(task: Task, l: usize, depth: Option<usize>) -> Result<QcnnLayout> {
    let pooling = match task {
        Task::Fm => Pooling::Halving,
        Task::Spt => Pooling::Thirding,
    };
    QcnnLayout::new(l, pooling, depth)
}

/// SPSA training of the QCNN on the dataset's training states.
pub fn train_qcnn(data: &Dataset, config: &ExperimentConfig, stream: &RngStream) -> Result<(QcnnCheckpoint, TrainOutcome)> {
    let l = data.spec.l;
    let layout = qcnn_layout(config.task, l, config.qcnn.depth)?;
    let train = dense_states(&data.train, l)?;
    let y: Vec<f64> = data.train.iter().map(|s| s.label as f64).collect();
    let theta0 = init_params(&layout, &mut stream.child("qcnn-init").rng())?;
    let spsa = SpsaConfig { epochs: config.qcnn.epochs, gains: SpsaGains::standard(config.qcnn.epochs), mode: config.qcnn.evaluation };
    let (test, ty);
    let validation = if config.qcnn.track_validation {
        test = dense_states(&data.test, l)?;
        ty = data.test.iter().map(|s| s.label as f64).collect::<Vec<_>>();
        Some(qphase_core::qcnn::Dataset { states: &test, labels: &ty })
    } else {
        None
    };
    let outcome = spsa_train(
        &qphase_core::qcnn::Dataset { states: &train, labels: &y },
        validation.as_ref(),
        &layout,
        theta0,
        &spsa,
        &mut stream.child("spsa").rng(),
    )?;
    Ok((QcnnCheckpoint::new(layout, &outcome, spsa, stream.seed()), outcome))
}

pub fn qcnn_outputs(checkpoint: &QcnnCheckpoint, states: &[LabeledState], l: usize) -> Result<Vec<f64>> {
    QcnnModel::new(&checkpoint.layout, &checkpoint.theta)?.forward_batch(&dense_states(states, l)?)
}

pub fn exact_qcnn_outputs(task: Task, depth: Option<usize>, states: &[LabeledState], l: usize) -> Result<Vec<f64>> {
    let circuit = match task {
        Task::Fm => exact_qcnn_fm_circuit(l, depth.unwrap_or_else(|| fm_max_depth(l)))?,
        Task::Spt => exact_qcnn_spt_circuit(l, depth.unwrap_or_else(|| spt_max_depth(l)))?,
    };
    let dense = dense_states(states, l)?;
    dense.par_iter().map(|s| circuit.output(s)).collect()
}

/// Order-parameter values of the test states: `⟨O_SPT⟩`, or the mean absolute
/// magnetization for FM.
pub fn order_parameter_values(task: Task, states: &[LabeledState], l: usize) -> Result<Vec<f64>> {
    match task {
        Task::Spt => {
            let o = o_spt(l)?;
            states.par_iter().map(|s| s.state.expectation_string(&o)).collect()
        }
        Task::Fm => states
            .par_iter()
            .map(|s| {
                let w = s.state.hamming_weight_distribution()?;
                Ok(w.iter().enumerate().map(|(m, p)| p * (l as f64 - 2.0 * m as f64).abs() / l as f64).sum())
            })
            .collect(),
    }
}

pub fn check_dataset(data: &Dataset, config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    if data.spec != config.dataset {
        return Err(Error::InvalidConfig("dataset was generated from a different specification".into()));
    }
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::InvalidConfig("dataset has no training or no test states".into()));
    }
    Ok(())
}

/// Runs one method end to end and fills its shot ledger.
pub fn run_method(method: Method, data: &Dataset, config: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    check_dataset(data, config)?;
    if method == Method::Npt && config.npt.k * config.npt.n_ent > qphase_core::npclassify::MAX_TEST_QUBITS {
        return Err(Error::InvalidConfig("k · n_ent exceeds the dense per-group test size".into()));
    }
    let start = Instant::now();
    let l = data.spec.l;
    let stream = RngStream::new(seed).child(method.id());
    let labels = data.test_labels();
    let mut notes = Vec::new();
    let (curve_param, outputs, curves, ledger) = match method {
        Method::Npt => {
            let training = npt_train(data, &config.npt, &stream)?;
            let classifiers = npt_classifiers(&training, &config.npt, seed)?;
            let (outputs, curves, approximate) = npt_evaluate(&classifiers, data, config)?;
            if approximate {
                notes.push(APPROXIMATE_NOTE.into());
            }
            ("a", outputs, curves, training.ledger)
        }
        Method::OrderParam => {
            let values = order_parameter_values(config.task, &data.test, l)?;
            let outputs = state_outputs(&data.test, None, &values);
            match config.task {
                Task::Spt => {
                    let curves = binomial_curves(&values, &labels, config.order_param.threshold, &config.alpha_levels, &config.n_grid)?;
                    ("alpha_level", outputs, curves, ShotLedger::none())
                }
                Task::Fm => {
                    let cfg = &config.order_param;
                    let test = BayesTest::new(l, cfg.ramp_rule)?;
                    let dists = data
                        .test
                        .par_iter()
                        .map(|s| s.state.hamming_weight_distribution())
                        .collect::<Result<Vec<_>>>()?;
                    let per_n = config
                        .n_grid
                        .par_iter()
                        .map(|&n| {
                            let mut rng = stream.child_idx("bayes-n", n as u64).rng();
                            bayes_test_error_probs(&test, &dists, &labels, n, &cfg.log_c_grid, cfg.mc_samples, &mut rng)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let mut curves = Vec::new();
                    for (g, &lc) in cfg.log_c_grid.iter().enumerate() {
                        for (errs, &n) in per_n.iter().zip(&config.n_grid) {
                            curves.push(errors_to_point(lc, n, &errs[g]));
                        }
                    }
                    ("log_c", outputs, curves, ShotLedger::none())
                }
            }
        }
        Method::ExactQcnn => {
            let f = exact_qcnn_outputs(config.task, config.exact_qcnn.depth, &data.test, l)?;
            let curves = binomial_curves(&f, &labels, config.exact_qcnn.threshold, &config.alpha_levels, &config.n_grid)?;
            ("alpha_level", state_outputs(&data.test, None, &f), curves, ShotLedger::none())
        }
        Method::Qcnn => {
            let (ckpt, outcome) = train_qcnn(data, config, &stream)?;
            let f = qcnn_outputs(&ckpt, &data.test, l)?;
            let curves = binomial_curves(&f, &labels, config.qcnn.threshold, &config.alpha_levels, &config.n_grid)?;
            let ledger = ShotLedger::spsa(&data.train_labels(), config.qcnn.epochs, config.qcnn.evaluation);
            if ledger.evaluations != outcome.evaluations || ledger.training_copies != outcome.training_copies {
                return Err(Error::NumericalFailure("SPSA evaluation count disagrees with the ledger".into()));
            }
            ("alpha_level", state_outputs(&data.test, None, &f), curves, ledger)
        }
    };
    Ok(finish(method, data, config, seed, curve_param, outputs, curves, ledger, notes, start))
}

pub const APPROXIMATE_NOTE: &str = "n_ent > 1: per-group outcomes treated as independent (approximate)";

/// Outputs and curves of trained classifiers, one per grid value of `a`.
pub fn npt_evaluate(
    classifiers: &[PartitionedNpClassifier],
    data: &Dataset,
    config: &ExperimentConfig,
) -> Result<(Vec<StateOutput>, Vec<CurvePoint>, bool)> {
    let a_grid: Vec<f64> = classifiers.iter().map(|c| c.a).collect();
    let n_ent = classifiers.first().map_or(1, |c| c.n_ent);
    if classifiers.iter().any(|c| c.n_ent != n_ent) {
        return Err(Error::InvalidConfig("classifiers disagree on n_ent".into()));
    }
    let (p0, approximate) = npt_decisions(classifiers, &data.test)?;
    let curves = npt_curves(&a_grid, &p0, &data.test_labels(), &config.n_grid, n_ent)?;
    let outputs = a_grid
        .iter()
        .zip(&p0)
        .flat_map(|(&a, row)| {
            let p1: Vec<f64> = row.iter().map(|p| 1.0 - p).collect();
            state_outputs(&data.test, Some(a), &p1)
        })
        .collect();
    Ok((outputs, curves, approximate))
}

/// Assembles a result and its notes.
#[allow(clippy::too_many_arguments)]
pub fn finish(
    method: Method,
    data: &Dataset,
    config: &ExperimentConfig,
    seed: u64,
    curve_param: &str,
    outputs: Vec<StateOutput>,
    curves: Vec<CurvePoint>,
    ledger: ShotLedger,
    mut notes: Vec<String>,
    start: Instant,
) -> RunResult {
    if !data.spec.note.is_empty() {
        notes.insert(0, data.spec.note.clone());
    }
    let negatives = match method {
        Method::ExactQcnn | Method::Qcnn => outputs.iter().filter(|o| o.value < 0.0).count(),
        _ => 0,
    };
    if negatives > 0 {
        notes.push(format!("{negatives} outputs below zero entered the threshold test as (1 + f)/2"));
    }
    RunResult {
        schema_version: RESULT_SCHEMA_VERSION,
        method,
        task: config.task,
        l: data.spec.l,
        backend: data.test[0].state.backend_name().into(),
        seed,
        config_hash: config.hash(seed),
        curve_param: curve_param.into(),
        outputs,
        curves,
        ledger,
        wall_clock_s: start.elapsed().as_secs_f64(),
        notes,
    }
}
