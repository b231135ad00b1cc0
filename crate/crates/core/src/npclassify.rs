//! Partitioned quantum Neyman-Pearson tests with majority voting.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::backend::QuantumState;
use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{eigh_hermitian, frobenius_norm, CMatrix, C64};
use crate::partition::Partition;

/// Largest `k · n_ent` for which the per-group test is built densely.
pub const MAX_TEST_QUBITS: usize = 12;

/// Eigenvalues below `ZERO_TOL · ‖Δ‖` count as zero and are labeled 1.
pub const ZERO_TOL: f64 = 1e-12;

/// Per-group two-outcome measurement from the spectrum of `Δ_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct NpGroupTest {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors in the columns.
    pub eigenvectors: CMatrix,
    /// `labels[l] = 0` iff eigenvalue `l` is strictly positive.
    pub labels: Vec<u8>,
}

impl NpGroupTest {
    pub fn from_difference(delta: &CMatrix) -> Result<Self> {
        let (vals, vecs) = eigh_hermitian(&delta.view())?;
        let scale = frobenius_norm(&delta.view());
        let labels = vals.iter().map(|&v| if v > ZERO_TOL * scale && v > 0.0 { 0 } else { 1 }).collect();
        Ok(Self { eigenvalues: vals.to_vec(), eigenvectors: vecs, labels })
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// `S^(x)`: projector onto the eigenvectors labeled `x`.
    pub fn projector(&self, x: u8) -> CMatrix {
        let d = self.dim();
        let mut p = CMatrix::zeros((d, d));
        for (l, &lab) in self.labels.iter().enumerate() {
            if lab != x {
                continue;
            }
            let v = self.eigenvectors.column(l);
            for i in 0..d {
                for j in 0..d {
                    p[[i, j]] += v[i] * v[j].conj();
                }
            }
        }
        p
    }

    pub fn rank0(&self) -> usize {
        self.labels.iter().filter(|&&x| x == 0).count()
    }

    /// `Tr(S^(0) ρ)` for a matrix of matching dimension.
    pub fn outcome0_probability(&self, rho: &CMatrix) -> Result<f64> {
        if rho.dim() != (self.dim(), self.dim()) {
            return Err(Error::Dimension(format!("{:?} state for a {}-dimensional test", rho.dim(), self.dim())));
        }
        let mut p = 0.0;
        for (l, &lab) in self.labels.iter().enumerate() {
            if lab == 0 {
                let v = self.eigenvectors.column(l);
                let rv = rho.dot(&v);
                p += v.iter().zip(rv.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            }
        }
        Ok(p.clamp(0.0, 1.0))
    }
}

/// Weighted phase averages `ρ̂_j` (label 0) and `σ̂_j` (label 1) per group.
#[derive(Clone, Debug)]
pub struct TrainingAverages {
    pub rho: Vec<DensityMatrix>,
    pub sigma: Vec<DensityMatrix>,
    pub n_train: usize,
    pub weights: Vec<f64>,
}

/// Averages per-state group RDMs by label. `weights` default to uniform within each label.
pub fn average_by_label(rdms: &[Vec<DensityMatrix>], labels: &[u8], weights: Option<&[f64]>) -> Result<TrainingAverages> {
    if rdms.len() != labels.len() {
        return Err(Error::Dimension("one label per training state required".into()));
    }
    let n0 = labels.iter().filter(|&&y| y == 0).count();
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    if n0 == 0 || n1 == 0 || n0 + n1 != labels.len() {
        return Err(Error::DegenerateTrainingSet(format!("{n0} label-0 and {n1} label-1 states")));
    }
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != labels.len() || w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidConfig("weights must be nonnegative, one per state".into()));
            }
            for y in [0u8, 1] {
                let s: f64 = w.iter().zip(labels).filter(|(_, &l)| l == y).map(|(x, _)| x).sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!("label-{y} weights sum to {s}")));
                }
            }
            w.to_vec()
        }
        None => labels.iter().map(|&y| if y == 0 { 1.0 / n0 as f64 } else { 1.0 / n1 as f64 }).collect(),
    };
    let m = rdms[0].len();
    if rdms.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("every training state needs the same groups".into()));
    }
    let mut rho = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    for j in 0..m {
        for (y, out) in [(0u8, &mut rho), (1u8, &mut sigma)] {
            let items: Vec<(&DensityMatrix, f64)> =
                rdms.iter().zip(labels).zip(&weights).filter(|((_, &l), _)| l == y).map(|((r, _), &w)| (&r[j], w)).collect();
            out.push(DensityMatrix::weighted_sum(&items)?);
        }
    }
    Ok(TrainingAverages { rho, sigma, n_train: labels.len(), weights })
}

/// Metadata carried with a trained classifier.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub t_state: Option<usize>,
    pub seed: Option<u64>,
    pub n_train: usize,
    pub weights: Vec<f64>,
    pub noise_p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedNpClassifier {
    pub partition: Partition,
    pub tests: Vec<NpGroupTest>,
    pub a: f64,
    pub n_ent: usize,
    pub provenance: Provenance,
}

/// Builds the per-group tests `Δ_j = ρ̂_j^{⊗n} − e^{n a} σ̂_j^{⊗n}` with `n = n_ent`.
pub fn train_from_averages(avg: &TrainingAverages, partition: &Partition, a: f64, n_ent: usize) -> Result<PartitionedNpClassifier> {
    if n_ent == 0 {
        return Err(Error::InvalidCopyCount("n_ent must be at least 1".into()));
    }
    if avg.rho.len() != partition.len() {
        return Err(Error::Dimension("averages and partition disagree on the group count".into()));
    }
    let k = avg.rho.iter().map(DensityMatrix::n_qubits).max().unwrap_or(0);
    if k * n_ent > MAX_TEST_QUBITS {
        return Err(Error::UnsupportedCopyCount(format!("k·n_ent = {} exceeds {MAX_TEST_QUBITS}", k * n_ent)));
    }
    let w = C64::new((n_ent as f64 * a).exp(), 0.0);
    let tests = avg
        .rho
        .iter()
        .zip(&avg.sigma)
        .map(|(r, s)| {
            let rp = if n_ent == 1 { r.matrix().clone() } else { r.tensor_power(n_ent).into_matrix() };
            let sp = if n_ent == 1 { s.matrix().clone() } else { s.tensor_power(n_ent).into_matrix() };
            NpGroupTest::from_difference(&(rp - sp.mapv(|z| z * w)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PartitionedNpClassifier {
        partition: partition.clone(),
        tests,
        a,
        n_ent,
        provenance: Provenance { n_train: avg.n_train, weights: avg.weights.clone(), ..Default::default() },
    })
}

pub fn train_classifier(
    rdms: &[Vec<DensityMatrix>],
    labels: &[u8],
    weights: Option<&[f64]>,
    partition: &Partition,
    a: f64,
    n_ent: usize,
) -> Result<PartitionedNpClassifier> {
    let avg = average_by_label(rdms, labels, weights)?;
    train_from_averages(&avg, partition, a, n_ent)
}

/// Probability of the majority-vote decision 0 for one test state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub p0: f64,
    /// Set when cross-group correlations were ignored (`n_ent > 1`).
    pub approximate: bool,
}

/// `P(Σ_j x_j < M/2)` from the distribution of the label-1 count.
pub fn majority_zero_probability(dist: &[f64]) -> f64 {
    let m = dist.len() - 1;
    dist.iter().enumerate().filter(|(c, _)| 2 * c < m).map(|(_, p)| p).sum::<f64>().clamp(0.0, 1.0)
}

/// Distribution of the number of successes of independent Bernoullis.
pub fn poisson_binomial(p_one: &[f64]) -> Vec<f64> {
    let mut dist = vec![1.0];
    for &p in p_one {
        let mut next = vec![0.0; dist.len() + 1];
        for (c, &q) in dist.iter().enumerate() {
            next[c] += q * (1.0 - p);
            next[c + 1] += q * p;
        }
        dist = next;
    }
    dist
}

impl PartitionedNpClassifier {
    pub fn n_groups(&self) -> usize {
        self.tests.len()
    }

    /// Per-group `Tr(S_j^(0) ρ_j^{⊗n_ent})`.
    pub fn group_outcome_probabilities(&self, rdms: &[DensityMatrix]) -> Result<Vec<f64>> {
        if rdms.len() != self.tests.len() {
            return Err(Error::Dimension("one RDM per group required".into()));
        }
        self.tests
            .iter()
            .zip(rdms)
            .map(|(t, r)| {
                let m = if self.n_ent == 1 { r.matrix().clone() } else { r.tensor_power(self.n_ent).into_matrix() };
                t.outcome0_probability(&m)
            })
            .collect()
    }

    /// Majority-vote outcome on one copy block. With `n_ent = 1` this is exact,
    /// including correlations between groups; otherwise groups are treated as independent.
    pub fn classify_probability(&self, state: &QuantumState) -> Result<Classification> {
        if state.n_qubits() != self.partition.n_qubits() {
            return Err(Error::Dimension("state and classifier sizes differ".into()));
        }
        if self.n_ent == 1 {
            let bases: Vec<CMatrix> = self.tests.iter().map(|t| t.eigenvectors.clone()).collect();
            let labelers: Vec<Vec<u8>> = self.tests.iter().map(|t| t.labels.clone()).collect();
            let dist = state.grouped_label_distribution_in_bases(&self.partition, &bases, &labelers)?;
            Ok(Classification { p0: majority_zero_probability(&dist), approximate: false })
        } else {
            let rdms = state.rdms(&self.partition)?;
            let q = self.group_outcome_probabilities(&rdms)?;
            let p_one: Vec<f64> = q.iter().map(|x| 1.0 - x).collect();
            Ok(Classification { p0: majority_zero_probability(&poisson_binomial(&p_one)), approximate: true })
        }
    }

    /// `Tr(Π_maj) / dim` on one copy block: the majority-zero probability of
    /// independent groups with success rates `rank(S_j^(0)) / dim_j`.
    pub fn majority_trace_fraction(&self) -> f64 {
        let p_one: Vec<f64> = self.tests.iter().map(|t| 1.0 - t.rank0() as f64 / t.dim() as f64).collect();
        majority_zero_probability(&poisson_binomial(&p_one))
    }

    pub fn to_file(&self) -> ClassifierFile {
        ClassifierFile {
            format: CLASSIFIER_FORMAT.into(),
            version: CLASSIFIER_VERSION,
            a: self.a,
            n_ent: self.n_ent,
            partition: self.partition.clone(),
            provenance: self.provenance.clone(),
            groups: self
                .tests
                .iter()
                .map(|t| GroupTestFile {
                    eigenvalues: t.eigenvalues.clone(),
                    dim: t.dim(),
                    eigenvectors: t.eigenvectors.iter().map(|z| [z.re, z.im]).collect(),
                    labels: t.labels.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(f: &ClassifierFile) -> Result<Self> {
        if f.format != CLASSIFIER_FORMAT || f.version != CLASSIFIER_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported classifier file {} v{}", f.format, f.version)));
        }
        if f.groups.len() != f.partition.len() {
            return Err(Error::Dimension("classifier group count differs from its partition".into()));
        }
        let tests = f
            .groups
            .iter()
            .map(|g| {
                if g.eigenvalues.len() != g.dim || g.labels.len() != g.dim || g.eigenvectors.len() != g.dim * g.dim {
                    return Err(Error::Dimension("malformed group test".into()));
                }
                let v = Array2::from_shape_vec((g.dim, g.dim), g.eigenvectors.iter().map(|p| C64::new(p[0], p[1])).collect())
                    .map_err(|e| Error::Dimension(e.to_string()))?;
                crate::linalg::check_unitary(&v.view(), 1e-8)?;
                Ok(NpGroupTest { eigenvalues: g.eigenvalues.clone(), eigenvectors: v, labels: g.labels.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { partition: f.partition.clone(), tests, a: f.a, n_ent: f.n_ent, provenance: f.provenance.clone() })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), &self.to_file())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f: ClassifierFile = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        Self::from_file(&f)
    }
}

pub const CLASSIFIER_FORMAT: &str = "qphase-np-classifier";
pub const CLASSIFIER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTestFile {
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
    /// Row-major `[re, im]` pairs; column `l` is the eigenvector of `eigenvalues[l]`.
    pub eigenvectors: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFile {
    pub format: String,
    pub version: u32,
    pub a: f64,
    pub n_ent: usize,
    pub partition: Partition,
    pub provenance: Provenance,
    pub groups: Vec<GroupTestFile>,
}

/// Type-I/II errors over a test set at one `(a, n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub a: f64,
    pub n: usize,
    /// `α_n^(i)` for every label-0 test state, in test order.
    pub alpha_states: Vec<f64>,
    /// `β_n^(i)` for every label-1 test state, in test order.
    pub beta_states: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl ErrorPoint {
    pub fn mean_error(&self) -> f64 {
        0.5 * (self.alpha + self.beta)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Errors with `n` copies used in blocks of `n_ent`, from the single-block
/// decision-0 probabilities `p0` of labeled test states.
pub fn error_probabilities(a: f64, p0: &[f64], labels: &[u8], n: usize, n_ent: usize) -> Result<ErrorPoint> {
    if p0.len() != labels.len() {
        return Err(Error::Dimension("one label per test state required".into()));
    }
    if n_ent == 0 || n == 0 || n % n_ent != 0 {
        return Err(Error::InvalidCopyCount(format!("n = {n} is not a positive multiple of n_ent = {n_ent}")));
    }
    let blocks = (n / n_ent) as i32;
    let mut alpha_states = Vec::new();
    let mut beta_states = Vec::new();
    for (&p, &y) in p0.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        match y {
            0 => alpha_states.push(1.0 - p.powi(blocks)),
            1 => beta_states.push(p.powi(blocks)),
            _ => return Err(Error::InvalidConfig(format!("label {y}"))),
        }
    }
    let (alpha, beta) = (mean(&alpha_states), mean(&beta_states));
    Ok(ErrorPoint { a, n, alpha_states, beta_states, alpha, beta })
}

/// Errors of one block under global depolarizing noise of strength `p` on the test states.
pub fn noisy_error_probabilities(clean: &ErrorPoint, trace_fraction: f64, p: f64) -> Result<ErrorPoint> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let f = |x: f64, floor: f64| (1.0 - p) * x + p * floor;
    let alpha_states: Vec<f64> = clean.alpha_states.iter().map(|&x| f(x, 1.0 - trace_fraction)).collect();
    let beta_states: Vec<f64> = clean.beta_states.iter().map(|&x| f(x, trace_fraction)).collect();
    Ok(ErrorPoint {
        a: clean.a,
        n: clean.n,
        alpha: f(clean.alpha, 1.0 - trace_fraction),
        beta: f(clean.beta, trace_fraction),
        alpha_states,
        beta_states,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunedPoint {
    pub index: usize,
    pub a: f64,
    pub alpha: f64,
    pub beta: f64,
    pub qualifies: bool,
}

/// Among points with `α ≤ alpha_cap` the one with least `β`; otherwise the least-`α` point.
pub fn tune_a(points: &[ErrorPoint], alpha_cap: f64) -> Option<TunedPoint> {
    let best = |qualify: bool| {
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| !qualify || p.alpha <= alpha_cap)
            .min_by(|(_, x), (_, y)| {
                if qualify {
                    x.beta.total_cmp(&y.beta).then(x.alpha.total_cmp(&y.alpha))
                } else {
                    x.alpha.total_cmp(&y.alpha).then(x.beta.total_cmp(&y.beta))
                }
            })
            .map(|(i, p)| TunedPoint { index: i, a: p.a, alpha: p.alpha, beta: p.beta, qualifies: qualify })
    };
    best(true).or_else(|| best(false))
}

/// `count` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// The default grid of 20 values of `a` on `[−1, 1]`.
pub fn default_a_grid() -> Vec<f64> {
    linspace(-1.0, 1.0, 20)
}

/// `Σ_{r ∈ Z^d, r ≠ 0} q^{|r|_1}` by counting lattice shells up to `r_max`.
pub fn lattice_shell_sum(d: usize, q: f64, r_max: usize) -> f64 {
    // shells[r] = number of points of Z^d with |r|_1 = r, built one dimension at a time.
    let mut shells = vec![0u128; r_max + 1];
    shells[0] = 1;
    for _ in 0..d {
        let mut next = vec![0u128; r_max + 1];
        for (r, &c) in shells.iter().enumerate() {
            if c == 0 {
                continue;
            }
            next[r] += c;
            for step in 1..=r_max - r {
                next[r + step] += 2 * c;
            }
        }
        shells = next;
    }
    shells.iter().enumerate().skip(1).map(|(r, &c)| c as f64 * q.powi(r as i32)).sum()
}

/// Closed-form bound on `Var(Ȳ)` for `M` Bernoulli variables of variance
/// `sigma2` with `|Cov(Y_i, Y_j)| ≤ C e^{−|r_i − r_j|_1 / ξ}` on `Z^d`.
pub fn majority_variance_bound(c: f64, xi: f64, d: usize, m: usize, sigma2: f64) -> f64 {
    let q = (-1.0 / xi).exp();
    let ratio = c / sigma2;
    (sigma2 / m as f64) * (1.0 + ratio * ((1.0 + q) / (1.0 - q)).powi(d as i32) - ratio)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub simulated: f64,
    /// Standard error of `simulated`.
    pub std_error: f64,
    pub bound: f64,
}

/// Lattice sites of the first `m` points of a `d`-dimensional cube, row-major.
fn lattice_points(m: usize, d: usize) -> Vec<Vec<i64>> {
    let side = (1..).find(|s: &usize| s.pow(d as u32) >= m).unwrap();
    (0..m)
        .map(|mut i| {
            let mut p = vec![0i64; d];
            for c in p.iter_mut() {
                *c = (i % side) as i64;
                i /= side;
            }
            p
        })
        .collect()
}

/// Simulates `Var(Ȳ)` for correlated Bernoullis built by thresholding a Gaussian
/// field with correlation `s·e^{−|r|_1/ξ}`, `s = min(1, C/σ²)`. Thresholding never
/// increases a positive covariance beyond `σ²·s·e^{−|r|_1/ξ} ≤ C e^{−|r|_1/ξ}`.
pub fn majority_variance_check<R: Rng + ?Sized>(
    c: f64,
    xi: f64,
    d: usize,
    m: usize,
    sigma2: f64,
    trials: usize,
    rng: &mut R,
) -> Result<VarianceCheck> {
    if !(xi > 0.0) || !(1..=3).contains(&d) || m == 0 || !(sigma2 > 0.0 && sigma2 <= 0.25) || c < 0.0 || trials < 2 {
        return Err(Error::InvalidConfig("variance check needs ξ > 0, d ∈ {1,2,3}, M ≥ 1, 0 < σ² ≤ 1/4".into()));
    }
    let p = 0.5 * (1.0 - (1.0 - 4.0 * sigma2).max(0.0).sqrt());
    let threshold = Normal::new(0.0, 1.0).map_err(|e| Error::NumericalFailure(e.to_string()))?.inverse_cdf(p);
    let s = (c / sigma2).min(1.0);
    let pts = lattice_points(m, d);
    let mut corr = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let r: i64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).abs()).sum();
            corr[[i, j]] = if i == j { 1.0 } else { s * (-(r as f64) / xi).exp() };
        }
    }
    let chol = cholesky_lower(&corr)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut g = vec![0.0; m];
    let mut means = Vec::with_capacity(trials);
    for _ in 0..trials {
        for x in g.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let mut ones = 0usize;
        for i in 0..m {
            let z: f64 = (0..=i).map(|j| chol[[i, j]] * g[j]).sum();
            if z < threshold {
                ones += 1;
            }
        }
        let ybar = ones as f64 / m as f64;
        sum += ybar;
        sum_sq += ybar * ybar;
        means.push(ybar);
    }
    let n = trials as f64;
    let mu = sum / n;
    let var = (sum_sq - n * mu * mu) / (n - 1.0);
    let m4 = means.iter().map(|y| (y - mu).powi(4)).sum::<f64>() / n;
    let std_error = ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    Ok(VarianceCheck { simulated: var, std_error, bound: majority_variance_bound(c, xi, d, m, sigma2) })
}

fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    use ndarray_linalg::{Cholesky, UPLO};
    Ok(a.cholesky(UPLO::Lower)?)
}
