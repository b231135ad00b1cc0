//! Dense statevector backend.

use ndarray::{Array1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::lanczos::{lowest_eigenpair, LanczosOptions};
use crate::linalg::{check_unitary, eigh_hermitian, random_state_vector, CMatrix, C64, ONE, ZERO};
use crate::partition::Partition;
use crate::pauli::{apply_masked, PauliString, PauliSum};
use crate::rng::RngStream;

pub const DEFAULT_STATEVECTOR_CAP: usize = 20;

/// Pure state on `n` qubits; amplitude index has qubit 0 as the top bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    n: usize,
    amps: Vec<C64>,
}

/// Positions of a qubit group inside a basis index.
#[derive(Clone, Debug)]
pub(crate) struct GroupIndexer {
    /// `offsets[g]` is the basis-index pattern of local index `g`.
    offsets: Vec<usize>,
    mask: usize,
    /// Set when the group is contiguous and ascending: local = (b >> shift) & (2^k − 1).
    shift: Option<u32>,
    bits: Vec<u32>,
}

impl GroupIndexer {
    pub fn new(n: usize, group: &[usize]) -> Result<Self> {
        let k = group.len();
        let mut seen = vec![false; n];
        for &q in group {
            if q >= n || seen[q] {
                return Err(Error::InvalidGroup(format!("group {group:?} on {n} qubits")));
            }
            seen[q] = true;
        }
        let bits: Vec<u32> = group.iter().map(|&q| (n - 1 - q) as u32).collect();
        let mask = bits.iter().fold(0usize, |m, &b| m | (1 << b));
        let offsets = (0..1usize << k)
            .map(|g| {
                let mut o = 0usize;
                for (t, &b) in bits.iter().enumerate() {
                    if (g >> (k - 1 - t)) & 1 == 1 {
                        o |= 1 << b;
                    }
                }
                o
            })
            .collect();
        let contiguous = group.windows(2).all(|w| w[1] == w[0] + 1);
        let shift = (contiguous && k > 0).then(|| bits[k - 1]);
        Ok(Self { offsets, mask, shift, bits })
    }

    #[inline]
    pub fn local(&self, b: usize) -> usize {
        match self.shift {
            Some(s) => (b >> s) & (self.offsets.len() - 1),
            None => {
                let k = self.bits.len();
                let mut g = 0;
                for (t, &bit) in self.bits.iter().enumerate() {
                    g |= ((b >> bit) & 1) << (k - 1 - t);
                }
                g
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.offsets.len()
    }

    /// Basis indices with every group bit cleared.
    pub fn bases(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..1usize << n).filter(move |b| b & self.mask == 0)
    }
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        let dim = amps.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::Dimension(format!("amplitude vector of length {dim}")));
        }
        let norm2: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > 1e-10 {
            return Err(Error::NumericalFailure(format!("state norm² {norm2}")));
        }
        Ok(Self { n: dim.trailing_zeros() as usize, amps })
    }

    /// Rescales to unit norm first.
    pub fn normalized(mut amps: Vec<C64>) -> Result<Self> {
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NumericalFailure("cannot normalize a zero vector".into()));
        }
        for a in amps.iter_mut() {
            *a /= norm;
        }
        Self::new(amps)
    }

    pub fn basis_state(n: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        amps[index] = ONE;
        Self { n, amps }
    }

    /// Tensor product of single-qubit states, qubit 0 first.
    pub fn product(qubits: &[[C64; 2]]) -> Result<Self> {
        let mut amps = vec![ONE];
        for q in qubits {
            let mut next = Vec::with_capacity(amps.len() * 2);
            for a in &amps {
                next.push(a * q[0]);
                next.push(a * q[1]);
            }
            amps = next;
        }
        Self::normalized(amps)
    }

    pub fn plus(n: usize) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::product(&vec![[C64::new(h, 0.0), C64::new(h, 0.0)]; n]).unwrap()
    }

    pub fn minus(n: usize) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::product(&vec![[C64::new(h, 0.0), C64::new(-h, 0.0)]; n]).unwrap()
    }

    pub fn ghz(n: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        amps[0] = C64::new(h, 0.0);
        amps[(1 << n) - 1] = C64::new(h, 0.0);
        Self { n, amps }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self { n, amps: random_state_vector(1 << n, rng).to_vec() }
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn to_array(&self) -> Array1<C64> {
        Array1::from(self.amps.clone())
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `H|ψ⟩` without normalization.
    pub fn apply_pauli_sum(&self, h: &PauliSum) -> Result<Vec<C64>> {
        if h.n_qubits() != self.n {
            return Err(Error::Dimension(format!("operator on {} qubits, state on {}", h.n_qubits(), self.n)));
        }
        let terms = h.masked_terms();
        let mut out = vec![ZERO; self.amps.len()];
        apply_masked(&terms, &self.amps, &mut out);
        Ok(out)
    }

    pub fn expectation(&self, obs: &PauliSum) -> Result<f64> {
        obs.validate()?;
        let h = self.apply_pauli_sum(obs)?;
        let v: C64 = self.amps.iter().zip(&h).map(|(a, b)| a.conj() * b).sum();
        if v.im.abs() > 1e-8 {
            return Err(Error::NonHermitianObservable(v.im));
        }
        Ok(v.re)
    }

    pub fn expectation_string(&self, p: &PauliString) -> Result<f64> {
        self.expectation(&PauliSum::new(p.n_qubits(), vec![p.clone()])?)
    }

    /// Partial trace onto `group`; the first listed qubit is the top bit of the result.
    pub fn reduced_density_matrix(&self, group: &[usize]) -> Result<DensityMatrix> {
        let idx = GroupIndexer::new(self.n, group)?;
        let d = idx.dim();
        let mut rho = CMatrix::zeros((d, d));
        let mut v = vec![ZERO; d];
        for base in idx.bases(self.n) {
            for g in 0..d {
                v[g] = self.amps[base | idx.offsets[g]];
            }
            for i in 0..d {
                if v[i] == ZERO {
                    continue;
                }
                for j in 0..d {
                    rho[[i, j]] += v[i] * v[j].conj();
                }
            }
        }
        DensityMatrix::new(rho, 1e-10)
    }

    pub fn apply_group_unitary(&self, u: &ArrayView2<C64>, group: &[usize]) -> Result<Self> {
        check_unitary(u, 1e-10)?;
        let mut out = self.clone();
        out.apply_group_unitary_unchecked(u, group)?;
        Ok(out)
    }

    pub(crate) fn apply_group_unitary_unchecked(&mut self, u: &ArrayView2<C64>, group: &[usize]) -> Result<()> {
        let idx = GroupIndexer::new(self.n, group)?;
        let d = idx.dim();
        if u.dim() != (d, d) {
            return Err(Error::Dimension(format!("{:?} unitary on a {}-qubit group", u.dim(), group.len())));
        }
        let mut v = vec![ZERO; d];
        for base in idx.bases(self.n) {
            for g in 0..d {
                v[g] = self.amps[base | idx.offsets[g]];
            }
            for i in 0..d {
                let mut acc = ZERO;
                for j in 0..d {
                    acc += u[[i, j]] * v[j];
                }
                self.amps[base | idx.offsets[i]] = acc;
            }
        }
        Ok(())
    }

    /// Distribution of the number of groups whose local outcome is labeled 1,
    /// by enumerating every basis state.
    pub fn grouped_label_distribution(&self, partition: &Partition, labelers: &[Vec<u8>]) -> Result<Vec<f64>> {
        if partition.n_qubits() != self.n {
            return Err(Error::Dimension(format!(
                "partition over {} qubits, state on {}",
                partition.n_qubits(),
                self.n
            )));
        }
        if labelers.len() != partition.len() {
            return Err(Error::Dimension("one labeler per group required".into()));
        }
        let idxs = partition
            .groups()
            .iter()
            .map(|g| GroupIndexer::new(self.n, g))
            .collect::<Result<Vec<_>>>()?;
        for (idx, lab) in idxs.iter().zip(labelers) {
            if lab.len() != idx.dim() {
                return Err(Error::Dimension("labeler must cover every group outcome".into()));
            }
        }
        let mut dist = vec![0.0; partition.len() + 1];
        for (b, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let m: usize = idxs.iter().zip(labelers).map(|(idx, lab)| lab[idx.local(b)] as usize).sum();
            dist[m] += p;
        }
        let total: f64 = dist.iter().sum();
        for d in dist.iter_mut() {
            *d /= total;
        }
        Ok(dist)
    }

    /// Probability of each Hamming weight `0..=n` of a computational-basis measurement.
    pub fn hamming_weight_distribution(&self) -> Vec<f64> {
        let mut dist = vec![0.0; self.n + 1];
        for (b, a) in self.amps.iter().enumerate() {
            dist[b.count_ones() as usize] += a.norm_sqr();
        }
        dist
    }

    /// Computational-basis samples as basis indices.
    pub fn sample<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Vec<usize> {
        let mut cdf = Vec::with_capacity(self.amps.len());
        let mut acc = 0.0;
        for a in &self.amps {
            acc += a.norm_sqr();
            cdf.push(acc);
        }
        (0..shots)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                cdf.partition_point(|&c| c <= u).min(self.amps.len() - 1)
            })
            .collect()
    }

    /// Local index of `group` inside basis index `b`.
    pub fn group_outcome(&self, b: usize, group: &[usize]) -> Result<usize> {
        Ok(GroupIndexer::new(self.n, group)?.local(b))
    }
}

#[derive(Clone, Debug)]
pub struct GroundStateOptions {
    pub lanczos: LanczosOptions,
    pub cap: usize,
    pub residual_tol: f64,
    pub seed: u64,
}

impl Default for GroundStateOptions {
    fn default() -> Self {
        Self {
            lanczos: LanczosOptions { tol: 1e-9, ..LanczosOptions::default() },
            cap: DEFAULT_STATEVECTOR_CAP,
            residual_tol: 1e-8,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub state: StateVector,
    pub energy: f64,
    pub residual: f64,
}

fn flip_project<T>(v: &mut [T], sign: f64)
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let full = v.len() - 1;
    let half = v.len() / 2;
    for b in 0..half {
        let c = b ^ full;
        let (x, y) = (v[b], v[c]);
        let s = (x + y * sign) * 0.5;
        v[b] = s;
        v[c] = s * sign;
    }
}

/// Keeps the Krylov basis within roughly 1 GiB.
fn krylov_budget(dim: usize, scalar_bytes: usize, requested: usize) -> usize {
    let per_vec = dim * scalar_bytes;
    let budget = 1usize << 30;
    requested.min((budget / per_vec).max(20))
}

fn lanczos_real(h: &PauliSum, sector: Option<f64>, opts: &GroundStateOptions) -> Result<(f64, Vec<f64>, f64)> {
    let terms = h.masked_terms();
    let dim = 1usize << h.n_qubits();
    let mut rng = RngStream::new(opts.seed).child("lanczos-start").rng();
    let mut start: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    if let Some(s) = sector {
        flip_project(&mut start, s);
    }
    let mv = |x: &[f64], y: &mut [f64]| {
        apply_masked(&terms, x, y);
        if let Some(s) = sector {
            flip_project(y, s);
        }
    };
    let mut lopts = opts.lanczos.clone();
    lopts.max_krylov = krylov_budget(dim, 8, lopts.max_krylov);
    let e = lowest_eigenpair(mv, start, &lopts)?;
    Ok((e.value, e.vector, e.residual))
}

fn lanczos_complex(h: &PauliSum, sector: Option<f64>, opts: &GroundStateOptions) -> Result<(f64, Vec<C64>, f64)> {
    let terms = h.masked_terms();
    let dim = 1usize << h.n_qubits();
    let mut rng = RngStream::new(opts.seed).child("lanczos-start").rng();
    let mut start: Vec<C64> = (0..dim).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    if let Some(s) = sector {
        flip_project(&mut start, s);
    }
    let mv = |x: &[C64], y: &mut [C64]| {
        apply_masked(&terms, x, y);
        if let Some(s) = sector {
            flip_project(y, s);
        }
    };
    let mut lopts = opts.lanczos.clone();
    lopts.max_krylov = krylov_budget(dim, 16, lopts.max_krylov);
    let e = lowest_eigenpair(mv, start, &lopts)?;
    Ok((e.value, e.vector, e.residual))
}

fn dense_ground_state(h: &PauliSum) -> Result<(f64, Vec<C64>)> {
    let m = h.dense();
    let (vals, vecs) = eigh_hermitian(&m.view())?;
    Ok((vals[0], vecs.column(0).to_vec()))
}

/// Lowest eigenvector of `h` by Lanczos.
///
/// When `h` commutes with the global spin flip, both flip sectors are solved
/// separately and the lower one returned (the even sector on exact ties), so
/// nearly degenerate symmetry-broken pairs still give a deterministic state.
pub fn ground_state(h: &PauliSum, opts: &GroundStateOptions) -> Result<GroundState> {
    h.validate()?;
    let n = h.n_qubits();
    if n > opts.cap {
        return Err(Error::UnsupportedSize(format!("{n} qubits exceeds the statevector cap {}", opts.cap)));
    }
    let sectors: Vec<Option<f64>> = if h.commutes_with_x_parity() && n >= 2 {
        vec![Some(1.0), Some(-1.0)]
    } else {
        vec![None]
    };
    let mut best: Option<(f64, Vec<C64>, f64)> = None;
    let mut failure = None;
    for sector in sectors {
        let attempt = if h.is_real() {
            lanczos_real(h, sector, opts).map(|(e, v, r)| (e, v.into_iter().map(|x| C64::new(x, 0.0)).collect(), r))
        } else {
            lanczos_complex(h, sector, opts)
        };
        match attempt {
            Ok(cand) => {
                if best.as_ref().is_none_or(|b| cand.0 < b.0 - 1e-12) {
                    best = Some(cand);
                }
            }
            Err(e) => failure = Some(e),
        }
    }
    let (energy, vec, residual) = match (best, failure) {
        (Some(b), None) => b,
        (_, Some(err)) => {
            if n <= 10 {
                let (e, v) = dense_ground_state(h)?;
                (e, v, 0.0)
            } else {
                return Err(err);
            }
        }
        (None, None) => unreachable!("at least one sector is always attempted"),
    };
    let state = StateVector::normalized(vec)?;
    let hpsi = state.apply_pauli_sum(h)?;
    let res = hpsi
        .iter()
        .zip(state.amplitudes())
        .map(|(a, b)| (a - b * energy).norm_sqr())
        .sum::<f64>()
        .sqrt();
    if res > opts.residual_tol {
        return Err(Error::ConvergenceFailure { iterations: 0, residual: res.max(residual) });
    }
    Ok(GroundState { state, energy, residual: res })
}
