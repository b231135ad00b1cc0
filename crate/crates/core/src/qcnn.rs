//! Quantum convolutional networks: the two exact (training-free) circuits, a
//! trainable ansatz with Gell-Mann parameterized gates, and SPSA training.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_unitary, expm_i_hermitian, identity, CMatrix, C64, ONE};
use crate::pauli::{Pauli, PauliString};
use crate::statevector::StateVector;

/// A unitary acting on `targets`, the first target being the top bit.
#[derive(Clone, Debug)]
pub struct Gate {
    pub unitary: CMatrix,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Circuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
    pub measurement: PauliString,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self { n_qubits, gates: Vec::new(), measurement: PauliString::identity(n_qubits) }
    }

    pub fn push(&mut self, unitary: CMatrix, targets: Vec<usize>) -> Result<()> {
        if targets.is_empty() || targets.len() > 3 || targets.iter().any(|&q| q >= self.n_qubits) {
            return Err(Error::InvalidGeometry(format!("gate on {targets:?} in a {}-qubit register", self.n_qubits)));
        }
        if unitary.dim() != (1 << targets.len(), 1 << targets.len()) {
            return Err(Error::Dimension(format!("{:?} gate on {} qubits", unitary.dim(), targets.len())));
        }
        check_unitary(&unitary.view(), 1e-10)?;
        self.gates.push(Gate { unitary, targets });
        Ok(())
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::Dimension(format!("{}-qubit circuit, {}-qubit state", self.n_qubits, state.n_qubits())));
        }
        let mut out = state.clone();
        for g in &self.gates {
            out.apply_group_unitary_unchecked(&g.unitary.view(), &g.targets)?;
        }
        Ok(out)
    }

    /// Expectation of the measured Pauli string on the circuit output.
    pub fn output(&self, state: &StateVector) -> Result<f64> {
        self.apply(state)?.expectation_string(&self.measurement)
    }
}

fn permutation_gate(k: usize, map: impl Fn(usize) -> usize) -> CMatrix {
    let d = 1 << k;
    let mut u = CMatrix::zeros((d, d));
    for b in 0..d {
        u[[map(b), b]] = ONE;
    }
    u
}

/// Controlled-X with the control as the first qubit.
pub fn cnot() -> CMatrix {
    permutation_gate(2, |b| if b & 2 != 0 { b ^ 1 } else { b })
}

/// Toffoli with controls on the first two qubits.
pub fn toffoli() -> CMatrix {
    controlled_flip(true, true)
}

/// Flips the third qubit when the first two read `(c1, c2)` as (1, 1) after
/// optional negation: `controlled_flip(true, false)` fires on `|1 0⟩`.
pub fn controlled_flip(c1_on_one: bool, c2_on_one: bool) -> CMatrix {
    permutation_gate(3, move |b| {
        let c1 = (b >> 2) & 1 == 1;
        let c2 = (b >> 1) & 1 == 1;
        if c1 == c1_on_one && c2 == c2_on_one {
            b ^ 1
        } else {
            b
        }
    })
}

pub fn cz() -> CMatrix {
    let mut u = identity(4);
    u[[3, 3]] = -ONE;
    u
}

pub fn hadamard() -> CMatrix {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    ndarray::array![[h, h], [h, -h]]
}

/// Active qubits after each halving layer of the ferromagnetic circuit; entry 0
/// is the full register. Odd positions are kept.
pub fn fm_geometry(l: usize, depth: usize) -> Result<Vec<Vec<usize>>> {
    let mut layers = vec![(0..l).collect::<Vec<_>>()];
    for _ in 0..depth {
        let prev = layers.last().unwrap();
        layers.push(prev.iter().skip(1).step_by(2).copied().collect());
    }
    if layers.last().unwrap().len() < 2 {
        return Err(Error::InvalidGeometry(format!("L = {l} leaves fewer than two qubits after {depth} halvings")));
    }
    Ok(layers)
}

/// Largest depth that leaves at least two qubits.
pub fn fm_max_depth(l: usize) -> usize {
    let (mut m, mut d) = (l, 0);
    while m / 2 >= 2 {
        m /= 2;
        d += 1;
    }
    d
}

/// The ferromagnetic exact QCNN: per layer, CNOTs from each kept qubit to its
/// right neighbour, Toffolis targeting kept qubits from both neighbours, and
/// controlled-Z pooling from discarded onto kept qubits; then Z⊗Z on the first
/// and last survivors.
pub fn exact_qcnn_fm_circuit(l: usize, depth: usize) -> Result<Circuit> {
    let layers = fm_geometry(l, depth)?;
    let mut c = Circuit::new(l);
    for a in &layers[..depth] {
        let m = a.len();
        for p in (1..m).step_by(2) {
            if p + 1 < m {
                c.push(cnot(), vec![a[p], a[p + 1]])?;
            }
        }
        for p in (1..m).step_by(2) {
            if p + 1 < m {
                c.push(toffoli(), vec![a[p - 1], a[p + 1], a[p]])?;
            }
        }
        for p in (1..m).step_by(2) {
            c.push(cz(), vec![a[p - 1], a[p]])?;
        }
    }
    let last = layers.last().unwrap();
    c.measurement = PauliString::from_sites(l, 1.0, &[(last[0], Pauli::Z), (*last.last().unwrap(), Pauli::Z)])?;
    Ok(c)
}

pub fn exact_qcnn_fm_output(state: &StateVector, depth: usize) -> Result<f64> {
    exact_qcnn_fm_circuit(state.n_qubits(), depth)?.output(state)
}

/// Real combination of Z strings keyed by their bit mask (qubit 0 on the top bit).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ZObservable {
    pub n_qubits: usize,
    pub terms: BTreeMap<u64, f64>,
}

impl ZObservable {
    pub fn z_string(n: usize, qubits: &[usize]) -> Self {
        let mask = qubits.iter().fold(0u64, |m, &q| m | 1 << (n - 1 - q));
        Self { n_qubits: n, terms: BTreeMap::from([(mask, 1.0)]) }
    }

    fn bit(&self, q: usize) -> u64 {
        1 << (self.n_qubits - 1 - q)
    }

    fn product(&self, other: &BTreeMap<u64, f64>) -> BTreeMap<u64, f64> {
        let mut out = BTreeMap::new();
        for (&m1, &c1) in &self.terms {
            for (&m2, &c2) in other {
                *out.entry(m1 ^ m2).or_insert(0.0) += c1 * c2;
            }
        }
        out.retain(|_, c: &mut f64| c.abs() > 1e-15);
        out
    }

    /// Dense expectation via a Walsh-Hadamard transform of the outcome distribution.
    pub fn expectation(&self, state: &StateVector) -> Result<f64> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::Dimension("observable and state sizes differ".into()));
        }
        let mut w = state.probabilities();
        walsh_hadamard(&mut w);
        Ok(self.terms.iter().map(|(&m, &c)| c * w[m as usize]).sum())
    }
}

/// In-place `w[m] ← Σ_x w[x] (−1)^{popcount(x & m)}`.
pub fn walsh_hadamard(w: &mut [f64]) {
    let n = w.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (w[j], w[j + h]);
                w[j] = a + b;
                w[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Image of `Z` on kept position `p` under one ferromagnetic layer on `a`:
/// `½(Z_i + Z_{i+1} + Z_{i−2}Z_{i−1}Z_i − Z_{i−2}Z_{i−1}Z_{i+1})`, with the
/// `i−2` factor absent at the left edge and no change without a right neighbour.
pub fn fm_propagate_z(obs: &ZObservable, a: &[usize], p: usize) -> BTreeMap<u64, f64> {
    let zi = obs.bit(a[p]);
    if p + 1 >= a.len() {
        return BTreeMap::from([(zi, 1.0)]);
    }
    let right = obs.bit(a[p]) ^ obs.bit(a[p + 1]);
    let left = if p >= 2 { obs.bit(a[p - 2]) ^ obs.bit(a[p - 1]) } else { obs.bit(a[p - 1]) };
    let mut out = BTreeMap::new();
    for (m, c) in [(zi, 0.5), (zi ^ left, 0.5), (zi ^ right, 0.5), (zi ^ left ^ right, -0.5)] {
        *out.entry(m).or_insert(0.0) += c;
    }
    out
}

/// Heisenberg-picture observable of the ferromagnetic circuit, built by
/// repeated application of the single-qubit propagation rule.
pub fn exact_qcnn_fm_mso(l: usize, depth: usize) -> Result<ZObservable> {
    if l > 64 {
        return Err(Error::UnsupportedSize(format!("mask form needs L <= 64, got {l}")));
    }
    let layers = fm_geometry(l, depth)?;
    let last = layers.last().unwrap();
    let mut obs = ZObservable::z_string(l, &[last[0], *last.last().unwrap()]);
    for d in (0..depth).rev() {
        let a = &layers[d];
        let mut next = ZObservable { n_qubits: l, terms: BTreeMap::new() };
        for (&mask, &coeff) in &obs.terms {
            let mut acc = ZObservable { n_qubits: l, terms: BTreeMap::from([(0, coeff)]) };
            for p in (1..a.len()).step_by(2) {
                if mask & obs.bit(a[p]) != 0 {
                    acc.terms = acc.product(&fm_propagate_z(&obs, a, p));
                }
            }
            for (m, c) in acc.terms {
                *next.terms.entry(m).or_insert(0.0) += c;
            }
        }
        next.terms.retain(|_, c| c.abs() > 1e-15);
        obs = next;
    }
    Ok(obs)
}

/// Active qubits after each thirding layer of the SPT circuit.
pub fn spt_geometry(l: usize, depth: usize) -> Result<Vec<Vec<usize>>> {
    let mut layers = vec![(0..l).collect::<Vec<_>>()];
    for _ in 0..depth {
        let prev = layers.last().unwrap();
        if prev.len() % 3 != 0 {
            return Err(Error::InvalidGeometry(format!("cannot third a register of {} qubits", prev.len())));
        }
        layers.push(prev.iter().skip(1).step_by(3).copied().collect());
    }
    if layers.last().unwrap().len() < 3 {
        return Err(Error::InvalidGeometry(format!("L = {l} leaves fewer than three qubits after {depth} layers")));
    }
    Ok(layers)
}

pub fn spt_max_depth(l: usize) -> usize {
    let (mut m, mut d) = (l, 0);
    while m % 3 == 0 && m / 3 >= 3 {
        m /= 3;
        d += 1;
    }
    d
}

/// The SPT exact QCNN. Each layer undoes the cluster entangler with a CZ row,
/// corrects the middle qubit of every block of three in the X basis using the
/// syndromes left by single X errors in the neighbouring blocks, and re-entangles
/// the survivors. The output is Z X Z on the central three survivors.
pub fn exact_qcnn_spt_circuit(l: usize, depth: usize) -> Result<Circuit> {
    let layers = spt_geometry(l, depth)?;
    let mut c = Circuit::new(l);
    for d in 0..depth {
        let a = &layers[d];
        let m = a.len();
        let nb = m / 3;
        for j in 0..m - 1 {
            c.push(cz(), vec![a[j], a[j + 1]])?;
        }
        for &q in a {
            c.push(hadamard(), vec![q])?;
        }
        for b in 0..nb {
            let mid = a[3 * b + 1];
            if b >= 1 {
                c.push(controlled_flip(true, false), vec![a[3 * b - 1], a[3 * b - 3], mid])?;
            }
            if b + 2 <= nb {
                c.push(controlled_flip(true, false), vec![a[3 * b + 3], a[3 * b + 5], mid])?;
            }
        }
        for &q in a {
            c.push(hadamard(), vec![q])?;
        }
        let kept = &layers[d + 1];
        for j in 0..kept.len() - 1 {
            c.push(cz(), vec![kept[j], kept[j + 1]])?;
        }
    }
    let last = layers.last().unwrap();
    let s = (last.len() - 3) / 2;
    c.measurement =
        PauliString::from_sites(l, 1.0, &[(last[s], Pauli::Z), (last[s + 1], Pauli::X), (last[s + 2], Pauli::Z)])?;
    Ok(c)
}

pub fn exact_qcnn_spt_output(state: &StateVector, depth: usize) -> Result<f64> {
    exact_qcnn_spt_circuit(state.n_qubits(), depth)?.output(state)
}

/// Generalized Gell-Mann matrices of dimension `d`: symmetric, antisymmetric,
/// then diagonal, `d² − 1` in total.
pub fn gell_mann(d: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(d * d - 1);
    for j in 0..d {
        for k in j + 1..d {
            let mut s = CMatrix::zeros((d, d));
            s[[j, k]] = ONE;
            s[[k, j]] = ONE;
            out.push(s);
            let mut a = CMatrix::zeros((d, d));
            a[[j, k]] = C64::new(0.0, -1.0);
            a[[k, j]] = C64::new(0.0, 1.0);
            out.push(a);
        }
    }
    for l in 1..d {
        let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut g = CMatrix::zeros((d, d));
        for j in 0..l {
            g[[j, j]] = C64::new(norm, 0.0);
        }
        g[[l, l]] = C64::new(-norm * l as f64, 0.0);
        out.push(g);
    }
    out
}

/// `exp(−i Σ_j θ_j Λ_j)`.
pub fn parameterized_unitary(theta: &[f64], generators: &[CMatrix]) -> Result<CMatrix> {
    if theta.len() != generators.len() {
        return Err(Error::Dimension(format!("{} parameters for {} generators", theta.len(), generators.len())));
    }
    let d = generators.first().map_or(1, |g| g.nrows());
    let mut h = CMatrix::zeros((d, d));
    for (t, g) in theta.iter().zip(generators) {
        h.scaled_add(C64::new(*t, 0.0), g);
    }
    expm_i_hermitian(&h.view())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Keep every odd position.
    Halving,
    /// Keep the middle of every block of three.
    Thirding,
}

/// Geometry of the trainable network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcnnLayout {
    pub n_qubits: usize,
    pub pooling: Pooling,
    pub depth: usize,
}

/// Where a gate's parameters live in the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSlot {
    pub qubits: usize,
    pub offset: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        (1 << (2 * self.qubits)) - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
struct Slots {
    // Per layer: two convolution rows, then pooling unitaries (V0, V1 per control side).
    conv: Vec<[ParamSlot; 2]>,
    pool: Vec<Vec<[ParamSlot; 2]>>,
    fc: ParamSlot,
    total: usize,
}

impl QcnnLayout {
    /// `depth = None` pools until at most three qubits (halving) or as long as
    /// the register divides into blocks leaving at least three (thirding).
    pub fn new(n_qubits: usize, pooling: Pooling, depth: Option<usize>) -> Result<Self> {
        if n_qubits < 2 {
            return Err(Error::InvalidGeometry(format!("{n_qubits} qubits")));
        }
        let depth = depth.unwrap_or(match pooling {
            Pooling::Halving => {
                let (mut m, mut d) = (n_qubits, 0);
                while m > 3 {
                    m /= 2;
                    d += 1;
                }
                d
            }
            Pooling::Thirding => spt_max_depth(n_qubits),
        });
        let layout = Self { n_qubits, pooling, depth };
        layout.layers()?;
        Ok(layout)
    }

    /// Active qubits entering each layer plus the survivors.
    pub fn layers(&self) -> Result<Vec<Vec<usize>>> {
        match self.pooling {
            Pooling::Halving => {
                let mut layers = vec![(0..self.n_qubits).collect::<Vec<_>>()];
                for _ in 0..self.depth {
                    let prev = layers.last().unwrap();
                    if prev.len() < 2 {
                        return Err(Error::InvalidGeometry("register exhausted before the last layer".into()));
                    }
                    layers.push(prev.iter().skip(1).step_by(2).copied().collect());
                }
                Ok(layers)
            }
            Pooling::Thirding => {
                let mut layers = vec![(0..self.n_qubits).collect::<Vec<_>>()];
                for _ in 0..self.depth {
                    let prev = layers.last().unwrap();
                    if prev.len() % 3 != 0 {
                        return Err(Error::InvalidGeometry(format!("cannot third {} qubits", prev.len())));
                    }
                    layers.push(prev.iter().skip(1).step_by(3).copied().collect());
                }
                Ok(layers)
            }
        }
    }

    /// The fully connected gate acts on the central (at most three) survivors.
    pub fn fc_qubits(&self) -> Result<Vec<usize>> {
        let layers = self.layers()?;
        let last = layers.last().unwrap();
        let r = last.len().min(3);
        let s = (last.len() - r) / 2;
        Ok(last[s..s + r].to_vec())
    }

    pub fn output_qubit(&self) -> Result<usize> {
        let fc = self.fc_qubits()?;
        Ok(fc[fc.len() / 2])
    }

    fn slots(&self) -> Result<Slots> {
        let mut offset = 0;
        let mut take = |qubits: usize| {
            let s = ParamSlot { qubits, offset };
            offset += s.len();
            s
        };
        let mut conv = Vec::new();
        let mut pool = Vec::new();
        for _ in 0..self.depth {
            conv.push([take(2), take(2)]);
            let sides = match self.pooling {
                Pooling::Halving => 1,
                Pooling::Thirding => 2,
            };
            pool.push((0..sides).map(|_| [take(1), take(1)]).collect());
        }
        let fc = take(self.fc_qubits()?.len());
        Ok(Slots { conv, pool, fc, total: offset })
    }

    pub fn n_params(&self) -> Result<usize> {
        Ok(self.slots()?.total)
    }
}

/// `|0⟩⟨0| ⊗ v0 + |1⟩⟨1| ⊗ v1` with the control as the top qubit.
fn controlled_pair(v0: &CMatrix, v1: &CMatrix) -> CMatrix {
    let mut u = CMatrix::zeros((4, 4));
    u.slice_mut(ndarray::s![0..2, 0..2]).assign(v0);
    u.slice_mut(ndarray::s![2..4, 2..4]).assign(v1);
    u
}

/// The trainable network with every gate materialized.
#[derive(Clone, Debug)]
pub struct QcnnModel {
    pub layout: QcnnLayout,
    pub circuit: Circuit,
}

impl QcnnModel {
    pub fn new(layout: &QcnnLayout, theta: &[f64]) -> Result<Self> {
        let slots = layout.slots()?;
        if theta.len() != slots.total {
            return Err(Error::Dimension(format!("{} parameters for a layout with {}", theta.len(), slots.total)));
        }
        let gens: Vec<Vec<CMatrix>> = (0..=3).map(|k| if k == 0 { Vec::new() } else { gell_mann(1 << k) }).collect();
        let unitary = |s: ParamSlot| parameterized_unitary(&theta[s.offset..s.offset + s.len()], &gens[s.qubits]);
        let layers = layout.layers()?;
        let mut c = Circuit::new(layout.n_qubits);
        for d in 0..layout.depth {
            let a = &layers[d];
            let m = a.len();
            let row = [unitary(slots.conv[d][0])?, unitary(slots.conv[d][1])?];
            for (r, u) in row.iter().enumerate() {
                let mut j = r;
                while j + 1 < m {
                    c.push(u.clone(), vec![a[j], a[j + 1]])?;
                    j += 2;
                }
            }
            let pool: Vec<CMatrix> = slots.pool[d]
                .iter()
                .map(|[s0, s1]| Ok(controlled_pair(&unitary(*s0)?, &unitary(*s1)?)))
                .collect::<Result<_>>()?;
            match layout.pooling {
                Pooling::Halving => {
                    for q in (0..m).step_by(2) {
                        let target = if q + 1 < m { q + 1 } else { q - 1 };
                        c.push(pool[0].clone(), vec![a[q], a[target]])?;
                    }
                }
                Pooling::Thirding => {
                    for b in 0..m / 3 {
                        c.push(pool[0].clone(), vec![a[3 * b], a[3 * b + 1]])?;
                        c.push(pool[1].clone(), vec![a[3 * b + 2], a[3 * b + 1]])?;
                    }
                }
            }
        }
        let fc = layout.fc_qubits()?;
        c.push(unitary(slots.fc)?, fc.clone())?;
        c.measurement = PauliString::from_sites(layout.n_qubits, 1.0, &[(layout.output_qubit()?, Pauli::Z)])?;
        Ok(Self { layout: layout.clone(), circuit: c })
    }

    pub fn forward(&self, state: &StateVector) -> Result<f64> {
        self.circuit.output(state)
    }

    pub fn forward_batch(&self, states: &[StateVector]) -> Result<Vec<f64>> {
        states.par_iter().map(|s| self.forward(s)).collect()
    }
}

pub fn qcnn_forward(theta: &[f64], layout: &QcnnLayout, state: &StateVector) -> Result<f64> {
    QcnnModel::new(layout, theta)?.forward(state)
}

pub fn init_params<R: Rng + ?Sized>(layout: &QcnnLayout, rng: &mut R) -> Result<Vec<f64>> {
    Ok((0..layout.n_params()?).map(|_| rng.random_range(-0.1..=0.1)).collect())
}

pub fn mse_loss(f: &[f64], y: &[f64]) -> Result<f64> {
    if f.len() != y.len() {
        return Err(Error::Dimension(format!("{} outputs for {} labels", f.len(), y.len())));
    }
    if f.is_empty() {
        return Ok(0.0);
    }
    Ok(f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / f.len() as f64)
}

/// `a_t = a / (t + A)^α`, `c_t = c / t^γ`, with `t` counted from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpsaGains {
    pub a: f64,
    pub c: f64,
    pub big_a: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl SpsaGains {
    pub fn standard(epochs: usize) -> Self {
        Self { a: 0.2, c: 0.1, big_a: 0.1 * epochs as f64, alpha: 0.602, gamma: 0.101 }
    }

    pub fn a_t(&self, t: usize) -> f64 {
        self.a / (t as f64 + self.big_a).powf(self.alpha)
    }

    pub fn c_t(&self, t: usize) -> f64 {
        self.c / (t as f64).powf(self.gamma)
    }
}

/// Two-sided simultaneous-perturbation gradient estimate at perturbation size `c`.
pub fn spsa_gradient<R, F>(loss: &mut F, theta: &[f64], c: f64, rng: &mut R) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    let delta = rademacher(theta.len(), rng);
    spsa_gradient_along(loss, theta, c, &delta)
}

pub fn rademacher<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// The estimate for a given ±1 perturbation direction.
pub fn spsa_gradient_along<F>(loss: &mut F, theta: &[f64], c: f64, delta: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let plus: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t + c * d).collect();
    let minus: Vec<f64> = theta.iter().zip(delta).map(|(t, d)| t - c * d).collect();
    let diff = (loss(&plus)? - loss(&minus)?) / (2.0 * c);
    Ok(delta.iter().map(|d| diff / d).collect())
}

/// How training outputs are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "shots")]
pub enum Evaluation {
    Exact,
    /// Each output estimated from this many ±1 measurement outcomes.
    Shots(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
    /// Training-state evaluations consumed so far.
    pub evaluations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub log: Vec<EpochRecord>,
    pub evaluations: u64,
    /// Copies of training states consumed: evaluations × shots (zero in exact mode).
    pub training_copies: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpsaConfig {
    pub epochs: usize,
    pub gains: SpsaGains,
    pub mode: Evaluation,
}

impl SpsaConfig {
    pub fn exact(epochs: usize) -> Self {
        Self { epochs, gains: SpsaGains::standard(epochs), mode: Evaluation::Exact }
    }
}

pub struct Dataset<'a> {
    pub states: &'a [StateVector],
    pub labels: &'a [f64],
}

fn estimate<R: Rng + ?Sized>(f: f64, mode: Evaluation, rng: &mut R) -> Result<f64> {
    match mode {
        Evaluation::Exact => Ok(f),
        Evaluation::Shots(t) => {
            let p = ((1.0 + f) / 2.0).clamp(0.0, 1.0);
            let k = Binomial::new(t as u64, p).map_err(|e| Error::NumericalFailure(e.to_string()))?.sample(rng);
            Ok(2.0 * k as f64 / t as f64 - 1.0)
        }
    }
}

/// SPSA on the mean squared error of the raw outputs.
pub fn spsa_train<R: Rng + ?Sized>(
    train: &Dataset,
    validation: Option<&Dataset>,
    layout: &QcnnLayout,
    theta0: Vec<f64>,
    config: &SpsaConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let SpsaConfig { epochs, gains, mode } = *config;
    if epochs == 0 {
        return Err(Error::InvalidConfig("SPSA needs at least one epoch".into()));
    }
    if train.states.len() != train.labels.len() || train.states.is_empty() {
        return Err(Error::Dimension("training set needs one label per state".into()));
    }
    if let Evaluation::Shots(0) = mode {
        return Err(Error::InvalidConfig("finite-shot mode needs at least one shot".into()));
    }
    let mut theta = theta0;
    let mut evaluations = 0u64;
    let mut log = Vec::with_capacity(epochs);
    for t in 1..=epochs {
        let delta = rademacher(theta.len(), rng);
        let mut loss = |th: &[f64]| -> Result<f64> {
            let f = QcnnModel::new(layout, th)?.forward_batch(train.states)?;
            evaluations += f.len() as u64;
            let f = f.into_iter().map(|x| estimate(x, mode, &mut *rng)).collect::<Result<Vec<_>>>()?;
            mse_loss(&f, train.labels)
        };
        let g = spsa_gradient_along(&mut loss, &theta, gains.c_t(t), &delta)?;
        let a_t = gains.a_t(t);
        for (th, gi) in theta.iter_mut().zip(&g) {
            *th -= a_t * gi;
        }
        let model = QcnnModel::new(layout, &theta)?;
        let train_mse = mse_loss(&model.forward_batch(train.states)?, train.labels)?;
        let validation_mse = match validation {
            Some(v) => Some(mse_loss(&model.forward_batch(v.states)?, v.labels)?),
            None => None,
        };
        log.push(EpochRecord { epoch: t, train_mse, validation_mse, evaluations });
    }
    let shots = match mode {
        Evaluation::Exact => 0,
        Evaluation::Shots(s) => s as u64,
    };
    Ok(TrainOutcome { theta, log, evaluations, training_copies: evaluations * shots })
}

/// Trained-parameter checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcnnCheckpoint {
    pub format: String,
    pub version: u32,
    pub layout: QcnnLayout,
    pub theta: Vec<f64>,
    pub config: SpsaConfig,
    pub seed: u64,
    pub log: Vec<EpochRecord>,
}

pub const QCNN_FORMAT: &str = "qphase-qcnn";

impl QcnnCheckpoint {
    pub fn new(layout: QcnnLayout, outcome: &TrainOutcome, config: SpsaConfig, seed: u64) -> Self {
        Self {
            format: QCNN_FORMAT.into(),
            version: 1,
            layout,
            theta: outcome.theta.clone(),
            config,
            seed,
            log: outcome.log.clone(),
        }
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let c: Self = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if c.format != QCNN_FORMAT || c.version != 1 {
            return Err(Error::InvalidConfig(format!("not a QCNN checkpoint: {} v{}", c.format, c.version)));
        }
        if c.theta.len() != c.layout.n_params()? {
            return Err(Error::InvalidConfig("parameter count does not match the layout".into()));
        }
        Ok(c)
    }
}
