//! Partitioned classical shadows with uniformly random k-qubit Cliffords.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::QuantumState;
use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{kron, pauli_matrix, CMatrix, C64, ONE, ZERO};
use crate::partition::Partition;

pub const MAX_GROUP_SIZE: usize = 6;

// Binary vectors of length 2k are packed into u16 with bit 2j = x_j, bit 2j+1 = z_j.

fn bit(v: u16, i: usize) -> u16 {
    (v >> i) & 1
}

fn symp_inner(v: u16, w: u16, k: usize) -> u16 {
    let mut t = 0;
    for j in 0..k {
        t ^= (bit(v, 2 * j) & bit(w, 2 * j + 1)) ^ (bit(w, 2 * j) & bit(v, 2 * j + 1));
    }
    t
}

fn transvection(h: u16, v: u16, k: usize) -> u16 {
    if symp_inner(h, v, k) == 1 {
        v ^ h
    } else {
        v
    }
}

/// Two vectors `h1, h2` with `y = Z_{h1} Z_{h2} x` (`x`, `y` nonzero).
fn find_transvection(x: u16, y: u16, k: usize) -> (u16, u16) {
    if x == y {
        return (0, 0);
    }
    if symp_inner(x, y, k) == 1 {
        return (x ^ y, 0);
    }
    let pair = |v: u16, j: usize| (bit(v, 2 * j), bit(v, 2 * j + 1));
    for j in 0..k {
        let (x0, x1) = pair(x, j);
        let (y0, y1) = pair(y, j);
        if (x0 | x1) != 0 && (y0 | y1) != 0 {
            let mut z0 = x0 ^ y0;
            let mut z1 = x1 ^ y1;
            if z0 == 0 && z1 == 0 {
                z1 = 1;
                if x0 != x1 {
                    z0 = 1;
                }
            }
            let z = (z0 << (2 * j)) | (z1 << (2 * j + 1));
            return (x ^ z, y ^ z);
        }
    }
    let mut z = 0u16;
    for j in 0..k {
        let (x0, x1) = pair(x, j);
        let (y0, y1) = pair(y, j);
        if (x0 | x1) != 0 && (y0 | y1) == 0 {
            if x0 == x1 {
                z |= 1 << (2 * j + 1);
            } else {
                z |= (x1 << (2 * j)) | (x0 << (2 * j + 1));
            }
            break;
        }
    }
    for j in 0..k {
        let (x0, x1) = pair(x, j);
        let (y0, y1) = pair(y, j);
        if (x0 | x1) == 0 && (y0 | y1) != 0 {
            if y0 == y1 {
                z |= 1 << (2 * j + 1);
            } else {
                z |= (y1 << (2 * j)) | (y0 << (2 * j + 1));
            }
            break;
        }
    }
    (x ^ z, y ^ z)
}

/// |Sp(2k, F2)|.
pub fn symplectic_group_order(k: usize) -> u128 {
    (1..=k).map(|j| (1u128 << (2 * j - 1)) * ((1u128 << (2 * j)) - 1)).product()
}

/// Order of the k-qubit Clifford group modulo phases.
pub fn clifford_group_order(k: usize) -> u128 {
    symplectic_group_order(k) << (2 * k)
}

/// The `index`-th symplectic matrix in canonical order, as 2k rows.
/// Row 2j is the image of X_j, row 2j+1 the image of Z_j.
pub fn symplectic_from_index(k: usize, index: u128) -> Vec<u16> {
    let nn = 2 * k;
    let s = (1u128 << nn) - 1;
    let f1_full = ((index % s) + 1) as u16;
    let mut i = index / s;
    let e1 = 1u16;
    let (t0, t1) = find_transvection(e1, f1_full, k);
    let bits = (i % (1u128 << (nn - 1))) as u16;
    let mut eprime = e1;
    for j in 2..nn {
        eprime |= bit(bits, j - 1) << j;
    }
    let h0 = transvection(t1, transvection(t0, eprime, k), k);
    let f1 = if bit(bits, 0) == 1 { 0 } else { f1_full };
    i >>= nn - 1;
    let mut g: Vec<u16> = vec![0b01, 0b10];
    if k > 1 {
        for row in symplectic_from_index(k - 1, i) {
            g.push(row << 2);
        }
    }
    for row in g.iter_mut() {
        let mut r = transvection(t0, *row, k);
        r = transvection(t1, r, k);
        r = transvection(h0, r, k);
        *row = transvection(f1, r, k);
    }
    g
}

/// Hermitian Pauli operator from packed bits, qubit 0 being the leftmost factor.
fn pauli_from_bits(v: u16, k: usize) -> CMatrix {
    let mut m = Array2::from_elem((1, 1), ONE);
    for j in 0..k {
        let c = match (bit(v, 2 * j), bit(v, 2 * j + 1)) {
            (0, 0) => 'I',
            (1, 0) => 'X',
            (0, 1) => 'Z',
            _ => 'Y',
        };
        m = kron(&m, &pauli_matrix(c));
    }
    m
}

/// Clifford unitary on a k-qubit group with its symplectic tableau.
#[derive(Clone, Debug)]
pub struct CliffordElement {
    k: usize,
    id: u128,
    /// Images of X_0, Z_0, X_1, Z_1, … without signs.
    rows: Vec<u16>,
    /// Sign bits of the images: bit 2j for X_j, bit 2j+1 for Z_j.
    signs: u16,
    unitary: CMatrix,
}

impl CliffordElement {
    /// Element `id = symplectic_index · 4^k + pauli_index`.
    pub fn from_id(k: usize, id: u128) -> Result<Self> {
        if k == 0 || k > MAX_GROUP_SIZE {
            return Err(Error::UnsupportedGroupSize(k));
        }
        if id >= clifford_group_order(k) {
            return Err(Error::InvalidConfig(format!("Clifford id {id} out of range for k = {k}")));
        }
        let pauli = (id & ((1u128 << (2 * k)) - 1)) as u16;
        let rows = symplectic_from_index(k, id >> (2 * k));
        // A Pauli layer P applied first flips the sign of every generator it anticommutes with.
        let mut signs = 0u16;
        for j in 0..2 * k {
            let gen = 1u16 << j;
            signs |= symp_inner(pauli, gen, k) << j;
        }
        let unitary = Self::build_unitary(k, &rows, signs);
        Ok(Self { k, id, rows, signs, unitary })
    }

    fn build_unitary(k: usize, rows: &[u16], signs: u16) -> CMatrix {
        let d = 1usize << k;
        let signed = |j: usize| {
            let p = pauli_from_bits(rows[j], k);
            if bit(signs, j) == 1 {
                p.mapv(|z| -z)
            } else {
                p
            }
        };
        // Column 0 spans the joint +1 eigenspace of the Z images.
        let mut proj = Array2::from_diag(&ndarray::Array1::from_elem(d, ONE));
        for j in 0..k {
            let p = signed(2 * j + 1);
            let half = (&Array2::from_diag(&ndarray::Array1::from_elem(d, ONE)) + &p).mapv(|z| z * 0.5);
            proj = half.dot(&proj);
        }
        let best = (0..d)
            .max_by(|&a, &b| {
                let na: f64 = proj.column(a).iter().map(|z| z.norm_sqr()).sum();
                let nb: f64 = proj.column(b).iter().map(|z| z.norm_sqr()).sum();
                na.total_cmp(&nb)
            })
            .unwrap();
        let mut v0 = proj.column(best).to_owned();
        let norm = v0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        // Fix the global phase so the largest entry is real and positive.
        let lead = v0.iter().copied().max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr())).unwrap();
        let phase = lead.conj() / lead.norm();
        v0.mapv_inplace(|z| z * phase / norm);
        let xs: Vec<CMatrix> = (0..k).map(|j| signed(2 * j)).collect();
        let mut u = CMatrix::zeros((d, d));
        for b in 0..d {
            let mut col = v0.clone();
            // b's bit for qubit j is (b >> (k−1−j)) & 1.
            for (j, x) in xs.iter().enumerate() {
                if (b >> (k - 1 - j)) & 1 == 1 {
                    col = x.dot(&col);
                }
            }
            u.column_mut(b).assign(&col);
        }
        u
    }

    pub fn n_qubits(&self) -> usize {
        self.k
    }

    pub fn id(&self) -> u128 {
        self.id
    }

    pub fn unitary(&self) -> &CMatrix {
        &self.unitary
    }

    /// Signed image `U P U†` of generator `j` (2j → X_j, 2j+1 → Z_j) as a dense matrix.
    pub fn generator_image(&self, j: usize) -> CMatrix {
        let p = pauli_from_bits(self.rows[j], self.k);
        if bit(self.signs, j) == 1 {
            p.mapv(|z| -z)
        } else {
            p
        }
    }

    /// Tableau rows (unsigned images of X_0, Z_0, X_1, …) packed as bit vectors.
    pub fn tableau(&self) -> (&[u16], u16) {
        (&self.rows, self.signs)
    }

    /// Whether the rows form a symplectic basis.
    pub fn is_symplectic(&self) -> bool {
        let n = 2 * self.k;
        (0..n).all(|a| {
            (0..n).all(|b| {
                let expect = u16::from(a / 2 == b / 2 && a != b);
                symp_inner(self.rows[a], self.rows[b], self.k) == expect
            })
        })
    }
}

/// Uniformly random element of the k-qubit Clifford group.
pub fn sample_uniform_clifford<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<CliffordElement> {
    if k == 0 || k > MAX_GROUP_SIZE {
        return Err(Error::UnsupportedGroupSize(k));
    }
    let id = rng.random_range(0..clifford_group_order(k));
    CliffordElement::from_id(k, id)
}

/// One measured group in one shot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowSnapshot {
    pub group: usize,
    pub clifford_id: u128,
    /// Outcome index, qubit 0 of the group being the top bit.
    pub outcome: usize,
}

/// Shots per state; `per_group[j]` lists group `j`'s snapshots in shot order.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub k: usize,
    pub per_group: Vec<Vec<ShadowSnapshot>>,
}

impl SnapshotSet {
    pub fn shots(&self) -> usize {
        self.per_group.first().map_or(0, Vec::len)
    }
}

/// Measures `t_state` copies of `state`. Each shot draws a fresh Clifford per
/// group, rotates, and measures every qubit once. With probability `noise_p`
/// the whole outcome is replaced by a uniformly random bitstring.
pub fn collect_snapshots<R: Rng + ?Sized>(
    state: &QuantumState,
    partition: &Partition,
    t_state: usize,
    noise_p: f64,
    rng: &mut R,
) -> Result<SnapshotSet> {
    if t_state == 0 {
        return Err(Error::InvalidConfig("at least one shot per state is required".into()));
    }
    if !(0.0..=1.0).contains(&noise_p) {
        return Err(Error::InvalidProbability(noise_p));
    }
    let k = partition.k();
    if partition.groups().iter().any(|g| g.len() != k) {
        return Err(Error::InvalidGroup("shadow collection needs equal group sizes".into()));
    }
    let sampler = state.shot_sampler(partition)?;
    let m = partition.len();
    let mut per_group = vec![Vec::with_capacity(t_state); m];
    for _ in 0..t_state {
        let cliffords = (0..m).map(|_| sample_uniform_clifford(k, rng)).collect::<Result<Vec<_>>>()?;
        let us: Vec<Option<&CMatrix>> = cliffords.iter().map(|c| Some(c.unitary())).collect();
        let mut outcomes = sampler.shot(&us, rng)?;
        if noise_p > 0.0 && rng.random::<f64>() < noise_p {
            for o in outcomes.iter_mut() {
                *o = rng.random_range(0..1usize << k);
            }
        }
        for (j, (c, o)) in cliffords.iter().zip(outcomes).enumerate() {
            per_group[j].push(ShadowSnapshot { group: j, clifford_id: c.id(), outcome: o });
        }
    }
    Ok(SnapshotSet { k, per_group })
}

/// The operator `(2^k + 1) U†|b⟩⟨b|U − I` of one snapshot.
pub fn snapshot_operator(k: usize, snap: &ShadowSnapshot) -> Result<CMatrix> {
    let c = CliffordElement::from_id(k, snap.clifford_id)?;
    Ok(snapshot_from_unitary(c.unitary(), snap.outcome))
}

fn snapshot_from_unitary(u: &CMatrix, outcome: usize) -> CMatrix {
    let d = u.nrows();
    let v: Vec<C64> = u.row(outcome).iter().map(|z| z.conj()).collect();
    let scale = (d + 1) as f64;
    Array2::from_shape_fn((d, d), |(i, j)| {
        let e = v[i] * v[j].conj() * scale;
        if i == j {
            e - ONE
        } else {
            e
        }
    })
}

/// Sample mean of the snapshot operators. Hermitian with unit trace; not projected to PSD.
pub fn reconstruct_rdm(k: usize, snaps: &[ShadowSnapshot]) -> Result<DensityMatrix> {
    if snaps.is_empty() {
        return Err(Error::EmptyEstimate);
    }
    let d = 1usize << k;
    let mut cache: HashMap<u128, CMatrix> = HashMap::new();
    // Accumulate Σ v v† with v = U†|b⟩ and form the estimate at the end.
    let mut acc = CMatrix::zeros((d, d));
    for s in snaps {
        if s.outcome >= d {
            return Err(Error::Dimension(format!("outcome {} on a {k}-qubit group", s.outcome)));
        }
        let u = match cache.get(&s.clifford_id) {
            Some(u) => u,
            None => {
                let c = CliffordElement::from_id(k, s.clifford_id)?;
                cache.entry(s.clifford_id).or_insert(c.unitary)
            }
        };
        for i in 0..d {
            let vi = u[[s.outcome, i]].conj();
            if vi == ZERO {
                continue;
            }
            for j in 0..d {
                acc[[i, j]] += vi * u[[s.outcome, j]];
            }
        }
    }
    let scale = (d + 1) as f64 / snaps.len() as f64;
    let mut rho = acc.mapv(|z| z * scale);
    for i in 0..d {
        rho[[i, i]] -= ONE;
    }
    let herm = (&rho + &rho.t().mapv(|z| z.conj())).mapv(|z| z * 0.5);
    DensityMatrix::new(herm, 1e-9)
}

/// RDM estimates for every group of a snapshot set.
pub fn reconstruct_all(set: &SnapshotSet) -> Result<Vec<DensityMatrix>> {
    set.per_group.iter().map(|s| reconstruct_rdm(set.k, s)).collect()
}

/// Exact group RDMs, standing in for infinitely many shots.
pub fn exact_rdm_oracle(state: &QuantumState, partition: &Partition) -> Result<Vec<DensityMatrix>> {
    state.rdms(partition)
}

/// One JSON-lines record of the snapshot log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub state_id: usize,
    pub shot: usize,
    pub group: usize,
    /// Decimal string, since ids for k ≥ 4 exceed 2^53.
    pub clifford_id: String,
    pub outcome_bits: String,
}

pub fn write_snapshot_log<W: Write>(out: &mut W, state_id: usize, set: &SnapshotSet) -> Result<()> {
    for shot in 0..set.shots() {
        for (j, snaps) in set.per_group.iter().enumerate() {
            let s = &snaps[shot];
            let rec = SnapshotRecord {
                state_id,
                shot,
                group: j,
                clifford_id: s.clifford_id.to_string(),
                outcome_bits: format!("{:0width$b}", s.outcome, width = set.k),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads a snapshot log back into per-state sets (sorted by state id).
pub fn read_snapshot_log<R: BufRead>(input: R) -> Result<Vec<(usize, SnapshotSet)>> {
    let mut by_state: std::collections::BTreeMap<usize, Vec<SnapshotRecord>> = Default::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SnapshotRecord = serde_json::from_str(&line)?;
        by_state.entry(rec.state_id).or_default().push(rec);
    }
    let mut out = Vec::new();
    for (id, mut recs) in by_state {
        recs.sort_by_key(|r| (r.group, r.shot));
        let k = recs[0].outcome_bits.len();
        let m = recs.iter().map(|r| r.group).max().unwrap() + 1;
        let mut per_group = vec![Vec::new(); m];
        for r in recs {
            if r.outcome_bits.len() != k {
                return Err(Error::InvalidConfig("inconsistent outcome width in snapshot log".into()));
            }
            let clifford_id: u128 = r
                .clifford_id
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad Clifford id {:?}", r.clifford_id)))?;
            let outcome = usize::from_str_radix(&r.outcome_bits, 2)
                .map_err(|_| Error::InvalidConfig(format!("bad outcome bits {:?}", r.outcome_bits)))?;
            per_group[r.group].push(ShadowSnapshot { group: r.group, clifford_id, outcome });
        }
        out.push((id, SnapshotSet { k, per_group }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, frobenius_norm, unitarity_deviation};
    use crate::rng::RngStream;
    use std::collections::HashSet;

    #[test]
    fn group_orders() {
        assert_eq!(symplectic_group_order(1), 6);
        assert_eq!(symplectic_group_order(2), 720);
        assert_eq!(clifford_group_order(1), 24);
        assert_eq!(clifford_group_order(2), 11520);
    }

    #[test]
    fn symplectic_enumeration_is_bijective() {
        for k in 1..=2 {
            let n = symplectic_group_order(k);
            let mut seen = HashSet::new();
            for i in 0..n {
                let rows = symplectic_from_index(k, i);
                let c = CliffordElement { k, id: 0, rows: rows.clone(), signs: 0, unitary: CMatrix::zeros((1, 1)) };
                assert!(c.is_symplectic(), "k={k} i={i} {rows:?}");
                seen.insert(rows);
            }
            assert_eq!(seen.len() as u128, n);
        }
    }

    #[test]
    fn unitary_matches_tableau() {
        let mut rng = RngStream::new(1).rng();
        for k in 1..=3 {
            for _ in 0..20 {
                let c = sample_uniform_clifford(k, &mut rng).unwrap();
                let u = c.unitary();
                assert!(unitarity_deviation(&u.view()) < 1e-10);
                for j in 0..2 * k {
                    let gen = pauli_from_bits(1 << j, k);
                    let img = u.dot(&gen).dot(&dagger(&u.view()));
                    assert!(frobenius_norm(&(img - c.generator_image(j)).view()) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn k1_elements_are_distinct_up_to_phase() {
        let us: Vec<CMatrix> = (0..24).map(|i| CliffordElement::from_id(1, i).unwrap().unitary).collect();
        for a in 0..24 {
            for b in a + 1..24 {
                let overlap = crate::linalg::trace(&dagger(&us[a].view()).dot(&us[b]).view()).norm();
                assert!((overlap - 2.0).abs() > 1e-6, "{a} and {b} coincide");
            }
        }
    }
}
