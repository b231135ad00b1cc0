use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use ndarray_linalg::QR;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{reshape, truncated_svd, SVD_CUTOFF};
use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{check_unitary, dagger, CMatrix, C64, ONE, ZERO};
use crate::partition::Partition;
use crate::pauli::{PauliString, PauliSum};
use crate::statevector::StateVector;

/// Matrix product state with site tensors indexed `(left, physical, right)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    tensors: Vec<Array3<C64>>,
    chi_max: usize,
    /// Tensors left of the center are left-orthonormal, right of it right-orthonormal.
    center: Option<usize>,
    truncation_weight: f64,
    last_truncation_weight: f64,
}

fn site_matrix(a: &Array3<C64>, s: usize) -> ArrayView2<'_, C64> {
    a.index_axis(Axis(1), s)
}

fn conj_t(m: &ArrayView2<C64>) -> CMatrix {
    dagger(m)
}

/// `E ← Σ_s A_s† E A_s`.
fn transfer(e: &CMatrix, a: &Array3<C64>) -> CMatrix {
    let mut out = CMatrix::zeros((a.shape()[2], a.shape()[2]));
    for s in 0..2 {
        let m = site_matrix(a, s);
        out += &conj_t(&m).dot(&e.dot(&m));
    }
    out
}

/// `E ← Σ_{s,s'} op[s,s'] A_s† E A_{s'}`.
fn transfer_op(e: &CMatrix, a: &Array3<C64>, op: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros((a.shape()[2], a.shape()[2]));
    let ket: Vec<CMatrix> = (0..2).map(|s| e.dot(&site_matrix(a, s))).collect();
    for s in 0..2 {
        let mut mixed = CMatrix::zeros(ket[0].raw_dim());
        for t in 0..2 {
            if op[[s, t]] != ZERO {
                mixed.scaled_add(op[[s, t]], &ket[t]);
            }
        }
        out += &conj_t(&site_matrix(a, s)).dot(&mixed);
    }
    out
}

/// Products `A_{s1} A_{s2} … A_{sk}` for every local index `g` (first site most significant).
fn group_products(tensors: &[Array3<C64>]) -> Vec<CMatrix> {
    let dl = tensors[0].shape()[0];
    let mut prods = vec![CMatrix::eye(dl)];
    for a in tensors {
        let mut next = Vec::with_capacity(prods.len() * 2);
        for p in &prods {
            for s in 0..2 {
                next.push(p.dot(&site_matrix(a, s)));
            }
        }
        prods = next;
    }
    prods
}

/// Element-wise `Σ conj(a) ∘ b`.
fn frob_inner(a: &CMatrix, b: &CMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

impl Mps {
    pub fn from_tensors(tensors: Vec<Array3<C64>>, chi_max: usize) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::InvalidSystemSize("MPS with no sites".into()));
        }
        if tensors[0].shape()[0] != 1 || tensors[tensors.len() - 1].shape()[2] != 1 {
            return Err(Error::Dimension("outer MPS bonds must have dimension 1".into()));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.shape()[1] != 2 {
                return Err(Error::Dimension(format!("site {i} has physical dimension {}", t.shape()[1])));
            }
            if i + 1 < tensors.len() && t.shape()[2] != tensors[i + 1].shape()[0] {
                return Err(Error::Dimension(format!("bond mismatch between sites {i} and {}", i + 1)));
            }
        }
        Ok(Self { tensors, chi_max, center: None, truncation_weight: 0.0, last_truncation_weight: 0.0 })
    }

    /// Product state of single-qubit amplitude pairs.
    pub fn product(qubits: &[[C64; 2]]) -> Result<Self> {
        let tensors = qubits
            .iter()
            .map(|q| {
                let n = (q[0].norm_sqr() + q[1].norm_sqr()).sqrt();
                Array3::from_shape_vec((1, 2, 1), vec![q[0] / n, q[1] / n]).unwrap()
            })
            .collect();
        let mut m = Self::from_tensors(tensors, 1)?;
        m.center = Some(0);
        Ok(m)
    }

    pub fn basis_state(bits: &[u8]) -> Self {
        let qs: Vec<[C64; 2]> = bits.iter().map(|&b| if b == 0 { [ONE, ZERO] } else { [ZERO, ONE] }).collect();
        Self::product(&qs).unwrap()
    }

    pub fn random<R: Rng + ?Sized>(n: usize, chi: usize, rng: &mut R) -> Self {
        let dims: Vec<usize> = (0..=n)
            .map(|b| {
                let cap = 1usize.checked_shl(b.min(n - b) as u32).unwrap_or(usize::MAX);
                chi.min(cap)
            })
            .collect();
        let tensors = (0..n)
            .map(|i| {
                Array3::from_shape_fn((dims[i], 2, dims[i + 1]), |_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(re, im)
                })
            })
            .collect();
        let mut m = Self::from_tensors(tensors, chi).unwrap();
        m.canonicalize(0).unwrap();
        m
    }

    /// Exact (up to `chi_max` and the SVD cutoff) conversion by successive SVDs.
    pub fn from_statevector(sv: &StateVector, chi_max: usize) -> Result<Self> {
        let n = sv.n_qubits();
        let mut rest = Array2::from_shape_vec((1, 1 << n), sv.amplitudes().to_vec()).unwrap();
        let mut tensors = Vec::with_capacity(n);
        let mut weight = 0.0;
        for _ in 0..n - 1 {
            let dl = rest.nrows();
            let cols = rest.ncols() / 2;
            let m = reshape(rest, (dl * 2, cols));
            let t = truncated_svd(&m, chi_max, SVD_CUTOFF)?;
            weight += t.weight;
            let keep = t.s.len();
            tensors.push(reshape(t.u, (dl, 2, keep)));
            let sv_t = Array2::from_diag(&t.s.mapv(|x| C64::new(x, 0.0))).dot(&t.vt);
            rest = sv_t;
        }
        let dl = rest.nrows();
        tensors.push(reshape(rest, (dl, 2, 1)));
        let mut m = Self::from_tensors(tensors, chi_max)?;
        m.center = Some(n - 1);
        m.normalize_center();
        m.truncation_weight = weight;
        m.last_truncation_weight = weight;
        Ok(m)
    }

    pub fn to_statevector(&self) -> Result<StateVector> {
        let mut psi = Array2::from_elem((1, 1), ONE);
        for a in &self.tensors {
            let (dl, _, dr) = a.dim();
            let mat = reshape(a.clone(), (dl, 2 * dr));
            let rows = psi.nrows();
            psi = reshape(psi.dot(&mat), (rows * 2, dr));
        }
        StateVector::normalized(psi.into_raw_vec())
    }

    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensors(&self) -> &[Array3<C64>] {
        &self.tensors
    }

    /// Same state with a different bond cap for later operations.
    pub fn with_chi_max(mut self, chi_max: usize) -> Self {
        self.chi_max = chi_max.max(1);
        self
    }

    pub fn chi_max(&self) -> usize {
        self.chi_max
    }

    pub fn center(&self) -> Option<usize> {
        self.center
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors.iter().skip(1).map(|a| a.shape()[0]).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Discarded weight summed over every truncating split so far.
    pub fn truncation_weight(&self) -> f64 {
        self.truncation_weight
    }

    /// Discarded weight of the most recent operation.
    pub fn last_truncation_weight(&self) -> f64 {
        self.last_truncation_weight
    }

    pub fn norm_sqr(&self) -> f64 {
        let mut e = CMatrix::from_elem((1, 1), ONE);
        for a in &self.tensors {
            e = transfer(&e, a);
        }
        e[[0, 0]].re
    }

    fn normalize_center(&mut self) {
        if let Some(c) = self.center {
            let n = self.tensors[c].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if n > 0.0 {
                self.tensors[c].mapv_inplace(|z| z / n);
            }
        }
    }

    fn left_orthonormalize_site(&mut self, i: usize) -> Result<()> {
        let (dl, _, dr) = self.tensors[i].dim();
        let m = reshape(self.tensors[i].clone(), (dl * 2, dr));
        let (q, r) = m.qr()?;
        let k = q.ncols();
        self.tensors[i] = reshape(q, (dl, 2, k));
        let next = &self.tensors[i + 1];
        let (_, _, dr2) = next.dim();
        let nm = reshape(next.clone(), (dr, 2 * dr2));
        self.tensors[i + 1] = reshape(r.dot(&nm), (k, 2, dr2));
        Ok(())
    }

    fn right_orthonormalize_site(&mut self, i: usize) -> Result<()> {
        let (dl, _, dr) = self.tensors[i].dim();
        let m = reshape(self.tensors[i].clone(), (dl, 2 * dr));
        // M = R† Q† from the QR decomposition of M†.
        let (q, r) = dagger(&m.view()).qr()?;
        let k = q.ncols();
        self.tensors[i] = reshape(dagger(&q.view()), (k, 2, dr));
        let prev = &self.tensors[i - 1];
        let (dl0, _, _) = prev.dim();
        let pm = reshape(prev.clone(), (dl0 * 2, dl));
        self.tensors[i - 1] = reshape(pm.dot(&dagger(&r.view())), (dl0, 2, k));
        Ok(())
    }

    /// Brings the state to mixed-canonical form centered on `site` and normalizes it.
    pub fn canonicalize(&mut self, site: usize) -> Result<()> {
        let n = self.tensors.len();
        assert!(site < n);
        let (from_left, from_right) = match self.center {
            Some(c) => (c, c),
            None => (0, n - 1),
        };
        for i in from_left..site {
            self.left_orthonormalize_site(i)?;
        }
        for i in (site + 1..=from_right).rev() {
            self.right_orthonormalize_site(i)?;
        }
        self.center = Some(site);
        self.normalize_center();
        Ok(())
    }

    pub fn right_canonical(&self) -> Result<Self> {
        let mut m = self.clone();
        if m.center != Some(0) {
            m.canonicalize(0)?;
        }
        Ok(m)
    }

    /// Largest deviation of `Σ_s A_s† A_s` from identity over the left-orthonormal sites.
    pub fn left_orthonormality_error(&self) -> f64 {
        let c = self.center.unwrap_or(0);
        let mut worst: f64 = 0.0;
        for a in &self.tensors[..c] {
            let e = transfer(&CMatrix::eye(a.shape()[0]), a);
            let d = &e - &CMatrix::eye(e.nrows());
            worst = worst.max(crate::linalg::frobenius_norm(&d.view()));
        }
        worst
    }

    /// Largest deviation of `Σ_s A_s A_s†` from identity over the right-orthonormal sites.
    pub fn right_orthonormality_error(&self) -> f64 {
        let c = self.center.map(|c| c + 1).unwrap_or(self.tensors.len());
        let mut worst: f64 = 0.0;
        for a in &self.tensors[c..] {
            let mut e = CMatrix::zeros((a.shape()[0], a.shape()[0]));
            for s in 0..2 {
                let m = site_matrix(a, s);
                e += &m.dot(&conj_t(&m));
            }
            let d = &e - &CMatrix::eye(e.nrows());
            worst = worst.max(crate::linalg::frobenius_norm(&d.view()));
        }
        worst
    }

    fn check_contiguous(&self, group: &[usize]) -> Result<()> {
        if group.is_empty() || group.len() > 6 {
            return Err(Error::UnsupportedGroup(format!("group of {} sites", group.len())));
        }
        for w in group.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(Error::UnsupportedGroup(format!("{group:?} is not contiguous")));
            }
        }
        if *group.last().unwrap() >= self.tensors.len() {
            return Err(Error::UnsupportedGroup(format!("{group:?} outside the chain")));
        }
        Ok(())
    }

    /// Reduced density matrix of a contiguous group.
    pub fn rdm(&self, group: &[usize]) -> Result<DensityMatrix> {
        self.check_contiguous(group)?;
        let p = Partition::from_groups(self.n_sites(), vec![group.to_vec()])?;
        Ok(self.rdms(&p)?.swap_remove(0))
    }

    /// Reduced density matrices of every group in one left-to-right pass.
    pub fn rdms(&self, partition: &Partition) -> Result<Vec<DensityMatrix>> {
        if partition.n_qubits() != self.n_sites() {
            return Err(Error::Dimension("partition size differs from the chain".into()));
        }
        let m = self.right_canonical()?;
        let mut e = CMatrix::from_elem((1, 1), ONE);
        let mut site = 0;
        let mut out = Vec::with_capacity(partition.len());
        for g in partition.groups() {
            m.check_contiguous(g)?;
            while site < g[0] {
                e = transfer(&e, &m.tensors[site]);
                site += 1;
            }
            let prods = group_products(&m.tensors[g[0]..=g[g.len() - 1]]);
            let kets: Vec<CMatrix> = prods.iter().map(|p| e.dot(p)).collect();
            let d = prods.len();
            let mut rho = CMatrix::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    rho[[i, j]] = frob_inner(&prods[j], &kets[i]);
                }
            }
            let mut next = CMatrix::zeros((prods[0].ncols(), prods[0].ncols()));
            for (p, k) in prods.iter().zip(&kets) {
                next += &conj_t(&p.view()).dot(k);
            }
            e = next;
            site = g[g.len() - 1] + 1;
            let herm = (&rho + &dagger(&rho.view())).mapv(|z| z * 0.5);
            out.push(DensityMatrix::new(herm, 1e-8)?);
        }
        Ok(out)
    }

    /// Applies `u` to a contiguous group, re-splitting with truncation at `chi_max`.
    pub fn apply_group_unitary(&self, u: &ArrayView2<C64>, group: &[usize]) -> Result<Self> {
        check_unitary(u, 1e-10)?;
        self.check_contiguous(group)?;
        let k = group.len();
        let d = 1usize << k;
        if u.dim() != (d, d) {
            return Err(Error::Dimension(format!("{:?} unitary on a {k}-site group", u.dim())));
        }
        let mut m = self.clone();
        m.canonicalize(group[0])?;
        let first = group[0];
        let dl = m.tensors[first].shape()[0];
        // Merge into (dl, 2^k, dr).
        let mut merged = reshape(m.tensors[first].clone(), (dl * 2, m.tensors[first].shape()[2]));
        for &site in &group[1..] {
            let a = &m.tensors[site];
            let (al, _, ar) = a.dim();
            let am = reshape(a.clone(), (al, 2 * ar));
            let rows = merged.nrows();
            merged = reshape(merged.dot(&am), (rows * 2, ar));
        }
        let dr = merged.ncols();
        let t3 = reshape(merged, (dl, d, dr));
        let mut rotated = Array3::<C64>::zeros((dl, d, dr));
        for a in 0..dl {
            let block = t3.index_axis(Axis(0), a);
            rotated.index_axis_mut(Axis(0), a).assign(&u.dot(&block));
        }
        // Split left to right.
        let mut rest = reshape(rotated, (dl, d * dr));
        let mut weight = 0.0;
        for (t, &site) in group.iter().enumerate() {
            let rl = rest.nrows();
            if t + 1 == k {
                m.tensors[site] = reshape(rest, (rl, 2, dr));
                break;
            }
            let cols = rest.ncols() / 2;
            let mat = reshape(rest, (rl * 2, cols));
            let tr = truncated_svd(&mat, m.chi_max.max(1), SVD_CUTOFF)?;
            weight += tr.weight;
            let keep = tr.s.len();
            m.tensors[site] = reshape(tr.u, (rl, 2, keep));
            rest = Array2::from_diag(&tr.s.mapv(|x| C64::new(x, 0.0))).dot(&tr.vt);
        }
        m.center = Some(group[k - 1]);
        m.normalize_center();
        m.truncation_weight += weight;
        m.last_truncation_weight = weight;
        Ok(m)
    }

    /// Distribution of the number of groups whose outcome in the computational
    /// basis carries label 1.
    pub fn grouped_label_distribution(&self, partition: &Partition, labelers: &[Vec<u8>]) -> Result<Vec<f64>> {
        self.grouped_label_distribution_in_bases(partition, None, labelers)
    }

    /// As [`Mps::grouped_label_distribution`], but each group is measured in the
    /// orthonormal basis given by the columns of `bases[j]`.
    ///
    /// The generating function `g(t) = ⟨ψ| ⊗_j (P_j⁰ + t P_j¹) |ψ⟩` is evaluated at
    /// the (M+1)-th roots of unity and inverted by a discrete Fourier transform.
    pub fn grouped_label_distribution_in_bases(
        &self,
        partition: &Partition,
        bases: Option<&[CMatrix]>,
        labelers: &[Vec<u8>],
    ) -> Result<Vec<f64>> {
        if partition.n_qubits() != self.n_sites() {
            return Err(Error::Dimension("partition size differs from the chain".into()));
        }
        if labelers.len() != partition.len() || bases.is_some_and(|b| b.len() != partition.len()) {
            return Err(Error::Dimension("one labeler and basis per group required".into()));
        }
        let m = self.right_canonical()?;
        // Per group: rotated products split by label.
        let mut plan: Vec<(usize, Vec<CMatrix>, Vec<CMatrix>)> = Vec::with_capacity(partition.len());
        for (j, g) in partition.groups().iter().enumerate() {
            m.check_contiguous(g)?;
            let prods = group_products(&m.tensors[g[0]..=g[g.len() - 1]]);
            let d = prods.len();
            if labelers[j].len() != d {
                return Err(Error::Dimension("labeler must cover every group outcome".into()));
            }
            let rotated: Vec<CMatrix> = match bases {
                None => prods,
                Some(b) => {
                    let v = &b[j];
                    if v.dim() != (d, d) {
                        return Err(Error::Dimension("measurement basis has the wrong size".into()));
                    }
                    (0..d)
                        .map(|l| {
                            let mut q = CMatrix::zeros(prods[0].raw_dim());
                            for (gp, p) in prods.iter().enumerate() {
                                let c = v[[gp, l]].conj();
                                if c != ZERO {
                                    q.scaled_add(c, p);
                                }
                            }
                            q
                        })
                        .collect()
                }
            };
            let (mut zero, mut one) = (Vec::new(), Vec::new());
            for (l, q) in rotated.into_iter().enumerate() {
                if labelers[j][l] == 0 {
                    zero.push(q);
                } else {
                    one.push(q);
                }
            }
            plan.push((g[0], zero, one));
        }
        let n_groups = partition.len();
        let nodes = n_groups + 1;
        let eval = |t: C64| -> C64 {
            let mut e = CMatrix::from_elem((1, 1), ONE);
            let mut site = 0;
            for (j, (start, zero, one)) in plan.iter().enumerate() {
                while site < *start {
                    e = transfer(&e, &m.tensors[site]);
                    site += 1;
                }
                let dr = zero.first().or(one.first()).unwrap().ncols();
                let mut z0 = CMatrix::zeros((dr, dr));
                for q in zero {
                    z0 += &conj_t(&q.view()).dot(&e.dot(q));
                }
                let mut z1 = CMatrix::zeros((dr, dr));
                for q in one {
                    z1 += &conj_t(&q.view()).dot(&e.dot(q));
                }
                z0.scaled_add(t, &z1);
                e = z0;
                site = partition.group(j)[partition.group(j).len() - 1] + 1;
            }
            // Remaining sites are right-orthonormal and contract to the identity.
            crate::linalg::trace(&e.view())
        };
        let mut values = vec![ZERO; nodes];
        for r in 0..=nodes / 2 {
            let t = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * r as f64 / nodes as f64);
            values[r] = eval(t);
            if r > 0 {
                values[nodes - r] = values[r].conj();
            }
        }
        let mut dist = Vec::with_capacity(nodes);
        for mm in 0..nodes {
            let mut acc = ZERO;
            for (r, v) in values.iter().enumerate() {
                acc += v * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * (r * mm) as f64 / nodes as f64);
            }
            acc /= nodes as f64;
            if acc.im.abs() > 1e-6 {
                return Err(Error::NumericalFailure(format!("generating-function coefficient {acc} is not real")));
            }
            dist.push(acc.re.clamp(0.0, 1.0));
        }
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            return Err(Error::NumericalFailure("generating function vanished".into()));
        }
        for d in dist.iter_mut() {
            *d /= total;
        }
        Ok(dist)
    }

    /// Hamming-weight distribution of a computational-basis measurement.
    pub fn hamming_weight_distribution(&self) -> Result<Vec<f64>> {
        let n = self.n_sites();
        let p = Partition::from_groups(n, (0..n).map(|i| vec![i]).collect())?;
        self.grouped_label_distribution(&p, &vec![vec![0, 1]; n])
    }

    /// `⟨ψ|P|ψ⟩` for one Pauli string.
    pub fn expectation_string(&self, p: &PauliString) -> Result<f64> {
        self.expectation(&PauliSum::new(p.n_qubits(), vec![p.clone()])?)
    }

    pub fn expectation(&self, obs: &PauliSum) -> Result<f64> {
        obs.validate()?;
        if obs.n_qubits() != self.n_sites() {
            return Err(Error::Dimension("observable size differs from the chain".into()));
        }
        let m = self.right_canonical()?;
        // Left environments before each site.
        let mut lefts = Vec::with_capacity(m.n_sites());
        let mut e = CMatrix::from_elem((1, 1), ONE);
        for a in &m.tensors {
            lefts.push(e.clone());
            e = transfer(&e, a);
        }
        let mut total = ZERO;
        for t in obs.terms() {
            let support = t.support();
            let (a, b) = match (support.first(), support.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => {
                    total += t.coeff;
                    continue;
                }
            };
            let mut e = lefts[a].clone();
            for s in a..=b {
                e = transfer_op(&e, &m.tensors[s], &t.ops[s].matrix());
            }
            total += crate::linalg::trace(&e.view()) * t.coeff;
        }
        if total.im.abs() > 1e-8 {
            return Err(Error::NonHermitianObservable(total.im));
        }
        Ok(total.re)
    }

    /// Perfect sampling of computational-basis bitstrings.
    pub fn sample<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Result<Vec<Vec<u8>>> {
        let n = self.n_sites();
        let norm = self.norm_sqr();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::NumericalFailure(format!("sampling an MPS with norm² {norm}")));
        }
        let p = Partition::from_groups(n, (0..n).map(|i| vec![i]).collect())?;
        let sampler = GroupSampler::new(self, &p)?;
        Ok((0..shots)
            .map(|_| sampler.shot(&vec![None; n], rng).into_iter().map(|b| b as u8).collect())
            .collect())
    }

    pub fn to_checkpoint(&self) -> MpsCheckpoint {
        MpsCheckpoint {
            format: "qphase-mps".into(),
            version: MPS_CHECKPOINT_VERSION,
            n_sites: self.n_sites(),
            chi_max: self.chi_max,
            center: self.center,
            sites: self
                .tensors
                .iter()
                .map(|a| {
                    let (l, p, r) = a.dim();
                    let data = a.as_standard_layout().iter().flat_map(|z| [z.re, z.im]).collect();
                    SiteTensor { shape: [l, p, r], data }
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &MpsCheckpoint) -> Result<Self> {
        if c.format != "qphase-mps" || c.version != MPS_CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported MPS checkpoint {} v{}", c.format, c.version)));
        }
        if c.sites.len() != c.n_sites {
            return Err(Error::Dimension("site count does not match the header".into()));
        }
        let mut tensors = Vec::with_capacity(c.n_sites);
        for (i, s) in c.sites.iter().enumerate() {
            let [l, p, r] = s.shape;
            if s.data.len() != 2 * l * p * r || s.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dimension(format!("site {i} data does not match shape {:?}", s.shape)));
            }
            let vals: Vec<C64> = s.data.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
            tensors.push(Array3::from_shape_vec((l, p, r), vals).unwrap());
        }
        let mut m = Self::from_tensors(tensors, c.chi_max)?;
        let norm = m.norm_sqr();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::NumericalFailure(format!("checkpoint state has norm² {norm}")));
        }
        if let Some(center) = c.center {
            if center >= m.n_sites() {
                return Err(Error::Dimension("canonical center outside the chain".into()));
            }
            m.center = Some(center);
            if m.left_orthonormality_error() > 1e-8 || m.right_orthonormality_error() > 1e-8 {
                return Err(Error::NumericalFailure("checkpoint tensors are not in the declared canonical form".into()));
            }
        }
        Ok(m)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let c: MpsCheckpoint = serde_json::from_reader(f)?;
        Self::from_checkpoint(&c)
    }
}

pub const MPS_CHECKPOINT_VERSION: u32 = 1;

/// Serialized MPS: row-major `(left, physical, right)` tensors with interleaved
/// real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpsCheckpoint {
    pub format: String,
    pub version: u32,
    pub n_sites: usize,
    pub chi_max: usize,
    pub center: Option<usize>,
    pub sites: Vec<SiteTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteTensor {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

/// Left-to-right conditional sampler over a fixed partition of a
/// right-canonical MPS. Sites outside every group are sampled and discarded.
#[derive(Clone, Debug)]
pub struct GroupSampler {
    /// (group index or None for a skipped site, products per local outcome)
    segments: Vec<(Option<usize>, Vec<CMatrix>)>,
    n_groups: usize,
}

impl GroupSampler {
    pub fn new(mps: &Mps, partition: &Partition) -> Result<Self> {
        if partition.n_qubits() != mps.n_sites() {
            return Err(Error::Dimension("partition size differs from the chain".into()));
        }
        let m = mps.right_canonical()?;
        let mut segments = Vec::new();
        let mut site = 0;
        for (j, g) in partition.groups().iter().enumerate() {
            m.check_contiguous(g)?;
            if g[0] < site {
                return Err(Error::UnsupportedGroup("groups must be ordered along the chain".into()));
            }
            while site < g[0] {
                segments.push((None, group_products(&m.tensors[site..=site])));
                site += 1;
            }
            segments.push((Some(j), group_products(&m.tensors[g[0]..=g[g.len() - 1]])));
            site = g[g.len() - 1] + 1;
        }
        Ok(Self { segments, n_groups: partition.len() })
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// One shot: each group is rotated by its unitary (if any) and measured.
    /// Returns the local outcome index of every group.
    pub fn shot<R: Rng + ?Sized>(&self, unitaries: &[Option<&CMatrix>], rng: &mut R) -> Vec<usize> {
        let mut out = vec![0usize; self.n_groups];
        let mut left = Array1::from_elem(1, ONE);
        for (which, prods) in &self.segments {
            let mut rows: Vec<Array1<C64>> = prods.iter().map(|p| left.dot(p)).collect();
            if let Some(u) = which.and_then(|j| unitaries[j]) {
                let d = rows.len();
                let rotated: Vec<Array1<C64>> = (0..d)
                    .map(|g| {
                        let mut acc = Array1::zeros(rows[0].len());
                        for (gp, r) in rows.iter().enumerate() {
                            let c = u[[g, gp]];
                            if c != ZERO {
                                acc.scaled_add(c, r);
                            }
                        }
                        acc
                    })
                    .collect();
                rows = rotated;
            }
            let probs: Vec<f64> = rows.iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect();
            let total: f64 = probs.iter().sum();
            let mut x = rng.random::<f64>() * total;
            let mut pick = probs.len() - 1;
            for (g, p) in probs.iter().enumerate() {
                if x < *p {
                    pick = g;
                    break;
                }
                x -= p;
            }
            let scale = probs[pick].sqrt();
            left = rows.swap_remove(pick).mapv(|z| z / scale);
            if let Some(j) = which {
                out[*j] = pick;
            }
        }
        out
    }
}
