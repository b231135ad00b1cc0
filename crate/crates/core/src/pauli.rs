//! Pauli strings, Pauli sums and the cluster-Ising model.
//!
//! Sites are 0-based in code. Site 0 is the most significant bit of a
//! computational-basis index.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64, I, ONE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn matrix(self) -> CMatrix {
        crate::linalg::pauli_matrix(self.as_char())
    }

    fn has_x(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    fn has_z(self) -> bool {
        matches!(self, Pauli::Z | Pauli::Y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

/// Real multiple of a tensor product of single-qubit Paulis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliString {
    pub coeff: f64,
    pub ops: Vec<Pauli>,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        Self { coeff: 1.0, ops: vec![Pauli::I; n] }
    }

    /// String with the given single-site operators placed on an identity background.
    pub fn from_sites(n: usize, coeff: f64, sites: &[(usize, Pauli)]) -> Result<Self> {
        let mut ops = vec![Pauli::I; n];
        for &(site, p) in sites {
            if site >= n {
                return Err(Error::InvalidOperator(format!("site {site} outside chain of {n}")));
            }
            if ops[site] != Pauli::I {
                return Err(Error::InvalidOperator(format!("site {site} set twice")));
            }
            ops[site] = p;
        }
        let s = Self { coeff, ops };
        s.validate()?;
        Ok(s)
    }

    pub fn parse(label: &str, coeff: f64) -> Result<Self> {
        let ops = label
            .chars()
            .map(|c| Pauli::from_char(c).ok_or_else(|| Error::InvalidOperator(format!("bad symbol {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let s = Self { coeff, ops };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.coeff.is_finite() {
            return Err(Error::InvalidOperator(format!("non-finite coefficient {}", self.coeff)));
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.ops.len()
    }

    pub fn support(&self) -> Vec<usize> {
        self.ops.iter().enumerate().filter(|(_, p)| **p != Pauli::I).map(|(i, _)| i).collect()
    }

    pub fn weight(&self) -> usize {
        self.ops.iter().filter(|p| **p != Pauli::I).count()
    }

    pub fn label(&self) -> String {
        self.ops.iter().map(|p| p.as_char()).collect()
    }

    /// Bit masks (x, z) with site 0 in the most significant position, plus the
    /// number of Y factors. Only defined for at most 64 sites.
    pub fn masks(&self) -> (u64, u64, usize) {
        assert!(self.ops.len() <= 64, "mask form needs at most 64 sites");
        let n = self.ops.len();
        let (mut x, mut z, mut ny) = (0u64, 0u64, 0usize);
        for (i, p) in self.ops.iter().enumerate() {
            let bit = 1u64 << (n - 1 - i);
            if p.has_x() {
                x |= bit;
            }
            if p.has_z() {
                z |= bit;
            }
            if *p == Pauli::Y {
                ny += 1;
            }
        }
        (x, z, ny)
    }

    /// Whether the string commutes with the global spin flip ∏ X.
    pub fn commutes_with_x_parity(&self) -> bool {
        self.ops.iter().filter(|p| p.has_z()).count() % 2 == 0
    }

    pub fn dense(&self) -> CMatrix {
        let n = self.ops.len();
        let dim = 1usize << n;
        let (x, z, ny) = self.masks();
        let yphase = I.powu(ny as u32);
        let mut m = CMatrix::zeros((dim, dim));
        for b in 0..dim {
            let sign = if (b as u64 & z).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            m[[b ^ x as usize, b]] = yphase * sign * self.coeff;
        }
        m
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}·{}", self.coeff, self.label())
    }
}

/// Sum of Pauli strings with distinct operator content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliSum {
    n: usize,
    terms: Vec<PauliString>,
}

/// Precomputed action of one term on a statevector.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MaskedTerm {
    pub x: usize,
    pub z: usize,
    pub c: C64,
}

impl PauliSum {
    /// Merges duplicate operator strings, keeping first-appearance order and
    /// dropping terms whose merged coefficient is exactly zero.
    pub fn new(n: usize, terms: Vec<PauliString>) -> Result<Self> {
        let mut order: Vec<Vec<Pauli>> = Vec::new();
        let mut acc: BTreeMap<Vec<Pauli>, f64> = BTreeMap::new();
        for t in terms {
            t.validate()?;
            if t.ops.len() != n {
                return Err(Error::Dimension(format!("term on {} sites in a sum over {n}", t.ops.len())));
            }
            match acc.get_mut(&t.ops) {
                Some(c) => *c += t.coeff,
                None => {
                    order.push(t.ops.clone());
                    acc.insert(t.ops, t.coeff);
                }
            }
        }
        let terms = order
            .into_iter()
            .filter_map(|ops| {
                let coeff = acc[&ops];
                (coeff != 0.0).then_some(PauliString { coeff, ops })
            })
            .collect();
        Ok(Self { n, terms })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            t.validate()?;
        }
        Ok(())
    }

    pub fn commutes_with_x_parity(&self) -> bool {
        self.terms.iter().all(|t| t.commutes_with_x_parity())
    }

    /// Largest distance between the first and last non-identity site of any term.
    pub fn max_range(&self) -> usize {
        self.terms
            .iter()
            .map(|t| {
                let s = t.support();
                match (s.first(), s.last()) {
                    (Some(a), Some(b)) => b - a + 1,
                    _ => 0,
                }
            })
            .max()
            .unwrap_or(0)
    }

    pub fn dense(&self) -> CMatrix {
        let dim = 1usize << self.n;
        let mut m = CMatrix::zeros((dim, dim));
        for t in &self.terms {
            m += &t.dense();
        }
        m
    }

    pub(crate) fn masked_terms(&self) -> Vec<MaskedTerm> {
        self.terms
            .iter()
            .map(|t| {
                let (x, z, ny) = t.masks();
                MaskedTerm { x: x as usize, z: z as usize, c: I.powu(ny as u32) * t.coeff }
            })
            .collect()
    }

    /// Whether every term is real in the computational basis (even number of Y).
    pub fn is_real(&self) -> bool {
        self.terms.iter().all(|t| t.ops.iter().filter(|p| **p == Pauli::Y).count() % 2 == 0)
    }
}

/// `out = Σ_t c_t P_t ψ` for amplitudes indexed with site 0 as the top bit.
pub(crate) fn apply_masked<T>(terms: &[MaskedTerm], psi: &[T], out: &mut [T])
where
    T: Copy + std::ops::AddAssign + std::ops::Mul<Output = T> + std::ops::Neg<Output = T> + Default + FromC64,
{
    for o in out.iter_mut() {
        *o = T::default();
    }
    for t in terms {
        let c = T::from_c64(t.c);
        for (b, &amp) in psi.iter().enumerate() {
            let v = c * amp;
            if (b & t.z).count_ones() & 1 == 1 {
                out[b ^ t.x] += -v;
            } else {
                out[b ^ t.x] += v;
            }
        }
    }
}

pub(crate) trait FromC64 {
    fn from_c64(c: C64) -> Self;
}

impl FromC64 for C64 {
    fn from_c64(c: C64) -> Self {
        c
    }
}

impl FromC64 for f64 {
    fn from_c64(c: C64) -> Self {
        debug_assert!(c.im == 0.0);
        c.re
    }
}

/// `H = Σ_i (X_i − J1 Z_i Z_{i+1} − J2 Z_{i−1} X_i Z_{i+1})`.
///
/// With open boundaries, terms reaching past either end are dropped; with
/// periodic boundaries indices wrap. Zero-coefficient terms are omitted.
pub fn build_cluster_ising(l: usize, j1: f64, j2: f64, boundary: Boundary) -> Result<PauliSum> {
    if l < 3 {
        return Err(Error::InvalidSystemSize(format!("cluster-Ising chain needs L >= 3, got {l}")));
    }
    let mut terms = Vec::new();
    for i in 0..l {
        terms.push(PauliString::from_sites(l, 1.0, &[(i, Pauli::X)])?);
    }
    if j1 != 0.0 {
        for i in 0..l {
            let next = i + 1;
            if next < l {
                terms.push(PauliString::from_sites(l, -j1, &[(i, Pauli::Z), (next, Pauli::Z)])?);
            } else if boundary == Boundary::Periodic {
                terms.push(PauliString::from_sites(l, -j1, &[(i, Pauli::Z), (0, Pauli::Z)])?);
            }
        }
    }
    if j2 != 0.0 {
        for i in 0..l {
            let inside = i >= 1 && i + 1 < l;
            if inside || boundary == Boundary::Periodic {
                let prev = (i + l - 1) % l;
                let next = (i + 1) % l;
                terms.push(PauliString::from_sites(
                    l,
                    -j2,
                    &[(prev, Pauli::Z), (i, Pauli::X), (next, Pauli::Z)],
                )?);
            }
        }
    }
    PauliSum::new(l, terms)
}

/// `(1/L) Σ_i Z_i`.
pub fn o_fm(l: usize) -> PauliSum {
    let w = 1.0 / l as f64;
    let terms = (0..l).map(|i| PauliString::from_sites(l, w, &[(i, Pauli::Z)]).unwrap()).collect();
    PauliSum::new(l, terms).unwrap()
}

/// `Z_1 X_2 X_4 … X_{L−1} Z_L` in 1-based sites: X on every even interior site.
pub fn o_spt(l: usize) -> Result<PauliString> {
    if l < 3 {
        return Err(Error::InvalidSystemSize(format!("string order parameter needs L >= 3, got {l}")));
    }
    let mut sites = vec![(0, Pauli::Z), (l - 1, Pauli::Z)];
    // 1-based even sites 2, 4, … are 0-based odd sites.
    let mut s = 1;
    while s < l - 1 {
        sites.push((s, Pauli::X));
        s += 2;
    }
    PauliString::from_sites(l, 1.0, &sites)
}

/// `S_ab = Z_a X_{a+1} X_{a+3} … X_{b−1} Z_b` (0-based a < b, b − a even).
pub fn string_operator(l: usize, a: usize, b: usize) -> Result<PauliString> {
    if a >= b || b >= l || (b - a) % 2 != 0 {
        return Err(Error::InvalidOperator(format!("string operator needs a < b < L with b-a even, got ({a}, {b})")));
    }
    let mut sites = vec![(a, Pauli::Z), (b, Pauli::Z)];
    let mut s = a + 1;
    while s < b {
        sites.push((s, Pauli::X));
        s += 2;
    }
    PauliString::from_sites(l, 1.0, &sites)
}

/// Dense matrix assembled from explicit Kronecker products of 2×2 factors.
pub fn kron_dense(p: &PauliString) -> CMatrix {
    let mut m = ndarray::array![[ONE]];
    for op in &p.ops {
        m = crate::linalg::kron(&m, &op.matrix());
    }
    m.mapv(|z| z * p.coeff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_norm;

    #[test]
    fn term_counts() {
        assert_eq!(build_cluster_ising(4, 0.0, 0.0, Boundary::Open).unwrap().len(), 4);
        assert_eq!(build_cluster_ising(4, 1.0, 0.0, Boundary::Open).unwrap().len(), 7);
        assert_eq!(build_cluster_ising(4, 1.0, 1.0, Boundary::Open).unwrap().len(), 9);
        assert_eq!(build_cluster_ising(4, 1.0, 1.0, Boundary::Periodic).unwrap().len(), 12);
    }

    #[test]
    fn too_short_chain() {
        assert!(matches!(build_cluster_ising(2, 1.0, 1.0, Boundary::Open), Err(Error::InvalidSystemSize(_))));
    }

    #[test]
    fn dense_matches_kronecker_products() {
        for s in ["XYZI", "YYIZ", "ZXZX", "IIYI"] {
            let p = PauliString::parse(s, -0.7).unwrap();
            let d = p.dense() - kron_dense(&p);
            assert!(frobenius_norm(&d.view()) < 1e-14, "{s}");
        }
    }

    #[test]
    fn merging() {
        let a = PauliString::parse("XZ", 1.0).unwrap();
        let b = PauliString::parse("XZ", 0.5).unwrap();
        let c = PauliString::parse("ZZ", 1.0).unwrap();
        let d = PauliString::parse("ZZ", -1.0).unwrap();
        let s = PauliSum::new(2, vec![a, c, b, d]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.terms()[0].coeff, 1.5);
    }

    #[test]
    fn order_parameters() {
        assert_eq!(o_spt(5).unwrap().label(), "ZXIXZ");
        assert_eq!(o_spt(15).unwrap().label(), "ZXIXIXIXIXIXIXZ");
        assert_eq!(string_operator(7, 1, 5).unwrap().label(), "IZXIXZI");
        assert!(string_operator(7, 1, 4).is_err());
        assert_eq!(o_fm(3).len(), 3);
    }

    #[test]
    fn cluster_ising_respects_x_parity() {
        assert!(build_cluster_ising(6, 0.3, 1.1, Boundary::Open).unwrap().commutes_with_x_parity());
        assert!(build_cluster_ising(5, 0.3, 1.1, Boundary::Periodic).unwrap().commutes_with_x_parity());
    }

    #[test]
    fn non_finite_coefficient_rejected() {
        assert!(PauliString::parse("XX", f64::NAN).is_err());
    }
}
