use std::collections::HashMap;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64, ONE, ZERO};
use crate::pauli::{Pauli, PauliSum};

/// Matrix product operator; site tensors are indexed `(left, out, in, right)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mpo {
    tensors: Vec<Array4<C64>>,
}

/// Longest interaction span accepted by [`mpo_from_pauli_sum`].
pub const MAX_MPO_RANGE: usize = 3;

fn op_entries(p: Pauli) -> [[C64; 2]; 2] {
    let m = p.matrix();
    [[m[[0, 0]], m[[0, 1]]], [m[[1, 0]], m[[1, 1]]]]
}

/// Finite-state-machine MPO for a sum of short-range Pauli strings.
///
/// Bond states are "nothing placed yet", "term finished", and one state per
/// distinct partially placed operator prefix crossing that bond. Coefficients
/// are attached to the last operator of each term.
pub fn mpo_from_pauli_sum(h: &PauliSum) -> Result<Mpo> {
    h.validate()?;
    let n = h.n_qubits();
    if n == 0 {
        return Err(Error::InvalidSystemSize("empty operator".into()));
    }
    let range = h.max_range();
    if range > MAX_MPO_RANGE {
        return Err(Error::UnsupportedRange(range));
    }

    // prefixes[b]: prefix → state index on bond b (bond b sits left of site b).
    let mut prefixes: Vec<HashMap<Vec<Pauli>, usize>> = vec![HashMap::new(); n + 1];
    let mut spans = Vec::with_capacity(h.len());
    for t in h.terms() {
        let support = t.support();
        let (a, b) = match (support.first(), support.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (0, 0),
        };
        for bond in a + 1..=b {
            let prefix = t.ops[a..bond].to_vec();
            let next = 2 + prefixes[bond].len();
            prefixes[bond].entry(prefix).or_insert(next);
        }
        spans.push((a, b));
    }
    let dim = |bond: usize| -> usize {
        if bond == 0 || bond == n {
            1
        } else {
            2 + prefixes[bond].len()
        }
    };
    // Start/done indices on a given bond.
    let start = |bond: usize| -> Option<usize> { (bond < n).then_some(0) };
    let done = |bond: usize| -> Option<usize> {
        if bond == n {
            Some(0)
        } else if bond == 0 {
            None
        } else {
            Some(1)
        }
    };

    let mut tensors: Vec<Array4<C64>> = (0..n).map(|s| Array4::zeros((dim(s), 2, 2, dim(s + 1)))).collect();
    let put = |w: &mut Array4<C64>, l: usize, r: usize, op: [[C64; 2]; 2], c: C64, add: bool| {
        for i in 0..2 {
            for j in 0..2 {
                if add {
                    w[[l, i, j, r]] += op[i][j] * c;
                } else {
                    w[[l, i, j, r]] = op[i][j] * c;
                }
            }
        }
    };
    let id = op_entries(Pauli::I);
    for s in 0..n {
        let w = &mut tensors[s];
        if let (Some(l), Some(r)) = (start(s), start(s + 1)) {
            put(w, l, r, id, ONE, false);
        }
        if let (Some(l), Some(r)) = (done(s), done(s + 1)) {
            put(w, l, r, id, ONE, false);
        }
    }
    for (t, &(a, b)) in h.terms().iter().zip(&spans) {
        let c = C64::new(t.coeff, 0.0);
        if a == b {
            let l = start(a).expect("a site always has a start state on its left");
            let r = done(a + 1).expect("a site always has a done state on its right");
            put(&mut tensors[a], l, r, op_entries(t.ops[a]), c, true);
            continue;
        }
        for s in a..=b {
            let l = if s == a { start(s).unwrap() } else { prefixes[s][&t.ops[a..s]] };
            let op = op_entries(t.ops[s]);
            if s == b {
                put(&mut tensors[s], l, done(s + 1).unwrap(), op, c, true);
            } else {
                let r = prefixes[s + 1][&t.ops[a..=s]];
                put(&mut tensors[s], l, r, op, ONE, false);
            }
        }
    }
    Ok(Mpo { tensors })
}

impl Mpo {
    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensors(&self) -> &[Array4<C64>] {
        &self.tensors
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors.iter().skip(1).map(|w| w.shape()[0]).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn is_real(&self) -> bool {
        self.tensors.iter().all(|w| w.iter().all(|z| z.im == 0.0))
    }

    pub fn real_tensors(&self) -> Vec<Array4<f64>> {
        self.tensors.iter().map(|w| w.mapv(|z| z.re)).collect()
    }

    /// Full matrix, for small chains only.
    pub fn dense(&self) -> CMatrix {
        // acc[w] is the operator accumulated over the sites seen so far.
        let mut acc: Vec<CMatrix> = vec![ndarray::array![[ONE]]];
        for w in &self.tensors {
            let (dl, _, _, dr) = w.dim();
            let d = acc[0].nrows() * 2;
            let mut next = vec![CMatrix::zeros((d, d)); dr];
            for l in 0..dl {
                for r in 0..dr {
                    let local = Array2::from_shape_fn((2, 2), |(i, j)| w[[l, i, j, r]]);
                    if local.iter().all(|z| *z == ZERO) {
                        continue;
                    }
                    next[r] += &crate::linalg::kron(&acc[l], &local);
                }
            }
            acc = next;
        }
        acc.swap_remove(0)
    }
}
