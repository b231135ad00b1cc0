use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh_hermitian, hermiticity_deviation, trace, CMatrix, C64};

/// Dense density matrix on a small group of qubits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    k: usize,
    data: CMatrix,
}

impl DensityMatrix {
    /// Wraps `data`, checking shape, Hermiticity and unit trace within `tol`.
    pub fn new(data: CMatrix, tol: f64) -> Result<Self> {
        let dim = data.nrows();
        if data.ncols() != dim || !dim.is_power_of_two() {
            return Err(Error::Dimension(format!("density matrix of shape {:?}", data.dim())));
        }
        let herm = hermiticity_deviation(&data.view());
        if herm > tol {
            return Err(Error::NonHermitianObservable(herm));
        }
        let tr = trace(&data.view());
        if (tr - C64::new(1.0, 0.0)).norm() > tol {
            return Err(Error::NumericalFailure(format!("density matrix trace {tr}")));
        }
        Ok(Self { k: dim.trailing_zeros() as usize, data })
    }

    /// No validation; used for intermediate sums that are normalized later.
    pub(crate) fn from_raw(data: CMatrix) -> Self {
        let k = data.nrows().trailing_zeros() as usize;
        Self { k, data }
    }

    pub fn pure(amplitudes: &[C64]) -> Result<Self> {
        let dim = amplitudes.len();
        let data = CMatrix::from_shape_fn((dim, dim), |(i, j)| amplitudes[i] * amplitudes[j].conj());
        Self::new(data, 1e-10)
    }

    pub fn maximally_mixed(k: usize) -> Self {
        let dim = 1usize << k;
        Self { k, data: CMatrix::eye(dim).mapv(|z| z / dim as f64) }
    }

    pub fn n_qubits(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, C64> {
        self.data.view()
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    pub fn trace(&self) -> C64 {
        trace(&self.data.view())
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(eigh_hermitian(&self.data.view())?.0.to_vec())
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// `Tr(ρ A)`, real part.
    pub fn expectation(&self, a: &ArrayView2<C64>) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for ((i, j), v) in self.data.indexed_iter() {
            acc += v * a[[j, i]];
        }
        acc.re
    }

    /// Global depolarizing channel `(1−p) ρ + p I/d`.
    pub fn depolarize(&self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        let mixed = Self::maximally_mixed(self.k);
        Ok(Self { k: self.k, data: self.data.mapv(|z| z * (1.0 - p)) + mixed.data.mapv(|z| z * p) })
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        crate::linalg::frobenius_norm(&(&self.data - &other.data).view())
    }

    pub fn tensor_power(&self, copies: usize) -> Self {
        Self { k: self.k * copies, data: crate::linalg::tensor_power(&self.data, copies) }
    }

    /// Convex combination `Σ w_i ρ_i`.
    pub fn weighted_sum(items: &[(&DensityMatrix, f64)]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyEstimate)?;
        let mut acc = CMatrix::zeros(first.0.data.raw_dim());
        for (rho, w) in items {
            if rho.k != first.0.k {
                return Err(Error::Dimension("mixing density matrices of different size".into()));
            }
            acc.scaled_add(C64::new(*w, 0.0), &rho.data);
        }
        Ok(Self::from_raw(acc))
    }
}
