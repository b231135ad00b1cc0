//! Matrix product states and operators for chains beyond the statevector cap.

mod dmrg;
mod mpo;
mod mps;

pub use dmrg::{dmrg_ground_state, DmrgOptions, DmrgResult};
pub use mpo::{mpo_from_pauli_sum, Mpo, MAX_MPO_RANGE};
pub use mps::{Mps, MpsCheckpoint, GroupSampler, MPS_CHECKPOINT_VERSION};

use ndarray::{s, Array1, Array2, LinalgScalar, ScalarOperand};
use ndarray_linalg::{Lapack, Scalar, SVDDC, JobSvd};

use crate::error::{Error, Result};

/// Scalars the tensor code is generic over (`f64` and `Complex64`).
pub trait Field: Scalar<Real = f64> + Lapack + LinalgScalar + ScalarOperand {}
impl<T: Scalar<Real = f64> + Lapack + LinalgScalar + ScalarOperand> Field for T {}

/// Relative singular-value floor applied on every split.
pub const SVD_CUTOFF: f64 = 1e-12;

pub(crate) struct Truncated<T> {
    pub u: Array2<T>,
    pub s: Array1<f64>,
    pub vt: Array2<T>,
    /// Discarded weight relative to the full squared norm.
    pub weight: f64,
}

/// SVD keeping at most `chi` values and none below `cutoff · s_max`.
pub(crate) fn truncated_svd<T: Field>(m: &Array2<T>, chi: usize, cutoff: f64) -> Result<Truncated<T>> {
    let (u, s, vt) = m.svddc(JobSvd::Some)?;
    let u = u.ok_or_else(|| Error::NumericalFailure("SVD returned no U".into()))?;
    let vt = vt.ok_or_else(|| Error::NumericalFailure("SVD returned no Vt".into()))?;
    let total: f64 = s.iter().map(|x| x * x).sum();
    let smax = s.first().copied().unwrap_or(0.0);
    let mut keep = s.iter().take_while(|&&x| x > cutoff * smax).count().min(chi).max(1);
    keep = keep.min(s.len());
    let kept: f64 = s.iter().take(keep).map(|x| x * x).sum();
    let weight = if total > 0.0 { (1.0 - kept / total).max(0.0) } else { 0.0 };
    Ok(Truncated {
        u: u.slice(s![.., ..keep]).as_standard_layout().into_owned(),
        s: s.slice(s![..keep]).to_owned(),
        vt: vt.slice(s![..keep, ..]).as_standard_layout().into_owned(),
        weight,
    })
}

/// Row-major reshape regardless of the memory order of `a`.
pub(crate) fn reshape<T: Clone, D: ndarray::Dimension, E: ndarray::IntoDimension>(
    a: ndarray::Array<T, D>,
    shape: E,
) -> ndarray::Array<T, E::Dim> {
    let a = if a.is_standard_layout() { a } else { a.as_standard_layout().into_owned() };
    a.into_shape(shape).expect("reshape preserves the element count")
}
