//! Small dense linear-algebra helpers shared by every backend.

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};
use ndarray_linalg::{Eigh, QR, UPLO};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::eye(dim)
}

pub fn dagger(m: &ArrayView2<C64>) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    ndarray::linalg::kron(a, b)
}

/// `m ⊗ m ⊗ … ⊗ m` with `copies` factors.
pub fn tensor_power(m: &CMatrix, copies: usize) -> CMatrix {
    assert!(copies >= 1);
    let mut out = m.clone();
    for _ in 1..copies {
        out = kron(&out, m);
    }
    out
}

pub fn frobenius_norm(m: &ArrayView2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(m: &ArrayView2<C64>) -> C64 {
    m.diag().sum()
}

/// Frobenius norm of `m − m†`.
pub fn hermiticity_deviation(m: &ArrayView2<C64>) -> f64 {
    let n = m.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (m[[i, j]] - m[[j, i]].conj()).norm_sqr();
        }
    }
    acc.sqrt()
}

/// Frobenius norm of `u†u − I`.
pub fn unitarity_deviation(u: &ArrayView2<C64>) -> f64 {
    if u.nrows() != u.ncols() {
        return f64::INFINITY;
    }
    let prod = dagger(u).dot(u);
    let mut acc = 0.0;
    for ((i, j), z) in prod.indexed_iter() {
        let target = if i == j { ONE } else { ZERO };
        acc += (z - target).norm_sqr();
    }
    acc.sqrt()
}

pub fn check_unitary(u: &ArrayView2<C64>, tol: f64) -> Result<()> {
    let dev = unitarity_deviation(u);
    if dev > tol {
        return Err(Error::InvalidUnitary(dev));
    }
    Ok(())
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending,
/// eigenvectors in the columns. The input is symmetrized first.
pub fn eigh_hermitian(m: &ArrayView2<C64>) -> Result<(Array1<f64>, CMatrix)> {
    let herm = (m.to_owned() + dagger(m)).mapv(|z| z * 0.5);
    // Column-major input: for row-major complex input ndarray-linalg returns conjugated vectors.
    let herm_f = Array2::from_shape_vec(herm.raw_dim().f(), herm.t().iter().copied().collect()).expect("square matrix");
    let (vals, vecs) = herm_f.eigh(UPLO::Lower)?;
    Ok((vals, vecs))
}

/// `exp(-i h)` for Hermitian `h`.
pub fn expm_i_hermitian(h: &ArrayView2<C64>) -> Result<CMatrix> {
    let (vals, vecs) = eigh_hermitian(h)?;
    let phases: Array1<C64> = vals.mapv(|v| C64::from_polar(1.0, -v));
    let scaled = &vecs * &phases.view().insert_axis(ndarray::Axis(0));
    Ok(scaled.dot(&dagger(&vecs.view())))
}

/// Haar-random unitary from the QR decomposition of a complex Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_shape_fn((dim, dim), |_| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) / std::f64::consts::SQRT_2
    });
    let (q, r) = g.qr().expect("QR of a Ginibre matrix");
    let mut q = q;
    for j in 0..dim {
        let d = r[[j, j]];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        q.column_mut(j).mapv_inplace(|z| z * phase);
    }
    q
}

/// Random unit vector with i.i.d. complex Gaussian entries.
pub fn random_state_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Array1<C64> {
    let v = Array1::from_shape_fn(dim, |_| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    });
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv(|z| z / norm)
}

/// Single-qubit Pauli matrices.
pub fn pauli_matrix(symbol: char) -> CMatrix {
    let z = ZERO;
    let o = ONE;
    match symbol {
        'I' => ndarray::array![[o, z], [z, o]],
        'X' => ndarray::array![[z, o], [o, z]],
        'Y' => ndarray::array![[z, -I], [I, z]],
        'Z' => ndarray::array![[o, z], [z, -o]],
        other => panic!("unknown Pauli symbol {other}"),
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn eigh_returns_true_eigenvectors() {
        let mut rng = crate::rng::RngStream::new(1).rng();
        let u = haar_unitary(4, &mut rng);
        let lam = Array2::from_diag(&Array1::from_iter((1..=4).map(|x| C64::new(x as f64, 0.0))));
        let a = u.dot(&lam).dot(&dagger(&u.view()));
        let (vals, vecs) = eigh_hermitian(&a.view()).unwrap();
        for l in 0..4 {
            let v = vecs.column(l).to_owned();
            let r = a.dot(&v) - v.mapv(|z| z * vals[l]);
            assert!(r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() < 1e-12);
        }
    }

    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for dim in [2, 4, 8] {
            let u = haar_unitary(dim, &mut rng);
            assert!(unitarity_deviation(&u.view()) < 1e-12);
        }
    }

    #[test]
    fn expm_of_pauli_rotation() {
        // exp(-i θ X) = cos θ I − i sin θ X
        let theta = 0.3;
        let h = pauli_matrix('X').mapv(|z| z * theta);
        let u = expm_i_hermitian(&h.view()).unwrap();
        assert!((u[[0, 0]] - C64::new(theta.cos(), 0.0)).norm() < 1e-14);
        assert!((u[[0, 1]] - C64::new(0.0, -theta.sin())).norm() < 1e-14);
    }

    #[test]
    fn tensor_power_dimension() {
        let m = pauli_matrix('Z');
        let p = tensor_power(&m, 3);
        assert_eq!(p.dim(), (8, 8));
        assert_eq!(p[[7, 7]], C64::new(-1.0, 0.0));
    }
}
