//! Restarted Lanczos for the lowest eigenpair of a Hermitian operator given
//! only as a matrix-vector product.

use ndarray::Array2;
use ndarray_linalg::{Eigh, Scalar, UPLO};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LanczosOptions {
    /// Upper bound on the Krylov dimension per restart cycle.
    pub max_krylov: usize,
    pub max_restarts: usize,
    /// Target residual ‖Hψ − Eψ‖.
    pub tol: f64,
    /// Ritz values are recomputed every this many steps.
    pub check_every: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { max_krylov: 200, max_restarts: 50, tol: 1e-9, check_every: 5 }
    }
}

#[derive(Clone, Debug)]
pub struct Eigenpair<T> {
    pub value: f64,
    pub vector: Vec<T>,
    pub residual: f64,
    pub matvecs: usize,
}

pub(crate) fn dot<T: Scalar<Real = f64>>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + x.conj() * *y)
}

pub(crate) fn norm<T: Scalar<Real = f64>>(a: &[T]) -> f64 {
    a.iter().map(|x| x.square()).sum::<f64>().sqrt()
}

fn axpy<T: Scalar<Real = f64>>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

fn scale<T: Scalar<Real = f64>>(x: &mut [T], s: f64) {
    for xi in x.iter_mut() {
        *xi = xi.mul_real(s);
    }
}

/// Lowest eigenvalues/vectors of the symmetric tridiagonal matrix (alpha, beta).
fn tridiagonal_lowest(alpha: &[f64], beta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = alpha.len();
    let mut t = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        t[[i, i]] = alpha[i];
        if i + 1 < m {
            t[[i, i + 1]] = beta[i];
            t[[i + 1, i]] = beta[i];
        }
    }
    let (vals, vecs) = t.eigh(UPLO::Lower)?;
    Ok((vals[0], vecs.column(0).to_vec()))
}

/// Lowest eigenpair of `matvec` starting from `start`.
///
/// Every new Krylov vector is orthogonalized twice against the whole basis.
/// When the estimated residual drops below `tol` the Ritz vector is formed
/// and its true residual checked; otherwise the cycle restarts from the Ritz
/// vector once the Krylov space is full.
pub fn lowest_eigenpair<T, F>(matvec: F, start: Vec<T>, opts: &LanczosOptions) -> Result<Eigenpair<T>>
where
    T: Scalar<Real = f64>,
    F: Fn(&[T], &mut [T]),
{
    let (pair, converged) = lowest_eigenpair_best_effort(matvec, start, opts)?;
    if converged {
        Ok(pair)
    } else {
        Err(Error::ConvergenceFailure { iterations: pair.matvecs, residual: pair.residual })
    }
}

/// Like [`lowest_eigenpair`] but returns the best pair found even without
/// convergence, together with a convergence flag.
pub fn lowest_eigenpair_best_effort<T, F>(
    matvec: F,
    start: Vec<T>,
    opts: &LanczosOptions,
) -> Result<(Eigenpair<T>, bool)>
where
    T: Scalar<Real = f64>,
    F: Fn(&[T], &mut [T]),
{
    let dim = start.len();
    let mut v0 = start;
    let n0 = norm(&v0);
    if n0 == 0.0 || !n0.is_finite() {
        return Err(Error::NumericalFailure("Lanczos start vector has zero norm".into()));
    }
    scale(&mut v0, 1.0 / n0);
    let kmax = opts.max_krylov.min(dim).max(1);
    let mut matvecs = 0usize;
    let mut best: Option<Eigenpair<T>> = None;

    for _restart in 0..=opts.max_restarts {
        let mut basis: Vec<Vec<T>> = vec![v0.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![T::zero(); dim];
        let mut ritz: Vec<f64>;
        loop {
            let j = basis.len() - 1;
            matvec(&basis[j], &mut w);
            matvecs += 1;
            let a = dot(&basis[j], &w).re();
            alpha.push(a);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    axpy(-c, b, &mut w);
                }
            }
            let bnorm = norm(&w);
            let m = alpha.len();
            let full = m >= kmax;
            let exhausted = bnorm <= 1e-13 * a.abs().max(1.0);
            if full || exhausted || m % opts.check_every == 0 {
                let (_, y) = tridiagonal_lowest(&alpha, &beta)?;
                let est = bnorm * y[m - 1].abs();
                let converged = est < 0.1 * opts.tol;
                ritz = y;
                if converged || full || exhausted {
                    break;
                }
            }
            beta.push(bnorm);
            scale(&mut w, 1.0 / bnorm);
            basis.push(std::mem::replace(&mut w, vec![T::zero(); dim]));
        }
        let y = ritz;
        let mut psi = vec![T::zero(); dim];
        for (b, &c) in basis.iter().zip(&y) {
            axpy(T::from_real(c), b, &mut psi);
        }
        let n = norm(&psi);
        scale(&mut psi, 1.0 / n);
        let mut hpsi = vec![T::zero(); dim];
        matvec(&psi, &mut hpsi);
        matvecs += 1;
        let energy = dot(&psi, &hpsi).re();
        axpy(T::from_real(-energy), &psi, &mut hpsi);
        let residual = norm(&hpsi);
        let better = best.as_ref().is_none_or(|b| residual < b.residual);
        if better {
            best = Some(Eigenpair { value: energy, vector: psi.clone(), residual, matvecs });
        }
        if residual <= opts.tol {
            let mut b = best.unwrap();
            b.matvecs = matvecs;
            return Ok((b, true));
        }
        v0 = psi;
    }
    let mut b = best.unwrap();
    b.matvecs = matvecs;
    Ok((b, false))
}
