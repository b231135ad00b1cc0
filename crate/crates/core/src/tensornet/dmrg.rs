//! Two-site finite DMRG.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reshape, truncated_svd, Field, Mpo, Mps, SVD_CUTOFF};
use crate::error::{Error, Result};
use crate::lanczos::{lowest_eigenpair_best_effort, LanczosOptions};
use crate::linalg::C64;
use crate::rng::RngStream;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DmrgOptions {
    pub chi_max: usize,
    /// Each sweep is one left-to-right and one right-to-left pass.
    pub max_sweeps: usize,
    /// Absolute energy change per sweep below which the run stops.
    pub tol: f64,
    /// Bond cap of the first sweep; doubled every sweep up to `chi_max`.
    pub initial_chi: usize,
    /// Krylov size of the local eigensolver.
    pub local_krylov: usize,
    pub seed: u64,
}

impl Default for DmrgOptions {
    fn default() -> Self {
        Self { chi_max: 200, max_sweeps: 20, tol: 1e-9, initial_chi: 16, local_krylov: 24, seed: 0x5eed }
    }
}

#[derive(Clone, Debug)]
pub struct DmrgResult {
    pub mps: Mps,
    pub energy: f64,
    /// Energy after each full sweep.
    pub sweep_energies: Vec<f64>,
    /// Largest discarded weight of any split in the final sweep.
    pub max_truncation_weight: f64,
    pub converged: bool,
}

/// Environment blocks: one bond-by-bond matrix per MPO bond state, `[bra, ket]`.
type Env<T> = Vec<Array2<T>>;

struct Sweeper<'a, T: Field> {
    w: &'a [Array4<T>],
    a: Vec<Array3<T>>,
    left: Vec<Option<Env<T>>>,
    right: Vec<Option<Env<T>>>,
}

fn site<T: Field>(a: &Array3<T>, s: usize) -> ArrayView2<'_, T> {
    a.index_axis(Axis(1), s)
}

fn conj_t<T: Field>(m: &ArrayView2<T>) -> Array2<T> {
    m.t().mapv(|z| z.conj())
}

fn extend_left<T: Field>(env: &Env<T>, a: &Array3<T>, w: &Array4<T>) -> Env<T> {
    let (wl, _, _, wr) = w.dim();
    let dr = a.shape()[2];
    let mut x: Vec<Vec<Option<Array2<T>>>> = vec![vec![None; 2]; wl];
    let mut out = vec![Array2::<T>::zeros((dr, dr)); wr];
    for r in 0..wr {
        for s in 0..2 {
            let mut y: Option<Array2<T>> = None;
            for l in 0..wl {
                for sp in 0..2 {
                    let c = w[[l, s, sp, r]];
                    if c == T::zero() {
                        continue;
                    }
                    let xv = x[l][sp].get_or_insert_with(|| env[l].dot(&site(a, sp)));
                    match y.as_mut() {
                        Some(acc) => acc.scaled_add(c, xv),
                        None => y = Some(xv.mapv(|v| v * c)),
                    }
                }
            }
            if let Some(y) = y {
                out[r] = &out[r] + &conj_t(&site(a, s)).dot(&y);
            }
        }
    }
    out
}

fn extend_right<T: Field>(env: &Env<T>, a: &Array3<T>, w: &Array4<T>) -> Env<T> {
    let (wl, _, _, wr) = w.dim();
    let dl = a.shape()[0];
    let mut x: Vec<Vec<Option<Array2<T>>>> = vec![vec![None; 2]; wr];
    let mut out = vec![Array2::<T>::zeros((dl, dl)); wl];
    for l in 0..wl {
        for s in 0..2 {
            let mut y: Option<Array2<T>> = None;
            for r in 0..wr {
                for sp in 0..2 {
                    let c = w[[l, s, sp, r]];
                    if c == T::zero() {
                        continue;
                    }
                    // R_r A_{s'}^T : (bra_r × ket_r)(ket_r × ket_l)
                    let xv = x[r][sp].get_or_insert_with(|| env[r].dot(&site(a, sp).t()));
                    match y.as_mut() {
                        Some(acc) => acc.scaled_add(c, xv),
                        None => y = Some(xv.mapv(|v| v * c)),
                    }
                }
            }
            if let Some(y) = y {
                let conj_a = site(a, s).mapv(|z| z.conj());
                out[l] = &out[l] + &conj_a.dot(&y);
            }
        }
    }
    out
}

/// `H_eff θ` for the two-site block; `theta[s1][s2]` is `dl × dr`.
fn two_site_apply<T: Field>(
    lenv: &Env<T>,
    renv: &Env<T>,
    w1: &Array4<T>,
    w2: &Array4<T>,
    theta: &[Array2<T>],
) -> Vec<Array2<T>> {
    let (wl, _, _, wm) = w1.dim();
    let wr = w2.shape()[3];
    let (dl, dr) = theta[0].dim();
    // x[l][s1*2+s2] = L_l θ[s1,s2]
    let mut x: Vec<Vec<Option<Array2<T>>>> = vec![vec![None; 4]; wl];
    let mut y: Vec<Vec<Option<Array2<T>>>> = vec![vec![None; 4]; wr];
    for l in 0..wl {
        for m in 0..wm {
            for s1o in 0..2 {
                for s1 in 0..2 {
                    let c1 = w1[[l, s1o, s1, m]];
                    if c1 == T::zero() {
                        continue;
                    }
                    for r in 0..wr {
                        for s2o in 0..2 {
                            for s2 in 0..2 {
                                let c2 = w2[[m, s2o, s2, r]];
                                if c2 == T::zero() {
                                    continue;
                                }
                                let c = c1 * c2;
                                let xv = x[l][s1 * 2 + s2].get_or_insert_with(|| lenv[l].dot(&theta[s1 * 2 + s2]));
                                let slot = &mut y[r][s1o * 2 + s2o];
                                match slot.as_mut() {
                                    Some(acc) => acc.scaled_add(c, xv),
                                    None => *slot = Some(xv.mapv(|v| v * c)),
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![Array2::<T>::zeros((dl, dr)); 4];
    for r in 0..wr {
        for (o, slot) in y[r].iter().enumerate() {
            if let Some(v) = slot {
                out[o] = &out[o] + &v.dot(&renv[r].t());
            }
        }
    }
    out
}

impl<'a, T: Field> Sweeper<'a, T> {
    fn boundary_env() -> Env<T> {
        vec![Array2::from_elem((1, 1), T::one())]
    }

    fn theta(&self, i: usize) -> Vec<Array2<T>> {
        let (a, b) = (&self.a[i], &self.a[i + 1]);
        let mut out = Vec::with_capacity(4);
        for s1 in 0..2 {
            for s2 in 0..2 {
                out.push(site(a, s1).dot(&site(b, s2)));
            }
        }
        out
    }

    /// Optimizes sites (i, i+1) and splits; `to_right` leaves site i+1 as the center.
    fn step(&mut self, i: usize, chi: usize, lanczos: &LanczosOptions, to_right: bool) -> Result<(f64, f64)> {
        let lenv = self.left[i].as_ref().expect("left environment");
        let renv = self.right[i + 2].as_ref().expect("right environment");
        let (w1, w2) = (&self.w[i], &self.w[i + 1]);
        let theta = self.theta(i);
        let (dl, dr) = theta[0].dim();
        let block = dl * dr;
        let start: Vec<T> = theta.iter().flat_map(|m| m.iter().copied()).collect();
        let mv = |x: &[T], y: &mut [T]| {
            let th: Vec<Array2<T>> =
                (0..4).map(|k| Array2::from_shape_vec((dl, dr), x[k * block..(k + 1) * block].to_vec()).unwrap()).collect();
            let out = two_site_apply(lenv, renv, w1, w2, &th);
            for (k, m) in out.iter().enumerate() {
                for (dst, src) in y[k * block..(k + 1) * block].iter_mut().zip(m.iter()) {
                    *dst = *src;
                }
            }
        };
        let (pair, _) = lowest_eigenpair_best_effort(mv, start, lanczos)?;
        // Reshape to (dl*2, 2*dr): row (a, s1), column (s2, b).
        let v = &pair.vector;
        let mut m = Array2::<T>::zeros((dl * 2, 2 * dr));
        for s1 in 0..2 {
            for s2 in 0..2 {
                let k = s1 * 2 + s2;
                for a in 0..dl {
                    for b in 0..dr {
                        m[[a * 2 + s1, s2 * dr + b]] = v[k * block + a * dr + b];
                    }
                }
            }
        }
        let t = truncated_svd(&m, chi, SVD_CUTOFF)?;
        let keep = t.s.len();
        let norm = t.s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = t.s.mapv(|x| T::from_real(x / norm));
        if to_right {
            self.a[i] = reshape(t.u, (dl, 2, keep));
            let sv = Array2::from_diag(&s).dot(&t.vt);
            self.a[i + 1] = reshape(sv, (keep, 2, dr));
            self.left[i + 1] = Some(extend_left(self.left[i].as_ref().unwrap(), &self.a[i], &self.w[i]));
        } else {
            let us = t.u.dot(&Array2::from_diag(&s));
            self.a[i] = reshape(us, (dl, 2, keep));
            self.a[i + 1] = reshape(t.vt, (keep, 2, dr));
            self.right[i + 1] = Some(extend_right(self.right[i + 2].as_ref().unwrap(), &self.a[i + 1], &self.w[i + 1]));
        }
        Ok((pair.value, t.weight))
    }
}

/// Random right-canonical starting state with bond dimension `chi`.
fn initial_state<T: Field>(n: usize, chi: usize, seed: u64) -> Result<Vec<Array3<T>>> {
    let mut rng = RngStream::new(seed).child("dmrg-start").rng();
    let dims: Vec<usize> = (0..=n)
        .map(|b| chi.min(1usize.checked_shl(b.min(n - b) as u32).unwrap_or(usize::MAX)))
        .collect();
    let mut a: Vec<Array3<T>> = (0..n)
        .map(|i| Array3::from_shape_fn((dims[i], 2, dims[i + 1]), |_| T::from_real(rng.random::<f64>() - 0.5)))
        .collect();
    // Right-orthonormalize by successive SVDs from the right.
    for i in (1..n).rev() {
        let (dl, _, dr) = a[i].dim();
        let m = reshape(a[i].clone(), (dl, 2 * dr));
        let t = truncated_svd(&m, usize::MAX, 0.0)?;
        let keep = t.s.len();
        a[i] = reshape(t.vt, (keep, 2, dr));
        let us = t.u.dot(&Array2::from_diag(&t.s.mapv(T::from_real)));
        let (dl0, _, _) = a[i - 1].dim();
        let pm = reshape(a[i - 1].clone(), (dl0 * 2, dl));
        a[i - 1] = reshape(pm.dot(&us), (dl0, 2, keep));
    }
    let norm = a[0].iter().map(|z| z.square()).sum::<f64>().sqrt();
    a[0].mapv_inplace(|z| z.mul_real(1.0 / norm));
    Ok(a)
}

fn run<T: Field>(w: &[Array4<T>], opts: &DmrgOptions) -> Result<(Vec<Array3<T>>, f64, Vec<f64>, f64, bool)> {
    let n = w.len();
    if n < 2 {
        return Err(Error::InvalidSystemSize("DMRG needs at least two sites".into()));
    }
    let mut sw = Sweeper {
        w,
        a: initial_state::<T>(n, opts.initial_chi.min(opts.chi_max), opts.seed)?,
        left: vec![None; n + 1],
        right: vec![None; n + 1],
    };
    sw.left[0] = Some(Sweeper::<T>::boundary_env());
    sw.right[n] = Some(Sweeper::<T>::boundary_env());
    for i in (1..n).rev() {
        sw.right[i] = Some(extend_right(sw.right[i + 1].as_ref().unwrap(), &sw.a[i], &w[i]));
    }
    // left[i] covers sites < i, right[i] covers sites ≥ i.
    let lanczos = LanczosOptions { max_krylov: opts.local_krylov, max_restarts: 1, tol: 1e-10, check_every: 4 };
    let mut energies = Vec::new();
    let mut energy = f64::INFINITY;
    let mut chi = opts.initial_chi.min(opts.chi_max).max(2);
    let mut converged = false;
    let mut last_weight = 0.0;
    for _sweep in 0..opts.max_sweeps {
        let mut max_weight: f64 = 0.0;
        let mut hit_cap = false;
        let mut e = energy;
        for i in 0..n - 1 {
            let (ei, wt) = sw.step(i, chi, &lanczos, true)?;
            e = ei;
            max_weight = max_weight.max(wt);
            hit_cap |= sw.a[i].shape()[2] >= chi;
        }
        for i in (0..n - 1).rev() {
            let (ei, wt) = sw.step(i, chi, &lanczos, false)?;
            e = ei;
            max_weight = max_weight.max(wt);
            hit_cap |= sw.a[i + 1].shape()[0] >= chi;
        }
        energies.push(e);
        let delta = (energy - e).abs();
        energy = e;
        last_weight = max_weight;
        let at_cap = chi >= opts.chi_max;
        if delta < opts.tol && (at_cap || !hit_cap) {
            converged = true;
            break;
        }
        chi = (chi * 2).min(opts.chi_max);
    }
    Ok((sw.a, energy, energies, last_weight, converged))
}

/// Ground state of `h` by two-site DMRG. Real MPOs are solved in real arithmetic.
pub fn dmrg_ground_state(h: &Mpo, opts: &DmrgOptions) -> Result<DmrgResult> {
    if opts.chi_max < 2 {
        return Err(Error::InvalidConfig(format!("chi_max must be at least 2, got {}", opts.chi_max)));
    }
    if opts.tol <= 0.0 || opts.tol.is_nan() || opts.max_sweeps == 0 {
        return Err(Error::InvalidConfig("DMRG tolerance and sweep count must be positive".into()));
    }
    let (tensors, energy, energies, weight, converged) = if h.is_real() {
        let (a, e, es, w, c) = run::<f64>(&h.real_tensors(), opts)?;
        (a.into_iter().map(|t| t.mapv(|x| C64::new(x, 0.0))).collect::<Vec<_>>(), e, es, w, c)
    } else {
        run::<C64>(h.tensors(), opts)?
    };
    let mut mps = Mps::from_tensors(tensors, opts.chi_max)?;
    mps.canonicalize(0)?;
    Ok(DmrgResult { mps, energy, sweep_energies: energies, max_truncation_weight: weight, converged })
}
