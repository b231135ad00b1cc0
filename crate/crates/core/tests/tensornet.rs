use ndarray::Array2;
use num_complex::Complex64 as C64;
use qphase_core::linalg::{frobenius_norm, haar_unitary};
use qphase_core::pauli::{build_cluster_ising, o_fm, o_spt, Boundary};
use qphase_core::tensornet::{dmrg_ground_state, mpo_from_pauli_sum, DmrgOptions, GroupSampler, Mps};
use qphase_core::{ground_state, GroundStateOptions, Partition, RemainderPolicy, RngStream, StateVector};

fn exact(l: usize, j1: f64, j2: f64) -> (StateVector, f64) {
    let h = build_cluster_ising(l, j1, j2, Boundary::Open).unwrap();
    let gs = ground_state(&h, &GroundStateOptions::default()).unwrap();
    (gs.state, gs.energy)
}

fn dmrg(l: usize, j1: f64, j2: f64, chi: usize) -> qphase_core::tensornet::DmrgResult {
    let h = build_cluster_ising(l, j1, j2, Boundary::Open).unwrap();
    let mpo = mpo_from_pauli_sum(&h).unwrap();
    dmrg_ground_state(&mpo, &DmrgOptions { chi_max: chi, ..Default::default() }).unwrap()
}

#[test]
fn dmrg_matches_exact_energy_at_l12() {
    for &(j1, j2) in &[(0.5, 0.3), (-0.4, 1.6), (0.2, -0.8)] {
        let (_, e0) = exact(12, j1, j2);
        let r = dmrg(12, j1, j2, 64);
        assert!(r.converged, "not converged at ({j1}, {j2})");
        assert!(((r.energy - e0) / e0).abs() < 1e-6, "({j1}, {j2}): {} vs {}", r.energy, e0);
    }
}

#[test]
fn dmrg_sweep_energies_do_not_increase() {
    let r = dmrg(14, 0.3, 0.9, 32);
    for w in r.sweep_energies.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{:?}", r.sweep_energies);
    }
}

#[test]
fn dmrg_product_state_has_unit_bonds() {
    let r = dmrg(10, 0.0, 0.0, 32);
    assert_eq!(r.mps.max_bond(), 1);
    assert!((r.energy + 10.0).abs() < 1e-9);
}

#[test]
fn dmrg_state_matches_exact_observables() {
    let l = 12;
    let (sv, _) = exact(l, 0.3, 1.4);
    let r = dmrg(l, 0.3, 1.4, 64);
    let spt = o_spt(l).unwrap();
    assert!((r.mps.expectation_string(&spt).unwrap() - sv.expectation_string(&spt).unwrap()).abs() < 1e-6);
    let fm = o_fm(l);
    assert!((r.mps.expectation(&fm).unwrap() - sv.expectation(&fm).unwrap()).abs() < 1e-6);
}

fn random_pair(n: usize, seed: u64) -> (Mps, StateVector) {
    let mut rng = RngStream::new(seed).rng();
    let mps = Mps::random(n, 6, &mut rng).with_chi_max(64);
    let sv = mps.to_statevector().unwrap();
    (mps, sv)
}

#[test]
fn statevector_round_trip() {
    let mut rng = RngStream::new(3).rng();
    let sv = StateVector::random(9, &mut rng);
    let mps = Mps::from_statevector(&sv, 64).unwrap();
    let back = mps.to_statevector().unwrap();
    assert!((back.inner(&sv).norm() - 1.0).abs() < 1e-10);
    assert_eq!(mps.truncation_weight(), 0.0);
}

#[test]
fn canonical_forms_are_orthonormal() {
    let (mut mps, _) = random_pair(8, 5);
    mps.canonicalize(3).unwrap();
    assert_eq!(mps.center(), Some(3));
    assert!(mps.left_orthonormality_error() < 1e-10);
    assert!(mps.right_orthonormality_error() < 1e-10);
    assert!((mps.norm_sqr() - 1.0).abs() < 1e-10);
}

#[test]
fn rdms_match_statevector() {
    let (mps, sv) = random_pair(10, 7);
    let part = Partition::contiguous(10, 3, RemainderPolicy::SmallerFinalGroup).unwrap();
    let rhos = mps.rdms(&part).unwrap();
    for (g, rho) in part.groups().iter().zip(&rhos) {
        let exact = sv.reduced_density_matrix(g).unwrap();
        assert!(rho.frobenius_distance(&exact) < 1e-8);
    }
}

#[test]
fn group_unitary_matches_statevector() {
    let (mps, sv) = random_pair(8, 11);
    let mut rng = RngStream::new(12).rng();
    let u = haar_unitary(4, &mut rng);
    let g = [3, 4];
    let a = mps.apply_group_unitary(&u.view(), &g).unwrap().to_statevector().unwrap();
    let b = sv.apply_group_unitary(&u.view(), &g).unwrap();
    let diff: f64 = a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm_sqr()).sum();
    assert!(diff.sqrt() < 1e-8);
}

#[test]
fn truncation_is_recorded() {
    let mut rng = RngStream::new(21).rng();
    let sv = StateVector::random(10, &mut rng);
    let mps = Mps::from_statevector(&sv, 4).unwrap();
    assert!(mps.max_bond() <= 4);
    assert!(mps.truncation_weight() > 0.0);
}

#[test]
fn grouped_distribution_matches_statevector() {
    let (mps, sv) = random_pair(9, 13);
    let part = Partition::contiguous(9, 2, RemainderPolicy::Exclude).unwrap();
    let labelers: Vec<Vec<u8>> = (0..part.len()).map(|j| (0..4).map(|b| ((b + j) % 3 == 0) as u8).collect()).collect();
    let a = mps.grouped_label_distribution(&part, &labelers).unwrap();
    let b = sv.grouped_label_distribution(&part, &labelers).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-8);
    }
    assert_eq!(mps.hamming_weight_distribution().unwrap().len(), 10);
    for (x, y) in mps.hamming_weight_distribution().unwrap().iter().zip(sv.hamming_weight_distribution()) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn rotated_distribution_matches_rotated_state() {
    let (mps, sv) = random_pair(6, 17);
    let part = Partition::contiguous(6, 2, RemainderPolicy::Exclude).unwrap();
    let mut rng = RngStream::new(18).rng();
    let us: Vec<Array2<C64>> = (0..3).map(|_| haar_unitary(4, &mut rng)).collect();
    let bases: Vec<Array2<C64>> = us.iter().map(|u| u.t().mapv(|z| z.conj())).collect();
    let labelers = vec![vec![0, 1, 1, 0]; 3];
    let a = mps.grouped_label_distribution_in_bases(&part, Some(&bases), &labelers).unwrap();
    let mut rotated = sv.clone();
    for (u, g) in us.iter().zip(part.groups()) {
        rotated = rotated.apply_group_unitary(&u.view(), g).unwrap();
    }
    let b = rotated.grouped_label_distribution(&part, &labelers).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn sampling_matches_born_rule() {
    let (mps, sv) = random_pair(5, 19);
    let mut rng = RngStream::new(20).rng();
    let shots = 200_000;
    let samples = mps.sample(shots, &mut rng).unwrap();
    let mut counts = vec![0usize; 32];
    for s in &samples {
        let idx = s.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        counts[idx] += 1;
    }
    let tv: f64 = counts.iter().zip(sv.probabilities()).map(|(&c, p)| (c as f64 / shots as f64 - p).abs()).sum::<f64>() / 2.0;
    assert!(tv <= 0.01, "tv = {tv}");

    let part = Partition::contiguous(5, 2, RemainderPolicy::Exclude).unwrap();
    let sampler = GroupSampler::new(&mps, &part).unwrap();
    let mut counts = vec![0usize; 16];
    for _ in 0..shots {
        let o = sampler.shot(&[None, None], &mut rng);
        counts[o[0] * 4 + o[1]] += 1;
    }
    let mut exact = vec![0.0; 16];
    for (b, p) in sv.probabilities().iter().enumerate() {
        exact[(b >> 1) & 15] += p;
    }
    let tv: f64 = counts.iter().zip(&exact).map(|(&c, p)| (c as f64 / shots as f64 - p).abs()).sum::<f64>() / 2.0;
    assert!(tv <= 0.01, "tv = {tv}");
}

#[test]
fn checkpoint_round_trip() {
    let (mps, _) = random_pair(7, 23);
    let dir = std::env::temp_dir().join(format!("qphase-mps-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("state.json");
    mps.save_json(&path).unwrap();
    let back = Mps::load_json(&path).unwrap();
    let a = mps.to_statevector().unwrap();
    let b = back.to_statevector().unwrap();
    assert!((a.inner(&b).norm() - 1.0).abs() < 1e-12);

    let mut ck = mps.to_checkpoint();
    ck.version = 99;
    assert!(Mps::from_checkpoint(&ck).is_err());
    let mut ck = mps.to_checkpoint();
    ck.sites[2].data[0] = f64::NAN;
    assert!(Mps::from_checkpoint(&ck).is_err());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mpo_dense_matches_pauli_sum() {
    let h = build_cluster_ising(7, -0.6, 1.1, Boundary::Periodic).unwrap();
    match mpo_from_pauli_sum(&h) {
        Ok(mpo) => assert!(frobenius_norm(&(mpo.dense() - h.dense()).view()) < 1e-10),
        Err(e) => assert!(matches!(e, qphase_core::Error::UnsupportedRange(_))),
    }
    let h = build_cluster_ising(7, -0.6, 1.1, Boundary::Open).unwrap();
    let mpo = mpo_from_pauli_sum(&h).unwrap();
    assert!(frobenius_norm(&(mpo.dense() - h.dense()).view()) < 1e-10);
}
