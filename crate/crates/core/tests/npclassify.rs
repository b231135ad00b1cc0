use ndarray::Array2;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use qphase_core::linalg::{dagger, frobenius_norm, haar_unitary, CMatrix};
use qphase_core::npclassify::*;
use qphase_core::{build_cluster_ising, ground_state, Boundary, DensityMatrix, GroundStateOptions};
use qphase_core::{Partition, QuantumState, RemainderPolicy, RngStream, StateVector};

fn diag_dm(p: &[f64]) -> DensityMatrix {
    let d = p.len();
    let m = Array2::from_shape_fn((d, d), |(i, j)| if i == j { C64::new(p[i], 0.0) } else { C64::new(0.0, 0.0) });
    DensityMatrix::new(m, 1e-12).unwrap()
}

fn random_dm(k: usize, rng: &mut rand_chacha::ChaCha20Rng) -> DensityMatrix {
    // Mixture of two random pure states.
    let a = StateVector::random(k, rng);
    let b = StateVector::random(k, rng);
    let ra = DensityMatrix::pure(a.amplitudes()).unwrap();
    let rb = DensityMatrix::pure(b.amplitudes()).unwrap();
    let m = ra.matrix().mapv(|z| z * 0.7) + rb.matrix().mapv(|z| z * 0.3);
    DensityMatrix::new(m, 1e-10).unwrap()
}

#[test]
fn identical_averages_label_everything_one() {
    let part = Partition::contiguous(4, 2, RemainderPolicy::Exclude).unwrap();
    let mut rng = RngStream::new(1).rng();
    let r = random_dm(2, &mut rng);
    let rdms = vec![vec![r.clone(), r.clone()], vec![r.clone(), r.clone()]];
    let clf = train_classifier(&rdms, &[0, 1], None, &part, 0.0, 1).unwrap();
    for t in &clf.tests {
        assert_eq!(t.rank0(), 0);
        assert!(frobenius_norm(&t.projector(0).view()) < 1e-12);
    }
    let state = QuantumState::Dense(StateVector::random(4, &mut rng));
    assert_eq!(clf.classify_probability(&state).unwrap().p0, 0.0);
}

#[test]
fn orthogonal_single_qubit_states_are_perfectly_separated() {
    let part = Partition::contiguous(3, 1, RemainderPolicy::Exclude).unwrap();
    let zero = diag_dm(&[1.0, 0.0]);
    let one = diag_dm(&[0.0, 1.0]);
    let rdms = vec![vec![zero.clone(); 3], vec![one.clone(); 3]];
    let clf = train_classifier(&rdms, &[0, 1], None, &part, 0.0, 1).unwrap();
    for t in &clf.tests {
        let s0 = t.projector(0);
        assert!((s0[[0, 0]].re - 1.0).abs() < 1e-12 && s0[[1, 1]].norm() < 1e-12);
    }
    let p_zero = clf.classify_probability(&StateVector::basis_state(3, 0).into()).unwrap().p0;
    let p_one = clf.classify_probability(&StateVector::basis_state(3, 7).into()).unwrap().p0;
    assert_eq!((p_zero, p_one), (1.0, 0.0));
}

#[test]
fn commuting_case_matches_likelihood_ratio_region() {
    let mut rng = RngStream::new(2).rng();
    use rand::Rng;
    for k in 1..=3 {
        let d = 1 << k;
        let l = 4 * k;
        let part = Partition::contiguous(l, k, RemainderPolicy::Exclude).unwrap();
        let rand_probs = |rng: &mut rand_chacha::ChaCha20Rng| {
            let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.01).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let rdms: Vec<Vec<DensityMatrix>> = (0..4).map(|_| (0..part.len()).map(|_| diag_dm(&rand_probs(&mut rng))).collect()).collect();
        let labels = [0, 0, 1, 1];
        for &a in &[-0.5, 0.0, 0.3] {
            let clf = train_classifier(&rdms, &labels, None, &part, a, 1).unwrap();
            for (j, t) in clf.tests.iter().enumerate() {
                let rho: Vec<f64> = (0..d).map(|x| 0.5 * (rdms[0][j].matrix()[[x, x]].re + rdms[1][j].matrix()[[x, x]].re)).collect();
                let sig: Vec<f64> = (0..d).map(|x| 0.5 * (rdms[2][j].matrix()[[x, x]].re + rdms[3][j].matrix()[[x, x]].re)).collect();
                let s0 = t.projector(0);
                for x in 0..d {
                    let accept = rho[x] > a.exp() * sig[x];
                    assert_eq!(s0[[x, x]].re > 0.5, accept);
                }
            }
        }
    }
}

#[test]
fn group_probability_matches_dense_trace() {
    let mut rng = RngStream::new(3).rng();
    let part = Partition::contiguous(2, 2, RemainderPolicy::Exclude).unwrap();
    let rdms: Vec<Vec<DensityMatrix>> = (0..4).map(|_| vec![random_dm(2, &mut rng)]).collect();
    let clf = train_classifier(&rdms, &[0, 1, 0, 1], None, &part, 0.1, 1).unwrap();
    let test = random_dm(2, &mut rng);
    let dense = qphase_core::linalg::trace(&clf.tests[0].projector(0).dot(test.matrix()).view()).re;
    let q = clf.group_outcome_probabilities(&[test]).unwrap()[0];
    assert!((q - dense).abs() < 1e-12);
}

#[test]
fn povm_is_complete_and_projective() {
    let mut rng = RngStream::new(4).rng();
    let part = Partition::contiguous(4, 2, RemainderPolicy::Exclude).unwrap();
    let rdms: Vec<Vec<DensityMatrix>> = (0..6).map(|_| vec![random_dm(2, &mut rng), random_dm(2, &mut rng)]).collect();
    let clf = train_classifier(&rdms, &[0, 0, 0, 1, 1, 1], None, &part, -0.2, 1).unwrap();
    for t in &clf.tests {
        let s0 = t.projector(0);
        let s1 = t.projector(1);
        let id = CMatrix::eye(4);
        assert!(frobenius_norm(&(&s0 + &s1 - &id).view()) < 1e-9);
        assert!(frobenius_norm(&(s0.dot(&s0) - &s0).view()) < 1e-9);
        assert!(frobenius_norm(&s0.dot(&s1).view()) < 1e-9);
        // Eigen-decomposition reconstructs Δ.
        let v = &t.eigenvectors;
        let lam = Array2::from_diag(&ndarray::Array1::from_iter(t.eigenvalues.iter().map(|&x| C64::new(x, 0.0))));
        let rebuilt = v.dot(&lam).dot(&dagger(&v.view()));
        let avg = average_by_label(&rdms, &[0, 0, 0, 1, 1, 1], None).unwrap();
        let j = clf.tests.iter().position(|x| std::ptr::eq(x, t)).unwrap();
        let delta = avg.rho[j].matrix() - &avg.sigma[j].matrix().mapv(|z| z * (-0.2f64).exp());
        assert!(frobenius_norm(&(rebuilt - delta).view()) < 1e-8);
    }
}

#[test]
fn exact_classification_matches_sampling() {
    let l = 12;
    let h = build_cluster_ising(l, 0.2, 0.9, Boundary::Open).unwrap();
    let sv = ground_state(&h, &GroundStateOptions::default()).unwrap().state;
    let part = Partition::contiguous(l, 2, RemainderPolicy::Exclude).unwrap();
    let mut rng = RngStream::new(5).rng();
    let rdms: Vec<Vec<DensityMatrix>> = (0..4)
        .map(|_| (0..part.len()).map(|_| random_dm(2, &mut rng)).collect())
        .collect();
    let clf = train_classifier(&rdms, &[0, 1, 0, 1], None, &part, 0.0, 1).unwrap();
    let exact = clf.classify_probability(&QuantumState::Dense(sv.clone())).unwrap();
    assert!(!exact.approximate);

    let mut rotated = sv.clone();
    for (t, g) in clf.tests.iter().zip(part.groups()) {
        rotated = rotated.apply_group_unitary(&dagger(&t.eigenvectors.view()).view(), g).unwrap();
    }
    let shots = 1_000_000;
    let mut zeros = 0usize;
    for b in rotated.sample(shots, &mut rng) {
        let ones: usize = part.groups().iter().zip(&clf.tests).map(|(g, t)| t.labels[rotated.group_outcome(b, g).unwrap()] as usize).sum();
        if 2 * ones < part.len() {
            zeros += 1;
        }
    }
    let p = exact.p0;
    let est = zeros as f64 / shots as f64;
    let sigma = (p * (1.0 - p) / shots as f64).sqrt().max(1e-12);
    assert!((est - p).abs() <= 3.0 * sigma + 1e-12, "exact {p} vs sampled {est}");
}

#[test]
fn trivial_projectors_give_certain_decisions() {
    let part = Partition::contiguous(4, 2, RemainderPolicy::Exclude).unwrap();
    let mut rng = RngStream::new(6).rng();
    let zero = diag_dm(&[1.0, 0.0, 0.0, 0.0]);
    let one = diag_dm(&[0.0, 0.0, 0.0, 1.0]);
    let rdms = vec![vec![zero.clone(), zero.clone()], vec![one.clone(), one.clone()]];
    let mut clf = train_classifier(&rdms, &[0, 1], None, &part, 0.0, 1).unwrap();
    for t in clf.tests.iter_mut() {
        t.labels = vec![0; 4];
    }
    let state: QuantumState = StateVector::random(4, &mut rng).into();
    assert!((clf.classify_probability(&state).unwrap().p0 - 1.0).abs() < 1e-12);
    for t in clf.tests.iter_mut() {
        t.labels = vec![1; 4];
    }
    assert!(clf.classify_probability(&state).unwrap().p0.abs() < 1e-12);
}

#[test]
fn error_formula_arithmetic() {
    let e = error_probabilities(0.0, &[0.9, 0.2], &[0, 1], 2, 1).unwrap();
    assert!((e.alpha - 0.19).abs() < 1e-15);
    assert!((e.beta - 0.04).abs() < 1e-15);
    let e = error_probabilities(0.0, &[1.0], &[0], 7, 1).unwrap();
    assert_eq!(e.alpha, 0.0);
    let e = error_probabilities(0.0, &[0.9], &[0], 3, 3).unwrap();
    assert!((e.alpha - 0.1).abs() < 1e-15);
    assert!(matches!(error_probabilities(0.0, &[0.9], &[0], 4, 3), Err(qphase_core::Error::InvalidCopyCount(_))));
    // β non-increasing in n.
    let mut last = 1.0;
    for n in 1..10 {
        let b = error_probabilities(0.0, &[0.7], &[1], n, 1).unwrap().beta;
        assert!(b <= last);
        last = b;
    }
}

fn point(a: f64, alpha: f64, beta: f64) -> ErrorPoint {
    ErrorPoint { a, n: 1, alpha_states: vec![alpha], beta_states: vec![beta], alpha, beta }
}

#[test]
fn tune_a_rules() {
    let single = [point(0.0, 0.01, 0.3)];
    let t = tune_a(&single, 0.05).unwrap();
    assert!(t.qualifies && t.a == 0.0);

    // α falls and β rises with a.
    let grid: Vec<ErrorPoint> = linspace(-1.0, 1.0, 20).into_iter().map(|a| point(a, 0.1 * (1.0 - a) / 2.0, 0.2 + 0.1 * a)).collect();
    let t = tune_a(&grid, 0.05).unwrap();
    let best = grid.iter().filter(|p| p.alpha <= 0.05).min_by(|x, y| x.beta.total_cmp(&y.beta)).unwrap();
    assert_eq!(t.a, best.a);
    assert!(t.qualifies);

    let t = tune_a(&[point(0.0, 0.2, 0.1), point(1.0, 0.1, 0.5)], 0.05).unwrap();
    assert!(!t.qualifies);
    assert_eq!(t.a, 1.0);
}

#[test]
fn depolarized_test_errors() {
    let clean = ErrorPoint { a: 0.0, n: 1, alpha_states: vec![0.1, 0.3], beta_states: vec![0.2], alpha: 0.2, beta: 0.2 };
    let same = noisy_error_probabilities(&clean, 0.4, 0.0).unwrap();
    assert_eq!(same, clean);
    let full = noisy_error_probabilities(&clean, 0.4, 1.0).unwrap();
    assert!((full.alpha + full.beta - 1.0).abs() < 1e-15);
    for p in [0.1, 0.5] {
        let e = noisy_error_probabilities(&clean, 0.4, p).unwrap();
        assert!((e.alpha - ((1.0 - p) * 0.2 + p * 0.6)).abs() < 1e-12);
        assert!((e.beta - ((1.0 - p) * 0.2 + p * 0.4)).abs() < 1e-12);
    }
    assert!(noisy_error_probabilities(&clean, 0.4, 1.5).is_err());
}

#[test]
fn half_rank_groups_give_fair_majority() {
    let part = Partition::contiguous(3, 1, RemainderPolicy::Exclude).unwrap();
    let rdms = vec![vec![diag_dm(&[0.8, 0.2]); 3], vec![diag_dm(&[0.2, 0.8]); 3]];
    let clf = train_classifier(&rdms, &[0, 1], None, &part, 0.0, 1).unwrap();
    assert!(clf.tests.iter().all(|t| t.rank0() == 1));
    assert!((clf.majority_trace_fraction() - 0.5).abs() < 1e-15);
}

#[test]
fn depolarized_training_keeps_sign_pattern() {
    let mut rng = RngStream::new(8).rng();
    let part = Partition::contiguous(4, 2, RemainderPolicy::Exclude).unwrap();
    let rdms: Vec<Vec<DensityMatrix>> = (0..4).map(|_| vec![random_dm(2, &mut rng), random_dm(2, &mut rng)]).collect();
    let labels = [0, 1, 0, 1];
    let base = train_classifier(&rdms, &labels, None, &part, 0.0, 1).unwrap();
    for p in [0.1, 0.3, 0.9] {
        let noisy: Vec<Vec<DensityMatrix>> = rdms.iter().map(|r| r.iter().map(|x| x.depolarize(p).unwrap()).collect()).collect();
        let clf = train_classifier(&noisy, &labels, None, &part, 0.0, 1).unwrap();
        for (a, b) in base.tests.iter().zip(&clf.tests) {
            assert!(frobenius_norm(&(a.projector(0) - b.projector(0)).view()) < 1e-10);
        }
    }
}

#[test]
fn multi_copy_tests_use_tensor_powers() {
    let mut rng = RngStream::new(9).rng();
    let part = Partition::contiguous(4, 2, RemainderPolicy::Exclude).unwrap();
    let rdms: Vec<Vec<DensityMatrix>> = (0..2).map(|_| vec![random_dm(2, &mut rng), random_dm(2, &mut rng)]).collect();
    let clf = train_classifier(&rdms, &[0, 1], None, &part, 0.2, 2).unwrap();
    assert_eq!(clf.tests[0].dim(), 16);
    let state: QuantumState = StateVector::random(4, &mut rng).into();
    let c = clf.classify_probability(&state).unwrap();
    assert!(c.approximate && (0.0..=1.0).contains(&c.p0));
    assert!(matches!(train_classifier(&rdms, &[0, 1], None, &part, 0.0, 7), Err(qphase_core::Error::UnsupportedCopyCount(_))));
    assert!(matches!(train_classifier(&rdms, &[0, 0], None, &part, 0.0, 1), Err(qphase_core::Error::DegenerateTrainingSet(_))));
}

#[test]
fn classifier_json_round_trip() {
    let mut rng = RngStream::new(10).rng();
    let part = Partition::contiguous(6, 2, RemainderPolicy::Exclude).unwrap();
    let rdms: Vec<Vec<DensityMatrix>> = (0..2).map(|_| (0..3).map(|_| random_dm(2, &mut rng)).collect()).collect();
    let clf = train_classifier(&rdms, &[0, 1], None, &part, 0.4, 1).unwrap();
    let text = serde_json::to_string(&clf.to_file()).unwrap();
    let back = PartitionedNpClassifier::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, clf);
}

#[test]
fn variance_bound_checks() {
    for q in [0.1, 0.5, 0.9] {
        let xi = -1.0 / f64::ln(q);
        let lhs = lattice_shell_sum(1, q, 2000);
        assert!((lhs - 2.0 * q / (1.0 - q)).abs() < 1e-9);
        let closed = ((1.0 + q) / (1.0 - q)) - 1.0;
        assert!((lhs - closed).abs() < 1e-9);
        let two = lattice_shell_sum(2, q, 600);
        assert!((two - (((1.0 + q) / (1.0 - q)).powi(2) - 1.0)).abs() < 1e-6, "{xi}");
    }
    let mut rng = RngStream::new(11).rng();
    let ind = majority_variance_check(0.0, 1.0, 1, 9, 0.25, 100_000, &mut rng).unwrap();
    assert!((ind.simulated - 0.25 / 9.0).abs() <= 3.0 * ind.std_error);
    let c = majority_variance_check(0.2, 0.5, 1, 9, 0.25, 100_000, &mut rng).unwrap();
    assert!(c.simulated <= c.bound);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sign_pattern_is_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = RngStream::new(seed).rng();
        let u = haar_unitary(4, &mut rng);
        let diag: Vec<f64> = vec![0.7, -0.2, 0.05, -0.55];
        let lam = Array2::from_diag(&ndarray::Array1::from_iter(diag.iter().map(|&x| C64::new(x, 0.0))));
        let delta = u.dot(&lam).dot(&dagger(&u.view()));
        let a = NpGroupTest::from_difference(&delta).unwrap();
        let b = NpGroupTest::from_difference(&delta.mapv(|z| z * scale)).unwrap();
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert!(frobenius_norm(&(a.projector(0) - b.projector(0)).view()) < 1e-9);
    }

    #[test]
    fn decision_probabilities_are_complementary(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed).rng();
        let part = Partition::contiguous(6, 2, RemainderPolicy::Exclude).unwrap();
        let rdms: Vec<Vec<DensityMatrix>> = (0..2).map(|_| (0..3).map(|_| random_dm(2, &mut rng)).collect()).collect();
        let clf = train_classifier(&rdms, &[0, 1], None, &part, 0.0, 1).unwrap();
        let state = QuantumState::Dense(StateVector::random(6, &mut rng));
        let bases: Vec<CMatrix> = clf.tests.iter().map(|t| t.eigenvectors.clone()).collect();
        let labelers: Vec<Vec<u8>> = clf.tests.iter().map(|t| t.labels.clone()).collect();
        let dist = state.grouped_label_distribution_in_bases(&part, &bases, &labelers).unwrap();
        let p0 = clf.classify_probability(&state).unwrap().p0;
        let p1: f64 = dist.iter().enumerate().filter(|(c, _)| 2 * c >= 3).map(|(_, p)| p).sum();
        prop_assert!((p0 + p1 - 1.0).abs() < 1e-10);
    }
}
