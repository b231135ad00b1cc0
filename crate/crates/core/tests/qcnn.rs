use qphase_core::linalg::{dagger, frobenius_norm, identity, unitarity_deviation, CMatrix, C64};
use qphase_core::pauli::{build_cluster_ising, Boundary, Pauli, PauliString};
use qphase_core::qcnn::*;
use qphase_core::statevector::{ground_state, GroundStateOptions};
use qphase_core::{RngStream, StateVector};
use rand::Rng;

/// Full-register matrix of a gate by direct index bookkeeping.
fn embed(u: &CMatrix, targets: &[usize], n: usize) -> CMatrix {
    let dim = 1 << n;
    let k = targets.len();
    let local = |b: usize| targets.iter().fold(0, |acc, &q| (acc << 1) | ((b >> (n - 1 - q)) & 1));
    let mut m = CMatrix::zeros((dim, dim));
    for col in 0..dim {
        let lc = local(col);
        for lr in 0..1 << k {
            let mut row = col;
            for (t, &q) in targets.iter().enumerate() {
                let bit = (lr >> (k - 1 - t)) & 1;
                row = (row & !(1 << (n - 1 - q))) | (bit << (n - 1 - q));
            }
            m[[row, col]] += u[[lr, lc]];
        }
    }
    m
}

fn dense_circuit(c: &Circuit) -> CMatrix {
    let mut u = identity(1 << c.n_qubits);
    for g in &c.gates {
        u = embed(&g.unitary, &g.targets, c.n_qubits).dot(&u);
    }
    u
}

fn z_string(n: usize, qubits: &[usize]) -> CMatrix {
    let sites: Vec<(usize, Pauli)> = qubits.iter().map(|&q| (q, Pauli::Z)).collect();
    PauliString::from_sites(n, 1.0, &sites).unwrap().dense()
}

fn expect(u_state: &StateVector, op: &CMatrix) -> f64 {
    let v = u_state.to_array();
    v.mapv(|z| z.conj()).dot(&op.dot(&v)).re
}

#[test]
fn propagation_rule_matches_conjugation() {
    // Four qubits i−2, i−1, i, i+1 = 0, 1, 2, 3 with the gates written out.
    let n = 4;
    let mut u = identity(16);
    for (g, t) in [(cnot(), vec![0, 1]), (cnot(), vec![2, 3]), (toffoli(), vec![1, 3, 2]), (cz(), vec![1, 2])] {
        u = embed(&g, &t, n).dot(&u);
    }
    let lhs = dagger(&u.view()).dot(&z_string(n, &[2])).dot(&u);
    let rhs = (z_string(n, &[2]) + z_string(n, &[3]) + z_string(n, &[0, 1, 2]) - z_string(n, &[0, 1, 3])).mapv(|z| z * 0.5);
    assert!(frobenius_norm(&(lhs - rhs).view()) < 1e-12);

    // The same rule inside the circuit builder, at an interior kept qubit of L = 5.
    let c = exact_qcnn_fm_circuit(5, 1).unwrap();
    let u = dense_circuit(&c);
    let lhs = dagger(&u.view()).dot(&z_string(5, &[3])).dot(&u);
    let rhs = (z_string(5, &[3]) + z_string(5, &[4]) + z_string(5, &[1, 2, 3]) - z_string(5, &[1, 2, 4])).mapv(|z| z * 0.5);
    assert!(frobenius_norm(&(lhs - rhs).view()) < 1e-12);
}

#[test]
fn fm_circuit_matches_mso_observable() {
    let mut rng = RngStream::new(21).rng();
    for (l, depth) in [(9, 2), (12, 2), (15, 2), (8, 1)] {
        let c = exact_qcnn_fm_circuit(l, depth).unwrap();
        let mso = exact_qcnn_fm_mso(l, depth).unwrap();
        for _ in 0..12 {
            let s = StateVector::random(l, &mut rng);
            let a = c.output(&s).unwrap();
            let b = mso.expectation(&s).unwrap();
            assert!((a - b).abs() < 1e-9, "L={l}: {a} vs {b}");
        }
    }
}

#[test]
fn fm_fixed_points() {
    for l in [9, 15] {
        let d = fm_max_depth(l);
        assert!((exact_qcnn_fm_output(&StateVector::basis_state(l, 0), d).unwrap() - 1.0).abs() < 1e-12);
        assert!(exact_qcnn_fm_output(&StateVector::minus(l), d).unwrap().abs() < 1e-12);
    }
    assert!(exact_qcnn_fm_circuit(3, 1).is_err());
    assert!(exact_qcnn_fm_circuit(15, 3).is_err());
}

fn cluster_state(l: usize) -> StateVector {
    let mut s = StateVector::plus(l);
    for j in 0..l - 1 {
        s = s.apply_group_unitary(&cz().view(), &[j, j + 1]).unwrap();
    }
    s
}

#[test]
fn spt_fixed_points() {
    for l in [9, 15, 18] {
        let d = spt_max_depth(l);
        let f = exact_qcnn_spt_output(&cluster_state(l), d).unwrap();
        assert!((f - 1.0).abs() < 1e-12, "L={l}: {f}");
        if l >= 15 {
            let f = exact_qcnn_spt_output(&StateVector::minus(l), d).unwrap();
            assert!(f.abs() < 1e-12, "L={l}: {f}");
        }
    }
    // At L = 9 the decoder reads the edge qubits, whose X parity with the
    // other even sites is fixed in the trivial state.
    let f = exact_qcnn_spt_output(&StateVector::minus(9), 1).unwrap();
    assert!((f + 0.25).abs() < 1e-12, "{f}");
    assert!(exact_qcnn_spt_circuit(10, 1).is_err());
    assert!(exact_qcnn_spt_circuit(6, 1).is_err());
}

#[test]
fn spt_deep_phase_ground_state_is_near_one() {
    let h = build_cluster_ising(15, 0.0, 10.0, Boundary::Open).unwrap();
    let gs = ground_state(&h, &GroundStateOptions::default()).unwrap();
    let f = exact_qcnn_spt_output(&gs.state, 1).unwrap();
    assert!(f > 0.999, "{f}");
    let h = build_cluster_ising(15, 0.0, 0.0, Boundary::Open).unwrap();
    let gs = ground_state(&h, &GroundStateOptions::default()).unwrap();
    assert!(exact_qcnn_spt_output(&gs.state, 1).unwrap().abs() < 1e-6);
}

#[test]
fn exact_outputs_are_bounded_and_phase_invariant() {
    let mut rng = RngStream::new(22).rng();
    let spt = exact_qcnn_spt_circuit(9, 1).unwrap();
    let fm = exact_qcnn_fm_circuit(9, 2).unwrap();
    for _ in 0..100 {
        let s = StateVector::random(9, &mut rng);
        let phase = C64::from_polar(1.0, rng.random_range(0.0..6.28));
        let rotated = StateVector::new(s.amplitudes().iter().map(|a| a * phase).collect()).unwrap();
        for c in [&spt, &fm] {
            let f = c.output(&s).unwrap();
            assert!(f.abs() <= 1.0 + 1e-12);
            assert!((c.output(&rotated).unwrap() - f).abs() < 1e-12);
        }
    }
}

#[test]
fn gell_mann_basis() {
    for d in [2, 4, 8] {
        let g = gell_mann(d);
        assert_eq!(g.len(), d * d - 1);
        for (i, a) in g.iter().enumerate() {
            assert!(frobenius_norm(&(a - &dagger(&a.view())).view()) < 1e-15);
            for (j, b) in g.iter().enumerate() {
                let tr: C64 = a.dot(b).diag().sum();
                let want = if i == j { 2.0 } else { 0.0 };
                assert!((tr.re - want).abs() < 1e-12 && tr.im.abs() < 1e-12);
            }
        }
    }
}

#[test]
fn parameterized_gates_are_unitary() {
    let mut rng = RngStream::new(23).rng();
    for d in [2, 4, 8] {
        let g = gell_mann(d);
        let theta: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u = parameterized_unitary(&theta, &g).unwrap();
        assert!(unitarity_deviation(&u.view()) <= 1e-10);
    }
}

#[test]
fn layout_parameter_counts() {
    let fm = QcnnLayout::new(15, Pooling::Halving, None).unwrap();
    assert_eq!(fm.depth, 2);
    assert_eq!(fm.layers().unwrap().last().unwrap().len(), 3);
    // Two convolution rows and one controlled pair per layer, then a 3-qubit gate.
    assert_eq!(fm.n_params().unwrap(), 2 * (30 + 6) + 63);
    let spt = QcnnLayout::new(15, Pooling::Thirding, None).unwrap();
    assert_eq!(spt.depth, 1);
    assert_eq!(spt.fc_qubits().unwrap(), vec![4, 7, 10]);
    assert_eq!(spt.n_params().unwrap(), 30 + 12 + 63);
    assert!(QcnnLayout::new(10, Pooling::Thirding, Some(1)).is_err());
}

#[test]
fn zero_parameters_read_the_raw_output_qubit() {
    let mut rng = RngStream::new(24).rng();
    for layout in [QcnnLayout::new(9, Pooling::Halving, None).unwrap(), QcnnLayout::new(9, Pooling::Thirding, None).unwrap()] {
        let theta = vec![0.0; layout.n_params().unwrap()];
        let s = StateVector::random(9, &mut rng);
        let q = layout.output_qubit().unwrap();
        let want = s.expectation_string(&PauliString::from_sites(9, 1.0, &[(q, Pauli::Z)]).unwrap()).unwrap();
        assert!((qcnn_forward(&theta, &layout, &s).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn forward_matches_dense_construction() {
    let mut rng = RngStream::new(25).rng();
    for layout in [QcnnLayout::new(9, Pooling::Halving, None).unwrap(), QcnnLayout::new(9, Pooling::Thirding, None).unwrap()] {
        let theta: Vec<f64> = (0..layout.n_params().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = QcnnModel::new(&layout, &theta).unwrap();
        let s = StateVector::random(9, &mut rng);
        let u = dense_circuit(&model.circuit);
        let out = StateVector::new(u.dot(&s.to_array()).to_vec()).unwrap();
        let want = expect(&out, &z_string(9, &[layout.output_qubit().unwrap()]));
        assert!((model.forward(&s).unwrap() - want).abs() < 1e-9);
        // Pooling keeps the norm.
        assert!((model.circuit.apply(&s).unwrap().norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn mse_examples() {
    assert_eq!(mse_loss(&[0.3, 1.0], &[0.3, 1.0]).unwrap(), 0.0);
    assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert!(mse_loss(&[1.0], &[0.0, 1.0]).is_err());
    let mut rng = RngStream::new(26).rng();
    let f: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
    let diffs: Vec<f64> = f.iter().zip(&y).map(|(a, b)| a - b).collect();
    let two_pass = diffs.iter().map(|d| d * d).sum::<f64>() / 50.0;
    assert!((mse_loss(&f, &y).unwrap() - two_pass).abs() < 1e-14);
}

#[test]
fn spsa_expected_step_follows_gradient() {
    let mut rng = RngStream::new(27).rng();
    let n = 8;
    let diag: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.3).collect();
    let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut loss = |t: &[f64]| -> qphase_core::Result<f64> { Ok(t.iter().zip(&diag).map(|(x, d)| 0.5 * d * x * x + 0.1 * x).sum()) };
    let true_grad: Vec<f64> = theta.iter().zip(&diag).map(|(x, d)| d * x + 0.1).collect();
    let mut mean = vec![0.0; n];
    for _ in 0..1000 {
        let g = spsa_gradient(&mut loss, &theta, 0.05, &mut rng).unwrap();
        for (m, gi) in mean.iter_mut().zip(g) {
            *m += gi / 1000.0;
        }
    }
    let dot: f64 = mean.iter().zip(&true_grad).map(|(a, b)| a * b).sum();
    let na = mean.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = true_grad.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(dot / (na * nb) > 0.9, "cosine {}", dot / (na * nb));
}

fn toy_dataset(l: usize, points: &[(f64, f64)]) -> Vec<StateVector> {
    points
        .iter()
        .map(|&(j1, j2)| ground_state(&build_cluster_ising(l, j1, j2, Boundary::Open).unwrap(), &GroundStateOptions::default()).unwrap().state)
        .collect()
}

#[test]
fn zero_gain_leaves_parameters_alone() {
    let layout = QcnnLayout::new(6, Pooling::Halving, None).unwrap();
    let states = toy_dataset(6, &[(0.0, 0.0), (2.0, 0.0)]);
    let labels = [0.0, 1.0];
    let theta0 = init_params(&layout, &mut RngStream::new(1).rng()).unwrap();
    let mut config = SpsaConfig::exact(5);
    config.gains.a = 0.0;
    let out = spsa_train(&Dataset { states: &states, labels: &labels }, None, &layout, theta0.clone(), &config, &mut RngStream::new(2).rng())
        .unwrap();
    assert_eq!(out.theta, theta0);
    assert!(out.log.windows(2).all(|w| w[0].train_mse == w[1].train_mse));
}

#[test]
fn spsa_training_reduces_validation_loss() {
    let l = 9;
    let layout = QcnnLayout::new(l, Pooling::Halving, None).unwrap();
    let grid: Vec<f64> = (0..20).map(|i| 2.0 * i as f64 / 19.0).collect();
    let train_pts: Vec<(f64, f64)> = grid.iter().map(|&j1| (j1, 0.0)).collect();
    let labels: Vec<f64> = grid.iter().map(|&j1| if j1 > 1.0 { 1.0 } else { 0.0 }).collect();
    let val_pts = [(0.2, 0.1), (0.5, 0.0), (1.6, 0.2), (1.9, 0.1)];
    let val_labels = [0.0, 0.0, 1.0, 1.0];
    let states = toy_dataset(l, &train_pts);
    let val_states = toy_dataset(l, &val_pts);
    let rng = RngStream::new(3);
    let theta0 = init_params(&layout, &mut rng.child("init").rng()).unwrap();
    let initial = mse_loss(&QcnnModel::new(&layout, &theta0).unwrap().forward_batch(&val_states).unwrap(), &val_labels).unwrap();
    let config = SpsaConfig::exact(150);
    let out = spsa_train(
        &Dataset { states: &states, labels: &labels },
        Some(&Dataset { states: &val_states, labels: &val_labels }),
        &layout,
        theta0,
        &config,
        &mut rng.child("spsa").rng(),
    )
    .unwrap();
    assert_eq!(out.evaluations, 6_000);
    assert_eq!(out.training_copies, 0);
    let last = out.log.last().unwrap().validation_mse.unwrap();
    assert!(last < initial, "{last} vs {initial}");

    let ck = QcnnCheckpoint::new(layout, &out, config, 3);
    let path = std::env::temp_dir().join(format!("qcnn-ck-{}.json", std::process::id()));
    ck.save_json(&path).unwrap();
    assert_eq!(QcnnCheckpoint::load_json(&path).unwrap(), ck);
    std::fs::remove_file(path).ok();
}

#[test]
fn finite_shot_accounting() {
    let layout = QcnnLayout::new(6, Pooling::Halving, None).unwrap();
    let states = toy_dataset(6, &[(0.0, 0.0), (2.0, 0.0), (0.5, 0.0)]);
    let labels = [0.0, 1.0, 0.0];
    let config = SpsaConfig { epochs: 4, gains: SpsaGains::standard(4), mode: Evaluation::Shots(1000) };
    let theta0 = init_params(&layout, &mut RngStream::new(4).rng()).unwrap();
    let out = spsa_train(&Dataset { states: &states, labels: &labels }, None, &layout, theta0, &config, &mut RngStream::new(5).rng()).unwrap();
    assert_eq!(out.evaluations, 3 * 2 * 4);
    assert_eq!(out.training_copies, 3 * 2 * 4 * 1000);
}
