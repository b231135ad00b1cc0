use proptest::prelude::*;
use qphase_core::pauli::o_spt;
use qphase_core::qcnn::Evaluation;
use qphase_core::{Error, QuantumState};
use qphase_harness::config::{winding_number, Coupling, TestRegion, TrainPoint};
use qphase_harness::dataset::{dataset_points, read_manifest};
use qphase_harness::methods::ShotLedger;
use qphase_harness::results::{read_results, write_curves_csv};
use qphase_harness::*;

fn small_config(task: Task, l: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default_for(task, l);
    c.dataset.test.count = 12;
    c.n_grid = vec![1, 2, 5];
    c.npt.a_grid = vec![-0.5, 0.0, 0.5];
    c.qcnn.epochs = 6;
    c.order_param.mc_samples = 10_000;
    if task == Task::Spt {
        c.npt.k = 2;
    }
    c
}

#[test]
fn two_point_dataset_is_separable() {
    let spec = DatasetSpec {
        l: 7,
        boundary: Default::default(),
        train: vec![TrainPoint { j1: 0.0, j2: 0.0, label: 0 }, TrainPoint { j1: 0.0, j2: 2.0, label: 1 }],
        test: TestRegion { j1: [0.0, 0.0], j2: [0.0, 0.0], count: 1, rule: PhaseRule::Winding { target: 2 } },
        backend: BackendSpec::Statevector,
        seed: 1,
        note: String::new(),
    };
    let d = generate_dataset(&spec, None).unwrap();
    assert_eq!(d.train.len(), 2);
    let o = o_spt(7).unwrap();
    let v0 = d.train[0].state.expectation_string(&o).unwrap();
    let v1 = d.train[1].state.expectation_string(&o).unwrap();
    assert!(v0.abs() < 1e-9, "{v0}");
    assert!(v1 > 0.5, "{v1}");
}

#[test]
fn default_spt_spec_counts_and_labels() {
    let spec = DatasetSpec::default_for(Task::Spt, 15);
    let pts = dataset_points(&spec).unwrap();
    let train: Vec<_> = pts.iter().filter(|p| p.0 == dataset::Split::Train).collect();
    let test: Vec<_> = pts.iter().filter(|p| p.0 == dataset::Split::Test).collect();
    assert_eq!(train.len(), 20);
    assert_eq!(test.len(), 100);
    for &&(_, j1, j2, y) in &test {
        assert!((0.0..=0.5).contains(&j1) && (0.8..=1.2).contains(&j2));
        assert_eq!(y, u8::from(j2 > 1.0));
    }
    assert_eq!(train.iter().filter(|p| p.3 == 1).count(), 10);
}

#[test]
fn fm_test_labels_follow_the_winding_boundary() {
    let spec = DatasetSpec::default_for(Task::Fm, 9);
    for (_, j1, j2, y) in dataset_points(&spec).unwrap() {
        assert_eq!(y, u8::from(j1 > 1.0 + j2), "({j1}, {j2})");
    }
}

#[test]
fn winding_number_examples() {
    assert_eq!(winding_number(0.0, 0.0), Some(0));
    assert_eq!(winding_number(0.0, 2.0), Some(2));
    assert_eq!(winding_number(2.0, 0.0), Some(1));
    assert_eq!(winding_number(1.2, 0.5), Some(0));
    assert_eq!(winding_number(1.5, 0.3), Some(1));
    assert_eq!(winding_number(0.0, 1.0), None);
    assert_eq!(winding_number(1.0, 0.0), None);
    // Antiferromagnetic side.
    assert_eq!(winding_number(-2.0, 0.0), Some(1));
}

proptest! {
    #[test]
    fn winding_matches_thresholds_on_the_axes(x in 0.0f64..3.0) {
        prop_assume!((x - 1.0).abs() > 1e-9);
        let spt = PhaseRule::Winding { target: 2 };
        let fm = PhaseRule::Winding { target: 1 };
        prop_assert_eq!(spt.label(0.0, x).unwrap(), u8::from(x > 1.0));
        prop_assert_eq!(fm.label(x, 0.0).unwrap(), u8::from(x > 1.0));
    }

    #[test]
    fn winding_in_the_spt_box_is_the_j2_threshold(j1 in 0.0f64..0.5, j2 in 0.8f64..1.2) {
        prop_assume!((j2 - 1.0).abs() > 1e-9);
        let t = PhaseRule::Threshold { coupling: Coupling::J2, value: 1.0 };
        prop_assert_eq!(PhaseRule::Winding { target: 2 }.label(j1, j2).unwrap(), t.label(j1, j2).unwrap());
    }
}

#[test]
fn inconsistent_training_label_is_rejected() {
    let mut spec = DatasetSpec::default_for(Task::Spt, 6);
    spec.train[0].label = 1;
    assert!(matches!(spec.validate(), Err(Error::InvalidConfig(_))));
    let mut spec = DatasetSpec::default_for(Task::Spt, 6);
    spec.test.count = 0;
    assert!(spec.validate().is_err());
}

#[test]
fn checkpoints_are_deterministic_and_reload() {
    let mut spec = DatasetSpec::default_for(Task::Fm, 6);
    spec.test.count = 5;
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let d = generate_dataset(&spec, Some(&a)).unwrap();
    generate_dataset(&spec, Some(&b)).unwrap();
    let (ma, mb) = (read_manifest(&a).unwrap(), read_manifest(&b).unwrap());
    assert!(ma.complete);
    assert_eq!(ma.entries.len(), 25);
    assert_eq!(ma, mb);
    let back = load_dataset(&a).unwrap();
    assert_eq!(back.spec, spec);
    for (x, y) in d.test.iter().zip(&back.test) {
        assert_eq!((x.j1, x.j2, x.label), (y.j1, y.j2, y.label));
        let (QuantumState::Dense(u), QuantumState::Dense(v)) = (&x.state, &y.state) else {
            panic!("statevector backend expected")
        };
        assert_eq!(u.amplitudes(), v.amplitudes());
    }
}

#[test]
fn mps_checkpoint_round_trip() {
    let mut spec = DatasetSpec::default_for(Task::Spt, 8);
    spec.backend = BackendSpec::Mps { chi_max: 16 };
    spec.train = vec![TrainPoint { j1: 0.0, j2: 0.2, label: 0 }, TrainPoint { j1: 0.0, j2: 1.8, label: 1 }];
    spec.test.count = 2;
    let dir = tempfile::tempdir().unwrap();
    let d = generate_dataset(&spec, Some(dir.path())).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    let o = o_spt(8).unwrap();
    for (x, y) in d.train.iter().chain(&d.test).zip(back.train.iter().chain(&back.test)) {
        assert_eq!(x.state.backend_name(), "mps");
        assert_eq!(x.state.expectation_string(&o).unwrap(), y.state.expectation_string(&o).unwrap());
    }
}

#[test]
fn failed_states_leave_a_partial_manifest() {
    let mut spec = DatasetSpec::default_for(Task::Spt, 21);
    spec.backend = BackendSpec::Statevector;
    spec.test.count = 1;
    let dir = tempfile::tempdir().unwrap();
    assert!(generate_dataset(&spec, Some(dir.path())).is_err());
    let m = read_manifest(dir.path()).unwrap();
    assert!(!m.complete);
    assert_eq!(m.failures.len(), 21);
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn ledgers_follow_the_declared_formulas() {
    let cfg = small_config(Task::Spt, 6);
    let data = generate_dataset(&cfg.dataset, None).unwrap();
    let npt = run_method(Method::Npt, &data, &cfg, 1).unwrap();
    assert_eq!(npt.ledger.training_copies, 600);
    assert_eq!(npt.ledger.per_phase, [300, 300]);
    let op = run_method(Method::OrderParam, &data, &cfg, 1).unwrap();
    assert_eq!(op.ledger.training_copies, 0);
    let eq = run_method(Method::ExactQcnn, &data, &cfg, 1).unwrap();
    assert_eq!(eq.ledger.training_copies, 0);
    for r in [&npt, &op, &eq] {
        assert!(r.ledger.is_consistent());
    }
    let l = ShotLedger::spsa(&data.train_labels(), 150, Evaluation::Exact);
    assert_eq!(l.evaluations, 6000);
    assert_eq!(l.training_copies, 0);
    let l = ShotLedger::spsa(&data.train_labels(), 150, Evaluation::Shots(100));
    assert_eq!(l.training_copies, 600_000);
    assert!(l.is_consistent());
}

#[test]
fn qcnn_run_counts_evaluations() {
    let cfg = small_config(Task::Fm, 6);
    let data = generate_dataset(&cfg.dataset, None).unwrap();
    let r = run_method(Method::Qcnn, &data, &cfg, 2).unwrap();
    assert_eq!(r.ledger.evaluations, 20 * 6 * 2);
    assert!(r.ledger.is_consistent());
    assert_eq!(r.outputs.len(), 12);
    assert!(r.outputs.iter().all(|o| o.value.abs() <= 1.0 + 1e-12));
}

#[test]
fn fm_order_parameter_uses_the_bayes_grid() {
    let cfg = small_config(Task::Fm, 6);
    let data = generate_dataset(&cfg.dataset, None).unwrap();
    let r = run_method(Method::OrderParam, &data, &cfg, 0).unwrap();
    assert_eq!(r.curve_param, "log_c");
    assert_eq!(r.curves.len(), cfg.order_param.log_c_grid.len() * cfg.n_grid.len());
    // The lowest threshold rejects every count vector: α = 1, β = 0.
    let low = r.curves.iter().find(|c| c.param == cfg.order_param.log_c_grid[0] && c.n == 1).unwrap();
    assert!(low.alpha > 0.99 || low.beta < 0.01);
}

#[test]
fn mismatched_dataset_is_an_invalid_config() {
    let cfg = small_config(Task::Spt, 6);
    let data = generate_dataset(&cfg.dataset, None).unwrap();
    let mut other = cfg.clone();
    other.dataset.seed = 99;
    assert!(matches!(run_method(Method::Npt, &data, &other, 0), Err(Error::InvalidConfig(_))));
    let mut big = cfg.clone();
    big.npt.k = 3;
    big.npt.n_ent = 5;
    assert!(matches!(run_method(Method::Npt, &data, &big, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn emission_rows_round_trip_and_determinism() {
    let cfg = small_config(Task::Spt, 6);
    let data = generate_dataset(&cfg.dataset, None).unwrap();
    let npt = run_method(Method::Npt, &data, &cfg, 4).unwrap();
    let op = run_method(Method::OrderParam, &data, &cfg, 4).unwrap();

    let mut buf = Vec::new();
    write_curves_csv(&mut buf, std::slice::from_ref(&npt)).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + cfg.npt.a_grid.len() * cfg.n_grid.len());

    let dir = tempfile::tempdir().unwrap();
    emit_results(&[npt.clone(), op.clone()], dir.path(), "both", &[Format::Json, Format::Csv]).unwrap();
    let back = read_results(&dir.path().join("both.json")).unwrap();
    assert_eq!(back.results.len(), 2);
    assert_eq!(back.results, vec![npt.clone(), op]);

    let again = run_method(Method::Npt, &data, &cfg, 4).unwrap();
    let mut buf2 = Vec::new();
    write_curves_csv(&mut buf2, &[again]).unwrap();
    assert_eq!(buf, buf2);
}

#[test]
fn replays_under_another_config_do_not_overwrite() {
    let cfg = small_config(Task::Spt, 6);
    let data = generate_dataset(&cfg.dataset, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = run_method(Method::OrderParam, &data, &cfg, 0).unwrap();
    emit_results(std::slice::from_ref(&a), dir.path(), "r", &[Format::Json]).unwrap();
    emit_results(std::slice::from_ref(&a), dir.path(), "r", &[Format::Json]).unwrap();
    let b = run_method(Method::OrderParam, &data, &cfg, 1).unwrap();
    assert_ne!(a.config_hash, b.config_hash);
    assert!(emit_results(&[b], dir.path(), "r", &[Format::Json]).is_err());
    assert_eq!(read_results(&dir.path().join("r.json")).unwrap().results, vec![a]);
}

#[test]
fn config_json_round_trip_and_unknown_fields() {
    let cfg = ExperimentConfig::default_for(Task::Fm, 15);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    cfg.save_json(&p).unwrap();
    assert_eq!(ExperimentConfig::load_json(&p).unwrap(), cfg);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    v["npt"]["bogus"] = serde_json::json!(1);
    std::fs::write(&p, v.to_string()).unwrap();
    assert!(ExperimentConfig::load_json(&p).is_err());
}

#[test]
fn cli_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bin = env!("CARGO_BIN_EXE_qphase");
    let run = |args: &[&str]| {
        let st = std::process::Command::new(bin)
            .args(args)
            .args(["--out-dir", out.to_str().unwrap(), "--l", "6", "--k", "2", "--n-grid", "1:3", "--a-grid", "-1:1:5"])
            .output()
            .unwrap();
        assert!(st.status.success(), "{args:?}: {}", String::from_utf8_lossy(&st.stderr));
        String::from_utf8(st.stdout).unwrap()
    };
    run(&["gen-data", "--threads", "1"]);
    run(&["train-npt"]);
    let eval = run(&["eval-npt"]);
    assert!(eval.contains("training copies=600"));
    run(&["run-baseline", "--method", "exact-qcnn"]);
    run(&["run-baseline"]);
    let report = run(&["report"]);
    assert!(report.contains("npt") && report.contains("order-param") && report.contains("exact-qcnn"));
    assert!(out.join("classifiers/a-004.json").exists());
    assert!(out.join("snapshots.jsonl").exists());
    let curves = std::fs::read_to_string(out.join("npt.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 5 * 3);
}
