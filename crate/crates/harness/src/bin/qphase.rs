use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use qphase_core::npclassify::{linspace, PartitionedNpClassifier};
use qphase_core::qcnn::QcnnCheckpoint;
use qphase_core::shadows::write_snapshot_log;
use qphase_core::{Error, Result, RngStream};
use qphase_harness::config::{default_n_grid, BackendSpec, ExperimentConfig, Method, Task};
use qphase_harness::dataset::{generate_dataset, load_dataset, manifest_path, read_manifest, Dataset};
use qphase_harness::methods::{
    self, check_dataset, finish, npt_classifiers, npt_evaluate, RunResult, ShotLedger, APPROXIMATE_NOTE,
};
use qphase_harness::results::{emit_results, ensure_writable, read_results, Format};

#[derive(Parser)]
#[command(name = "qphase", version, about = "Phase classification of the cluster-Ising chain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and checkpoint the training and test ground states.
    GenData(Common),
    /// Collect training shadows and write one classifier per value of `a`.
    TrainNpt(Common),
    /// Evaluate the saved classifiers on the test states.
    EvalNpt(Common),
    /// Run the order-parameter test or the exact QCNN.
    RunBaseline(Common),
    /// Train the QCNN with SPSA and evaluate it.
    TrainQcnn(Common),
    /// Run methods end to end and tabulate their error curves.
    Curves(Common),
    /// Summarize every results file in the output directory.
    Report(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Task used when no config file is given.
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// `statevector`, `mps` or `mps:<chi>`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, default_value = "qphase-out")]
    out_dir: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated values or `lo:hi:count`.
    #[arg(long, allow_hyphen_values = true)]
    a_grid: Option<String>,
    #[arg(long)]
    t_state: Option<usize>,
    /// Comma-separated values or `lo:hi` (inclusive).
    #[arg(long)]
    n_grid: Option<String>,
    #[arg(long)]
    noise_p: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "json,csv")]
    format: Vec<Format>,
}

fn parse_a_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("cannot parse a-grid {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return Ok(linspace(lo, hi, count));
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn parse_n_grid(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidConfig(format!("cannot parse n-grid {s:?}"));
    if let Some((lo, hi)) = s.split_once(':') {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let mut c = ExperimentConfig::load_json(path)?;
                if let Some(l) = self.l {
                    c.dataset.l = l;
                }
                c
            }
            None => ExperimentConfig::default_for(self.task.unwrap_or(Task::Spt), self.l.unwrap_or(15)),
        };
        if let Some(b) = &self.backend {
            cfg.dataset.backend = b.parse::<BackendSpec>()?;
        }
        if let Some(k) = self.k {
            cfg.npt.k = k;
        }
        if let Some(a) = &self.a_grid {
            cfg.npt.a_grid = parse_a_grid(a)?;
        }
        if let Some(t) = self.t_state {
            cfg.npt.t_state = t;
        }
        if let Some(n) = &self.n_grid {
            cfg.n_grid = parse_n_grid(n)?;
        }
        if let Some(p) = self.noise_p {
            cfg.npt.noise_p = p;
        }
        if cfg.n_grid.is_empty() {
            cfg.n_grid = default_n_grid();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes the resolved config, refusing an output directory that belongs to another one.
fn claim_out_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join("config.json");
    if path.exists() {
        let old: ExperimentConfig = serde_json::from_slice(&fs::read(&path)?)?;
        if old.dataset != cfg.dataset || old.task != cfg.task {
            return Err(Error::InvalidConfig(format!(
                "{} was set up for another dataset; choose a fresh --out-dir",
                dir.display()
            )));
        }
    }
    cfg.save_json(&path)
}

fn ensure_dataset(dir: &Path, cfg: &ExperimentConfig) -> Result<Dataset> {
    let ddir = dir.join("dataset");
    if manifest_path(&ddir).exists() {
        let m = read_manifest(&ddir)?;
        if m.spec == cfg.dataset && m.complete {
            return load_dataset(&ddir);
        }
        if m.spec != cfg.dataset {
            return Err(Error::InvalidConfig(format!("{} holds a dataset for another specification", ddir.display())));
        }
    }
    let t = Instant::now();
    let d = generate_dataset(&cfg.dataset, Some(&ddir))?;
    eprintln!(
        "dataset: {} training and {} test states at L = {} in {:.1}s -> {}",
        d.train.len(),
        d.test.len(),
        cfg.dataset.l,
        t.elapsed().as_secs_f64(),
        ddir.display()
    );
    Ok(d)
}

fn emit(results: &[RunResult], c: &Common, stem: &str) -> Result<()> {
    for p in emit_results(results, &c.out_dir, stem, &c.format)? {
        eprintln!("wrote {}", p.display());
    }
    for r in results {
        print_summary(r);
    }
    Ok(())
}

fn print_summary(r: &RunResult) {
    let n1 = r.best_error_sum(1).map_or("-".into(), |e| format!("{e:.4}"));
    let ctp = r.copies_to_power(0.05, 0.01).map_or("-".into(), |n| n.to_string());
    println!(
        "{:<12} task={} L={} seed={} best(α1+β1)={} n*(α≤0.05, β≤0.01)={} training copies={} ({}) {:.1}s",
        r.method.id(),
        r.task,
        r.l,
        r.seed,
        n1,
        ctp,
        r.ledger.training_copies,
        r.ledger.formula,
        r.wall_clock_s
    );
    for n in &r.notes {
        println!("  note: {n}");
    }
}

const TRAINING_FILE: &str = "npt-training.json";

#[derive(serde::Serialize, serde::Deserialize)]
struct NptTrainingRecord {
    config_hash: String,
    seed: u64,
    ledger: ShotLedger,
    classifiers: Vec<String>,
}

fn train_npt(c: &Common, cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    let stream = RngStream::new(c.seed).child(Method::Npt.id());
    let training = methods::npt_train(data, &cfg.npt, &stream)?;
    let log = c.out_dir.join("snapshots.jsonl");
    let mut w = std::io::BufWriter::new(fs::File::create(&log)?);
    for (i, set) in training.snapshots.iter().enumerate() {
        write_snapshot_log(&mut w, i, set)?;
    }
    drop(w);
    let cdir = c.out_dir.join("classifiers");
    fs::create_dir_all(&cdir)?;
    let mut names = Vec::new();
    for (g, cl) in npt_classifiers(&training, &cfg.npt, c.seed)?.iter().enumerate() {
        let name = format!("a-{g:03}.json");
        cl.save_json(&cdir.join(&name))?;
        names.push(name);
    }
    let rec = NptTrainingRecord { config_hash: cfg.hash(c.seed), seed: c.seed, ledger: training.ledger.clone(), classifiers: names };
    fs::write(c.out_dir.join(TRAINING_FILE), serde_json::to_string_pretty(&rec)?)?;
    eprintln!("wrote {} and {} classifiers in {}", log.display(), rec.classifiers.len(), cdir.display());
    println!("training copies: {} ({})", rec.ledger.training_copies, rec.ledger.formula);
    Ok(())
}

fn eval_npt(c: &Common, cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    let start = Instant::now();
    let rec: NptTrainingRecord = serde_json::from_slice(&fs::read(c.out_dir.join(TRAINING_FILE)).map_err(|e| {
        Error::InvalidConfig(format!("no trained classifiers in {} (run train-npt first): {e}", c.out_dir.display()))
    })?)?;
    if rec.config_hash != cfg.hash(c.seed) {
        return Err(Error::InvalidConfig("classifiers were trained under another config or seed".into()));
    }
    check_dataset(data, cfg)?;
    let classifiers = rec
        .classifiers
        .iter()
        .map(|n| PartitionedNpClassifier::load_json(&c.out_dir.join("classifiers").join(n)))
        .collect::<Result<Vec<_>>>()?;
    let (outputs, curves, approximate) = npt_evaluate(&classifiers, data, cfg)?;
    let notes = if approximate { vec![APPROXIMATE_NOTE.to_string()] } else { Vec::new() };
    let r = finish(Method::Npt, data, cfg, c.seed, "a", outputs, curves, rec.ledger, notes, start);
    emit(&[r], c, "npt")
}

fn train_qcnn(c: &Common, cfg: &ExperimentConfig, data: &Dataset) -> Result<()> {
    let start = Instant::now();
    check_dataset(data, cfg)?;
    let stream = RngStream::new(c.seed).child(Method::Qcnn.id());
    let (ckpt, outcome) = methods::train_qcnn(data, cfg, &stream)?;
    let path = c.out_dir.join("qcnn-checkpoint.json");
    ckpt.save_json(&path)?;
    eprintln!("wrote {}", path.display());
    let reloaded = QcnnCheckpoint::load_json(&path)?;
    let f = methods::qcnn_outputs(&reloaded, &data.test, data.spec.l)?;
    let labels = data.test_labels();
    let curves = methods::binomial_curves(&f, &labels, cfg.qcnn.threshold, &cfg.alpha_levels, &cfg.n_grid)?;
    let outputs = data
        .test
        .iter()
        .zip(&f)
        .enumerate()
        .map(|(i, (s, &value))| methods::StateOutput { state: i, j1: s.j1, j2: s.j2, label: s.label, param: None, value })
        .collect();
    let ledger = ShotLedger::spsa(&data.train_labels(), cfg.qcnn.epochs, cfg.qcnn.evaluation);
    if ledger.evaluations != outcome.evaluations {
        return Err(Error::NumericalFailure("SPSA evaluation count disagrees with the ledger".into()));
    }
    let r = finish(Method::Qcnn, data, cfg, c.seed, "alpha_level", outputs, curves, ledger, Vec::new(), start);
    emit(&[r], c, "qcnn")
}

fn report(c: &Common) -> Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(&c.out_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut found = 0;
    for p in files {
        let Ok(f) = read_results(&p) else { continue };
        println!("{} (config {})", p.display(), &f.config_hash[..12]);
        for r in &f.results {
            print_summary(r);
            if let Some(mse) = r.validation_mse(None) {
                println!("  validation MSE: {mse:.4}");
            }
            if !r.ledger.is_consistent() {
                println!("  ledger inconsistent: {:?}", r.ledger);
            }
        }
        found += 1;
    }
    if found == 0 {
        return Err(Error::InvalidConfig(format!("no results files in {}", c.out_dir.display())));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::GenData(c)
        | Command::TrainNpt(c)
        | Command::EvalNpt(c)
        | Command::RunBaseline(c)
        | Command::TrainQcnn(c)
        | Command::Curves(c)
        | Command::Report(c) => c.clone(),
    };
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    if let Command::Report(c) = &cli.command {
        return report(c);
    }
    let cfg = common.resolve()?;
    claim_out_dir(&common.out_dir, &cfg)?;
    let data = ensure_dataset(&common.out_dir, &cfg)?;
    let c = &common;
    let stem = match &cli.command {
        Command::EvalNpt(_) => Some(Method::Npt.id()),
        Command::RunBaseline(_) => Some(c.method.unwrap_or(Method::OrderParam).id()),
        Command::TrainQcnn(_) => Some(Method::Qcnn.id()),
        Command::Curves(_) => Some("curves"),
        _ => None,
    };
    if let Some(stem) = stem {
        ensure_writable(&c.out_dir, stem, &cfg.hash(c.seed))?;
    }
    match cli.command {
        Command::GenData(_) => Ok(()),
        Command::TrainNpt(_) => train_npt(c, &cfg, &data),
        Command::EvalNpt(_) => eval_npt(c, &cfg, &data),
        Command::RunBaseline(_) => {
            let m = c.method.unwrap_or(Method::OrderParam);
            if !matches!(m, Method::OrderParam | Method::ExactQcnn) {
                return Err(Error::InvalidConfig(format!("{m} is not a baseline; use order-param or exact-qcnn")));
            }
            let r = methods::run_method(m, &data, &cfg, c.seed)?;
            emit(&[r], c, m.id())
        }
        Command::TrainQcnn(_) => train_qcnn(c, &cfg, &data),
        Command::Curves(_) => {
            let ms: Vec<Method> = match c.method {
                Some(m) => vec![m],
                None => Method::ALL.to_vec(),
            };
            let mut results = Vec::new();
            for m in ms {
                let t = Instant::now();
                results.push(methods::run_method(m, &data, &cfg, c.seed)?);
                eprintln!("{m}: {:.1}s", t.elapsed().as_secs_f64());
            }
            emit(&results, c, "curves")
        }
        Command::Report(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
