//! Result files: nested JSON and flat CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use qphase_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::methods::{RunResult, RESULT_SCHEMA_VERSION};

pub const RESULTS_FORMAT: &str = "qphase-results";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub format: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub results: Vec<RunResult>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Aggregate error curves: one row per (method, param, n); `state` is `all`.
pub fn write_curves_csv<W: std::io::Write>(out: W, results: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["schema_version", "config_hash", "method", "state", "param_name", "param", "n", "alpha", "beta", "f"])
        .map_err(csv_err)?;
    for r in results {
        for c in &r.curves {
            w.write_record([
                RESULT_SCHEMA_VERSION.to_string(),
                r.config_hash.clone(),
                r.method.to_string(),
                "all".into(),
                r.curve_param.clone(),
                c.param.to_string(),
                c.n.to_string(),
                c.alpha.to_string(),
                c.beta.to_string(),
                String::new(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-state outputs: one row per (method, state, param).
pub fn write_states_csv<W: std::io::Write>(out: W, results: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["schema_version", "config_hash", "method", "state", "j1", "j2", "label", "param_name", "param", "f"])
        .map_err(csv_err)?;
    for r in results {
        for o in &r.outputs {
            w.write_record([
                RESULT_SCHEMA_VERSION.to_string(),
                r.config_hash.clone(),
                r.method.to_string(),
                o.state.to_string(),
                o.j1.to_string(),
                o.j2.to_string(),
                o.label.to_string(),
                if o.param.is_some() { r.curve_param.clone() } else { String::new() },
                o.param.map(|p| p.to_string()).unwrap_or_default(),
                o.value.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<ResultsFile> {
    let f: ResultsFile = serde_json::from_slice(&fs::read(path)?)?;
    if f.format != RESULTS_FORMAT || f.schema_version != RESULT_SCHEMA_VERSION {
        return Err(Error::InvalidConfig(format!("{} is not a v{RESULT_SCHEMA_VERSION} results file", path.display())));
    }
    Ok(f)
}

/// Fails when `<stem>.json` in `dir` holds results of another config hash.
pub fn ensure_writable(dir: &Path, stem: &str, config_hash: &str) -> Result<()> {
    let json_path = dir.join(format!("{stem}.json"));
    if json_path.exists() {
        let old = read_results(&json_path)?;
        if old.config_hash != config_hash {
            return Err(Error::InvalidConfig(format!(
                "{} holds results of config {}; refusing to overwrite with {config_hash}",
                json_path.display(),
                old.config_hash,
            )));
        }
    }
    Ok(())
}

/// Writes `<stem>.json`, `<stem>.csv` (curves) and `<stem>-states.csv` into
/// `dir`. Existing files written under another config hash are never replaced.
pub fn emit_results(results: &[RunResult], dir: &Path, stem: &str, formats: &[Format]) -> Result<Vec<PathBuf>> {
    let first = results.first().ok_or_else(|| Error::InvalidConfig("no results to emit".into()))?;
    if results.iter().any(|r| r.config_hash != first.config_hash) {
        return Err(Error::InvalidConfig("results from different configurations in one file".into()));
    }
    ensure_writable(dir, stem, &first.config_hash)?;
    fs::create_dir_all(dir)?;
    let json_path = dir.join(format!("{stem}.json"));
    let mut written = Vec::new();
    for f in formats {
        match f {
            Format::Json => {
                let file = ResultsFile {
                    format: RESULTS_FORMAT.into(),
                    schema_version: RESULT_SCHEMA_VERSION,
                    config_hash: first.config_hash.clone(),
                    results: results.to_vec(),
                };
                fs::write(&json_path, serde_json::to_string_pretty(&file)?)?;
                written.push(json_path.clone());
            }
            Format::Csv => {
                let curves = dir.join(format!("{stem}.csv"));
                write_curves_csv(fs::File::create(&curves)?, results)?;
                let states = dir.join(format!("{stem}-states.csv"));
                write_states_csv(fs::File::create(&states)?, results)?;
                written.extend([curves, states]);
            }
        }
    }
    Ok(written)
}
