use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sweep::{GammaSweepResult, SweepConfig};
use super::HarnessError;

/// Everything written by [`persist_results`], as read back by [`reload_results`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub config_hash: String,
    pub config: SweepConfig,
    pub law: String,
    pub version: String,
    /// Gates and ε ladders are engineering choices with no convergence rate
    /// behind them.
    pub note: String,
    pub result: GammaSweepResult,
}

pub fn config_hash(cfg: &SweepConfig) -> Result<String, HarnessError> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Io(std::io::Error::other(e.to_string())))
}

/// Writes `manifest.json`, `results.csv` with one row per `ε`, and
/// `profiles.csv` in long format `(eps, x, field, value)` into `dir`.
pub fn persist_results(result: &GammaSweepResult, cfg: &SweepConfig, dir: &Path) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let manifest = SweepManifest {
        config_hash: config_hash(cfg)?,
        config: cfg.clone(),
        law: format!("{:?}, ell = {}", cfg.psi, cfg.ell),
        version: env!("CARGO_PKG_VERSION").to_string(),
        note: "acceptance gates and eps ladders are engineering choices".into(),
        result: result.clone(),
    };
    let path = dir.join("manifest.json");
    write_atomic(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    let rows = (0..result.eps_list.len()).map(|i| {
        vec![
            result.eps_list[i].to_string(),
            result.discrete_min[i].to_string(),
            result.limit_value.to_string(),
            result.rel_errors[i].to_string(),
        ]
    });
    write_atomic(
        &dir.join("results.csv"),
        &csv_bytes(&["eps", "discrete_min", "limit", "rel_error"], rows)?,
    )?;
    let mut rows = Vec::new();
    for rec in &result.records {
        let n = rec.v.len();
        let h = cfg.length / (n - 1).max(1) as f64;
        for k in 0..n {
            let x = (h * k as f64).to_string();
            rows.push(vec![rec.eps.to_string(), x.clone(), "u".into(), rec.u[k].to_string()]);
            rows.push(vec![rec.eps.to_string(), x, "v".into(), rec.v[k].to_string()]);
        }
    }
    write_atomic(
        &dir.join("profiles.csv"),
        &csv_bytes(&["eps", "x", "field", "value"], rows.into_iter())?,
    )?;
    Ok(path)
}

pub fn reload_results(dir: &Path) -> Result<SweepManifest, HarnessError> {
    let bytes = std::fs::read(dir.join("manifest.json"))?;
    Ok(serde_json::from_slice(&bytes)?)
}
