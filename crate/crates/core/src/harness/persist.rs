//! On-disk layout of a sweep: `metadata.json`, `results.csv`,
//! `checkpoints.jsonl` and `summary.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::Cell;
use super::sweep::{CellSummary, KCurve, RunMetadata, SpeedupFit, SweepOutput, SweepResult};
use super::trial::{TrialResult, TrialStatus};
use crate::error::{FedError, Result};

pub const METADATA_FILE: &str = "metadata.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const CHECKPOINTS_FILE: &str = "checkpoints.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    n_agents: usize,
    sync_period: usize,
    step_size: f64,
    horizon: usize,
    replication: u64,
    mse: Option<f64>,
    final_error: Option<f64>,
    t_hat: usize,
    wall_ms: u64,
    status: TrialStatus,
    sync_omega_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointRecord {
    cell: usize,
    replication: u64,
    t: usize,
    error: f64,
    omega: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Summary {
    cells: Vec<CellSummary>,
    speedup: Vec<SpeedupFit>,
    k_curves: Vec<KCurve>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FedError::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FedError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FedError::format(path, e.to_string()))
}

fn cell_index(cells: &[CellSummary], cell: &Cell) -> usize {
    cells.iter().position(|c| c.cell == *cell).expect("trial cell is summarized")
}

/// Writes all four files into `dir`, creating it if needed.
pub fn persist(output: &SweepOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FedError::io(dir, e))?;
    write_json(&dir.join(METADATA_FILE), &output.metadata)?;
    let r = &output.result;
    write_json(
        &dir.join(SUMMARY_FILE),
        &Summary { cells: r.cells.clone(), speedup: r.speedup.clone(), k_curves: r.k_curves.clone() },
    )?;

    let path = dir.join(RESULTS_FILE);
    let mut csv = csv::Writer::from_path(&path).map_err(|e| FedError::format(&path, e.to_string()))?;
    for t in &r.trials {
        csv.serialize(ResultRow {
            n_agents: t.cell.n_agents,
            sync_period: t.cell.sync_period,
            step_size: t.cell.step_size,
            horizon: t.cell.horizon,
            replication: t.replication,
            mse: t.mse,
            final_error: t.final_error,
            t_hat: t.t_hat,
            wall_ms: t.wall_ms,
            status: t.status,
            sync_omega_max: t.sync_omega_max,
        })
        .map_err(|e| FedError::format(&path, e.to_string()))?;
    }
    csv.flush().map_err(|e| FedError::io(&path, e))?;

    let path = dir.join(CHECKPOINTS_FILE);
    let file = File::create(&path).map_err(|e| FedError::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for t in &r.trials {
        let cell = cell_index(&r.cells, &t.cell);
        for ((&time, &error), &omega) in t.checkpoints.iter().zip(&t.error_series).zip(&t.omega_series) {
            let rec = CheckpointRecord { cell, replication: t.replication, t: time, error, omega };
            let line = serde_json::to_string(&rec).map_err(|e| FedError::format(&path, e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| FedError::io(&path, e))?;
        }
    }
    out.flush().map_err(|e| FedError::io(&path, e))
}

/// Reads back what [`persist`] wrote.
/// Checkpoint times, errors and dispersions of one trial.
type Series = (Vec<usize>, Vec<f64>, Vec<f64>);

pub fn load(dir: &Path) -> Result<SweepOutput> {
    let metadata: RunMetadata = read_json(&dir.join(METADATA_FILE))?;
    let summary: Summary = read_json(&dir.join(SUMMARY_FILE))?;

    let path = dir.join(CHECKPOINTS_FILE);
    let file = File::open(&path).map_err(|e| FedError::io(&path, e))?;
    let mut series: BTreeMap<(usize, u64), Series> = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| FedError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CheckpointRecord = serde_json::from_str(&line).map_err(|e| FedError::format(&path, e.to_string()))?;
        let entry = series.entry((rec.cell, rec.replication)).or_default();
        entry.0.push(rec.t);
        entry.1.push(rec.error);
        entry.2.push(rec.omega);
    }

    let path = dir.join(RESULTS_FILE);
    let mut csv = csv::Reader::from_path(&path).map_err(|e| FedError::format(&path, e.to_string()))?;
    let mut trials = Vec::new();
    for row in csv.deserialize::<ResultRow>() {
        let row = row.map_err(|e| FedError::format(&path, e.to_string()))?;
        let cell = Cell {
            n_agents: row.n_agents,
            sync_period: row.sync_period,
            step_size: row.step_size,
            horizon: row.horizon,
        };
        let idx = summary
            .cells
            .iter()
            .position(|c| c.cell == cell)
            .ok_or_else(|| FedError::format(&path, format!("row cell {cell:?} missing from the summary")))?;
        let (checkpoints, error_series, omega_series) = series.remove(&(idx, row.replication)).unwrap_or_default();
        trials.push(TrialResult {
            cell,
            replication: row.replication,
            status: row.status,
            mse: row.mse,
            final_error: row.final_error,
            t_hat: row.t_hat,
            wall_ms: row.wall_ms,
            checkpoints,
            error_series,
            omega_series,
            sync_omega_max: row.sync_omega_max,
        });
    }
    Ok(SweepOutput {
        metadata,
        result: SweepResult { cells: summary.cells, speedup: summary.speedup, k_curves: summary.k_curves, trials },
    })
}
