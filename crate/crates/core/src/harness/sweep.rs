//! Grid sweeps: replicated trials, per-cell aggregates, speedup and K-curve fits.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spec::{Cell, ExperimentSpec, SyncRule};
use super::stats::{linear_fit, log_log_fit, mean_se, spearman};
use super::trial::{cell_output_c, run_trial, TrialOptions, TrialResult, TrialStatus};
use crate::algorithms::{theory_constants, AlgorithmInstance, TheoryConstants};
use crate::error::{FedError, Result};
use crate::mdp::policy_transition_matrix;
use crate::sampling::{mixing_diagnostics, MixingEstimate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub output_c: f64,
    pub replications: usize,
    pub diverged: usize,
    /// More than half of the replications diverged.
    pub invalid: bool,
    pub mse_mean: Option<f64>,
    pub mse_se: Option<f64>,
    pub final_error_mean: Option<f64>,
    pub late_blowups: usize,
    pub sync_omega_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupFit {
    /// `"t_over_n"` or the fixed K.
    pub sync_rule: String,
    pub step_size: f64,
    pub horizon: usize,
    pub n_agents: Vec<usize>,
    pub mse: Vec<f64>,
    pub mse_se: Vec<f64>,
    /// Slope of `ln MSE` against `ln N`.
    pub slope: f64,
    pub intercept: f64,
    /// 95% half-width of the slope.
    pub half_width: f64,
    /// `MSE(N_max) / MSE(N_min)`.
    pub end_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KCurve {
    pub n_agents: usize,
    pub step_size: f64,
    pub horizon: usize,
    pub sync_periods: Vec<usize>,
    pub mse: Vec<f64>,
    pub mse_se: Vec<f64>,
    /// Slope of MSE against `log2 K`.
    pub slope: f64,
    pub slope_se: f64,
    pub spearman: f64,
    /// The slope is not below zero by more than two standard errors.
    pub non_decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<CellSummary>,
    pub speedup: Vec<SpeedupFit>,
    pub k_curves: Vec<KCurve>,
    pub trials: Vec<TrialResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub code_version: String,
    pub spec: ExperimentSpec,
    pub theory_constants: TheoryConstants,
    pub beta: f64,
    pub fixed_point: Vec<f64>,
    /// One estimate per behavior chain.
    pub mixing: Vec<MixingEstimate>,
    pub master_seed: u64,
    /// Replication `r` of every cell uses engine trial id `r`.
    pub replication_trials: Vec<u64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub metadata: RunMetadata,
    pub result: SweepResult,
}

fn mixing_estimates(inst: &AlgorithmInstance) -> Result<Vec<MixingEstimate>> {
    inst.behaviors()
        .iter()
        .map(|b| mixing_diagnostics(&policy_transition_matrix(inst.mdp(), b)?))
        .collect()
}

fn tau_for(mixing: &[MixingEstimate], alpha: f64) -> Option<usize> {
    if alpha <= 0.0 || alpha >= 1.0 {
        return None;
    }
    mixing.iter().map(|m| m.tau_alpha(alpha)).max()
}

/// Builds the spec's instance (relative paths against `base_dir`) and sweeps it.
pub fn sweep(spec: &ExperimentSpec, base_dir: &Path, threads: usize) -> Result<SweepOutput> {
    let inst = spec.instance.build(base_dir)?;
    sweep_instance(&inst, spec, threads)
}

/// Runs every `(cell, replication)` on a pool of `threads` workers; results are
/// independent of `threads`.
pub fn sweep_instance(inst: &AlgorithmInstance, spec: &ExperimentSpec, threads: usize) -> Result<SweepOutput> {
    spec.validate()?;
    if spec.instance.kind != inst.kind() {
        return Err(FedError::Config("instance kind differs from the spec".into()));
    }
    let constants = theory_constants(inst)?;
    let mut warnings = Vec::new();
    let mixing = match mixing_estimates(inst) {
        Ok(m) => m,
        Err(e) => {
            warnings.push(format!("mixing estimate unavailable: {e}"));
            Vec::new()
        }
    };
    let base = TrialOptions {
        master_seed: spec.master_seed,
        output_c: spec.output_c,
        norm: spec.norm.unwrap_or(inst.kind().norm()),
        checkpoints: spec.checkpoints,
        record_wall_time: spec.record_wall_time,
        parallel_agents: false,
        tau: None,
    };
    let cells = spec.cells();
    let mut options = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut o = base.clone();
        o.tau = tau_for(&mixing, cell.step_size);
        if let Some(tau) = o.tau {
            let needed = (cell.sync_period + tau).max(2 * tau);
            if cell.horizon <= needed {
                warnings.push(format!("cell {cell}: T = {} is below max(K + tau, 2 tau) = {needed}", cell.horizon));
            }
        }
        options.push(o);
    }
    let jobs: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|c| (0..spec.replications as u64).map(move |r| (c, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| FedError::Config(format!("worker pool: {e}")))?;
    let trials = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, r)| run_trial(inst, &constants, &cells[c], r, &options[c]))
            .collect::<Result<Vec<_>>>()
    })?;

    let summaries: Vec<CellSummary> = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let reps = &trials[c * spec.replications..(c + 1) * spec.replications];
            summarize_cell(cell, cell_output_c(&base, &constants, cell), reps)
        })
        .collect();
    let result = SweepResult {
        speedup: speedup_fits(&summaries, &spec.grid.sync_period),
        k_curves: k_curves(&summaries, &trials, &spec.grid.sync_period),
        cells: summaries,
        trials,
    };
    let metadata = RunMetadata {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        theory_constants: constants,
        beta: inst.beta(),
        fixed_point: inst.fixed_point().to_vec(),
        mixing,
        master_seed: spec.master_seed,
        replication_trials: (0..spec.replications as u64).collect(),
        warnings,
    };
    Ok(SweepOutput { metadata, result })
}

pub fn summarize_cell(cell: &Cell, output_c: f64, reps: &[TrialResult]) -> CellSummary {
    let ok: Vec<&TrialResult> = reps.iter().filter(|t| t.status == TrialStatus::Ok).collect();
    let mses: Vec<f64> = ok.iter().filter_map(|t| t.mse).collect();
    let finals: Vec<f64> = ok.iter().filter_map(|t| t.final_error).collect();
    let diverged = reps.len() - ok.len();
    let (mse_mean, mse_se) = if mses.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_se(&mses);
        (Some(m), Some(s))
    };
    CellSummary {
        cell: *cell,
        output_c,
        replications: reps.len(),
        diverged,
        invalid: 2 * diverged > reps.len(),
        mse_mean,
        mse_se,
        final_error_mean: (!finals.is_empty()).then(|| mean_se(&finals).0),
        late_blowups: ok.iter().filter(|t| t.late_blowup()).count(),
        sync_omega_max: ok.iter().map(|t| t.sync_omega_max).fold(0.0, f64::max),
    }
}

fn usable(c: &CellSummary) -> Option<(f64, f64)> {
    match (c.invalid, c.mse_mean, c.mse_se) {
        (false, Some(m), Some(s)) if m > 0.0 => Some((m, s)),
        _ => None,
    }
}

/// Groups cells with equal `(K rule, alpha, T)` and fits `ln MSE` against `ln N`.
pub fn speedup_fits(cells: &[CellSummary], rule: &SyncRule) -> Vec<SpeedupFit> {
    let by_rule = matches!(rule, SyncRule::Rule(_));
    let mut keys: Vec<(Option<usize>, f64, usize)> = Vec::new();
    for c in cells {
        let key = ((!by_rule).then_some(c.cell.sync_period), c.cell.step_size, c.cell.horizon);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = Vec::new();
    for (k, alpha, horizon) in keys {
        let mut pts: Vec<(usize, f64, f64)> = cells
            .iter()
            .filter(|c| c.cell.step_size == alpha && c.cell.horizon == horizon)
            .filter(|c| by_rule || Some(c.cell.sync_period) == k)
            .filter_map(|c| usable(c).map(|(m, s)| (c.cell.n_agents, m, s)))
            .collect();
        pts.sort_by_key(|p| p.0);
        pts.dedup_by_key(|p| p.0);
        if pts.len() < 2 {
            continue;
        }
        let n: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
        let mse: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let se: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let fit = log_log_fit(&n, &mse, &se);
        out.push(SpeedupFit {
            sync_rule: k.map_or_else(|| "t_over_n".to_string(), |k| k.to_string()),
            step_size: alpha,
            horizon,
            n_agents: pts.iter().map(|p| p.0).collect(),
            end_ratio: mse[mse.len() - 1] / mse[0],
            mse,
            mse_se: se,
            slope: fit.slope,
            intercept: fit.intercept,
            half_width: 1.96 * fit.slope_se,
        });
    }
    out
}

/// Groups cells with equal `(N, alpha, T)` across an explicit K list.
///
/// Cells share random streams per replication, so the slope is averaged over
/// per-replication slopes and its standard error is taken across replications.
pub fn k_curves(cells: &[CellSummary], trials: &[TrialResult], rule: &SyncRule) -> Vec<KCurve> {
    if !matches!(rule, SyncRule::List(ks) if ks.len() > 1) {
        return Vec::new();
    }
    let mut keys: Vec<(usize, f64, usize)> = Vec::new();
    for c in cells {
        let key = (c.cell.n_agents, c.cell.step_size, c.cell.horizon);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = Vec::new();
    for (n, alpha, horizon) in keys {
        let mut pts: Vec<(Cell, f64, f64)> = cells
            .iter()
            .filter(|c| c.cell.n_agents == n && c.cell.step_size == alpha && c.cell.horizon == horizon)
            .filter_map(|c| usable(c).map(|(m, s)| (c.cell, m, s)))
            .collect();
        pts.sort_by_key(|p| p.0.sync_period);
        if pts.len() < 2 {
            continue;
        }
        let logk: Vec<f64> = pts.iter().map(|p| (p.0.sync_period as f64).log2()).collect();
        let mse: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let se: Vec<f64> = pts.iter().map(|p| p.2).collect();

        let mut per_rep: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
        for t in trials {
            if let Some(j) = pts.iter().position(|p| p.0 == t.cell) {
                per_rep.entry(t.replication).or_insert_with(|| vec![None; pts.len()])[j] = t.mse;
            }
        }
        let slopes: Vec<f64> = per_rep
            .values()
            .filter_map(|row| row.iter().copied().collect::<Option<Vec<f64>>>())
            .map(|y| linear_fit(&logk, &y, &vec![0.0; y.len()]).slope)
            .collect();
        let (slope, slope_se) = if slopes.len() >= 2 {
            mean_se(&slopes)
        } else {
            let fit = linear_fit(&logk, &mse, &se);
            (fit.slope, fit.slope_se)
        };
        out.push(KCurve {
            n_agents: n,
            step_size: alpha,
            horizon,
            sync_periods: pts.iter().map(|p| p.0.sync_period).collect(),
            spearman: spearman(&logk, &mse),
            non_decreasing: slope >= -2.0 * slope_se,
            mse,
            mse_se: se,
            slope,
            slope_se,
        });
    }
    out
}
