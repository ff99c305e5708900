//! One replicated federated run measured against the oracle.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::spec::Cell;
use crate::algorithms::{build_problem, AlgorithmInstance, TheoryConstants};
use crate::engine::{run_fedsam, FedRunConfig, NormKind};
use crate::error::{FedError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Diverged,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Diverged => "diverged",
        }
    }
}

/// Settings shared by every trial of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOptions {
    pub master_seed: u64,
    pub output_c: Option<f64>,
    pub norm: NormKind,
    pub checkpoints: usize,
    pub record_wall_time: bool,
    /// Parallelize agents inside the engine.
    pub parallel_agents: bool,
    pub tau: Option<usize>,
}

impl TrialOptions {
    pub fn new(master_seed: u64, norm: NormKind) -> Self {
        Self {
            master_seed,
            output_c: None,
            norm,
            checkpoints: 500,
            record_wall_time: false,
            parallel_agents: false,
            tau: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub cell: Cell,
    pub replication: u64,
    pub status: TrialStatus,
    /// `||theta-bar_{T-hat}||^2` in shifted coordinates, i.e. squared output error.
    pub mse: Option<f64>,
    /// Squared error of the averaged iterate at `T`.
    pub final_error: Option<f64>,
    pub t_hat: usize,
    pub wall_ms: u64,
    pub checkpoints: Vec<usize>,
    /// Squared error at each checkpoint.
    pub error_series: Vec<f64>,
    pub omega_series: Vec<f64>,
    /// Largest dispersion right after an averaging round (zero up to rounding).
    pub sync_omega_max: f64,
}

impl TrialResult {
    /// Mean error over the last 10% of checkpoints exceeds the error at the 10% mark.
    pub fn late_blowup(&self) -> bool {
        let m = self.error_series.len();
        if m < 10 {
            return false;
        }
        let early = self.error_series[m / 10];
        let tail = &self.error_series[m - m / 10..];
        let late = tail.iter().sum::<f64>() / tail.len() as f64;
        late > early
    }
}

/// Output constant of a cell: the spec's fixed value or `1 - alpha phi / 2`,
/// floored at the smallest positive float when `alpha phi >= 2`.
pub fn cell_output_c(options: &TrialOptions, constants: &TheoryConstants, cell: &Cell) -> f64 {
    options.output_c.unwrap_or_else(|| constants.c_out(cell.step_size).max(f64::MIN_POSITIVE))
}

/// Runs replication `replication` of `cell`, starting every agent from the zero estimate.
pub fn run_trial(
    inst: &AlgorithmInstance,
    constants: &TheoryConstants,
    cell: &Cell,
    replication: u64,
    options: &TrialOptions,
) -> Result<TrialResult> {
    let problem = build_problem(inst)?;
    let mut cfg = FedRunConfig::new(
        cell.n_agents,
        cell.sync_period,
        cell.step_size * inst.beta(),
        cell.horizon,
        cell_output_c(options, constants, cell),
    );
    cfg.master_seed = options.master_seed;
    cfg.trial = replication;
    cfg.parallel = options.parallel_agents;
    cfg.checkpoint_count = options.checkpoints;
    cfg.theta0 = Some(inst.fixed_point().iter().map(|x| -x).collect());
    cfg.tau = options.tau;

    let start = Instant::now();
    let outcome = run_fedsam(&problem, &cfg);
    let wall_ms = if options.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
    let sq = |x: &[f64]| options.norm.norm(x).powi(2);
    match outcome {
        Ok(trace) => Ok(TrialResult {
            cell: *cell,
            replication,
            status: TrialStatus::Ok,
            mse: Some(sq(&trace.output_theta)),
            final_error: Some(sq(&trace.final_theta)),
            t_hat: trace.output_index,
            wall_ms,
            error_series: trace.theta_bar_series.iter().map(|t| sq(t)).collect(),
            checkpoints: trace.checkpoints,
            omega_series: trace.omega_series,
            sync_omega_max: trace.sync_omega_max,
        }),
        Err(FedError::Divergence { t, agent }) => {
            log::warn!("cell {cell} replication {replication}: agent {agent} diverged at t = {t}");
            Ok(TrialResult {
                cell: *cell,
                replication,
                status: TrialStatus::Diverged,
                mse: None,
                final_error: None,
                t_hat: 0,
                wall_ms,
                checkpoints: Vec::new(),
                error_series: Vec::new(),
                omega_series: Vec::new(),
                sync_omega_max: 0.0,
            })
        }
        Err(e) => Err(e),
    }
}
