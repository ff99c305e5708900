//! The three federated algorithms as engine problems.
//!
//! Each algorithm comes in two coordinate systems: the raw update the agents
//! actually run ([`RawRule`]) and the shifted form `theta = estimate - fixed point`
//! whose operators satisfy the engine's assumptions ([`ShiftedProblem`]).

mod constants;
mod shifted;
mod updates;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::NormKind;
use crate::error::{FedError, Result};
use crate::mdp::{
    max_importance_ratio, policy_transition_matrix, projected_fixed_point_oracle, q_star_oracle,
    stationary_distribution, value_function_oracle, FeatureMatrix, Mdp, Policy, StateMatrix,
};
use crate::sampling::{uniform_distribution, ChainModel};

pub use constants::{rate_constant, theory_constants, TheoryConstants};
pub use shifted::{
    build_problem, enumerate_windows, expected_g_by_enumeration, expected_operator, expected_raw_increment,
    ShiftedProblem,
};
pub use updates::{offpolicy_td_update, onpolicy_td_update, q_learning_update, RawRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    OnPolicyTdLfa,
    OffPolicyTdTabular,
    QLearning,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 3] = [Self::OnPolicyTdLfa, Self::OffPolicyTdTabular, Self::QLearning];

    /// Norm in which errors and contraction are measured.
    pub fn norm(self) -> NormKind {
        match self {
            Self::OnPolicyTdLfa => NormKind::Euclidean,
            Self::OffPolicyTdTabular | Self::QLearning => NormKind::Sup,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OnPolicyTdLfa => "on_policy_td_lfa",
            Self::OffPolicyTdTabular => "off_policy_td_tabular",
            Self::QLearning => "q_learning",
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmKind {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| FedError::Config(format!("unknown algorithm kind '{s}'")))
    }
}

/// An MDP together with everything one algorithm needs: policies, features,
/// the exact fixed point and the stationary distributions of every chain.
#[derive(Clone, Debug)]
pub struct AlgorithmInstance {
    kind: AlgorithmKind,
    mdp: Mdp,
    target: Policy,
    behaviors: Vec<Policy>,
    features: Option<FeatureMatrix>,
    n: usize,
    xi: Vec<f64>,
    beta: f64,
    fixed_point: Vec<f64>,
    target_stationary: Vec<f64>,
    behavior_stationary: Vec<Vec<f64>>,
    /// Flat `(s, a)` importance ratios, one table per behavior policy.
    ratios: Vec<Vec<f64>>,
    /// `(P^pi)^n` of the target policy.
    target_pn: StateMatrix,
}

impl AlgorithmInstance {
    /// Builds an instance and computes its oracle fixed point.
    ///
    /// On-policy TD always samples with the target policy; the other kinds
    /// fall back to it when `behaviors` is empty. Q-learning requires `n = 1`.
    pub fn new(
        kind: AlgorithmKind,
        mdp: Mdp,
        target: Policy,
        behaviors: Vec<Policy>,
        features: Option<FeatureMatrix>,
        n: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(FedError::Parameter("step count n must be >= 1".into()));
        }
        if kind == AlgorithmKind::QLearning && n != 1 {
            return Err(FedError::Parameter("Q-learning uses single transitions (n = 1)".into()));
        }
        let behaviors = if kind == AlgorithmKind::OnPolicyTdLfa || behaviors.is_empty() {
            vec![target.clone()]
        } else {
            behaviors
        };
        let features = match kind {
            AlgorithmKind::OnPolicyTdLfa => Some(features.ok_or_else(|| {
                FedError::Precondition("linear TD needs a feature matrix".into())
            })?),
            _ => None,
        };
        if let Some(f) = &features {
            if f.n_states() != mdp.n_states() {
                return Err(FedError::Shape("feature rows differ from |S|".into()));
            }
        }
        max_importance_ratio(&target, &behaviors)?;

        let p_target = policy_transition_matrix(&mdp, &target)?;
        let target_stationary = stationary_distribution(&p_target)?;
        let behavior_stationary = behaviors
            .iter()
            .map(|b| stationary_distribution(&policy_transition_matrix(&mdp, b)?))
            .collect::<Result<Vec<_>>>()?;
        let target_pn = matrix_power(&p_target, n);
        let ratios = behaviors
            .iter()
            .map(|b| {
                (0..mdp.n_states())
                    .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
                    .map(|(s, a)| crate::mdp::importance_ratio(&target, b, s, a))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let fixed_point = match kind {
            AlgorithmKind::OnPolicyTdLfa => {
                projected_fixed_point_oracle(&mdp, &target, features.as_ref().expect("checked above"), n)?
            }
            AlgorithmKind::OffPolicyTdTabular => value_function_oracle(&mdp, &target)?,
            AlgorithmKind::QLearning => q_star_oracle(&mdp)?,
        };
        let xi = uniform_distribution(mdp.n_states());
        let mut inst = Self {
            kind,
            mdp,
            target,
            behaviors,
            features,
            n,
            xi,
            beta: 1.0,
            fixed_point,
            target_stationary,
            behavior_stationary,
            ratios,
            target_pn,
        };
        if kind == AlgorithmKind::OnPolicyTdLfa {
            inst.beta = select_beta(&inst.lfa_u_matrix())?;
        }
        Ok(inst)
    }

    /// Replaces the initial-state distribution shared by all agents.
    pub fn with_xi(mut self, xi: Vec<f64>) -> Result<Self> {
        crate::mdp::validate_distribution(&xi, self.mdp.n_states())?;
        self.xi = xi;
        Ok(self)
    }

    pub fn kind(&self) -> AlgorithmKind {
        self.kind
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn target(&self) -> &Policy {
        &self.target
    }

    pub fn behaviors(&self) -> &[Policy] {
        &self.behaviors
    }

    /// Index of the behavior policy agent `agent` samples with.
    pub fn behavior_index(&self, agent: usize) -> usize {
        agent % self.behaviors.len()
    }

    pub fn features(&self) -> Option<&FeatureMatrix> {
        self.features.as_ref()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `v^pi`, `V^pi` or `Q*` depending on the kind.
    pub fn fixed_point(&self) -> &[f64] {
        &self.fixed_point
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            AlgorithmKind::OnPolicyTdLfa => self.features.as_ref().map_or(0, FeatureMatrix::dim),
            AlgorithmKind::OffPolicyTdTabular => self.mdp.n_states(),
            AlgorithmKind::QLearning => self.mdp.n_states() * self.mdp.n_actions(),
        }
    }

    pub fn target_stationary(&self) -> &[f64] {
        &self.target_stationary
    }

    pub fn behavior_stationary(&self, index: usize) -> &[f64] {
        &self.behavior_stationary[index]
    }

    pub(crate) fn ratio_table(&self, index: usize) -> &[f64] {
        &self.ratios[index]
    }

    pub fn target_pn(&self) -> &StateMatrix {
        &self.target_pn
    }

    /// One sampler per behavior policy.
    pub fn chain_models(&self) -> Result<Vec<ChainModel>> {
        self.behaviors.iter().map(|b| ChainModel::new(&self.mdp, b, &self.xi)).collect()
    }

    /// `U = Phi^T D_mu (gamma^n P^n - I) Phi` for linear TD.
    pub fn lfa_u_matrix(&self) -> DMatrix<f64> {
        let phi = self.features.as_ref().expect("linear TD instance").matrix();
        let ns = self.mdp.n_states();
        let gn = self.mdp.gamma().powi(self.n as i32);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.target_stationary));
        phi.transpose() * d * (&self.target_pn * gn - DMatrix::identity(ns, ns)) * phi
    }

    /// `I + U / beta`, the linear map of the expected shifted operator.
    pub fn lfa_expected_matrix(&self) -> DMatrix<f64> {
        let u = self.lfa_u_matrix();
        DMatrix::identity(u.nrows(), u.ncols()) + u / self.beta
    }
}

pub(crate) fn matrix_power(p: &StateMatrix, n: usize) -> StateMatrix {
    let mut out = DMatrix::identity(p.nrows(), p.ncols());
    for _ in 0..n {
        out = &out * p;
    }
    out
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Smallest `beta = 2^k` with `rho(I + U / beta) <= 0.99`.
pub fn select_beta(u: &DMatrix<f64>) -> Result<f64> {
    let eye = DMatrix::identity(u.nrows(), u.ncols());
    for k in -30..=30 {
        let beta = 2f64.powi(k);
        if spectral_radius(&(&eye + u / beta)) <= 0.99 {
            return Ok(beta);
        }
    }
    Err(FedError::Numeric(
        "no beta = 2^k, |k| <= 30, brings the spectral radius of I + U/beta to 0.99".into(),
    ))
}

#[cfg(test)]
mod tests;
