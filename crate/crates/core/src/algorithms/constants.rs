//! Contraction, Lipschitz and rate constants for each algorithm.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::updates::dot;
use super::{AlgorithmInstance, AlgorithmKind};
use crate::error::{FedError, Result};
use crate::mdp::max_importance_ratio;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub kind: AlgorithmKind,
    pub gamma_c: f64,
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub mu_min: f64,
    pub phi: f64,
    #[serde(rename = "Imax", skip_serializing_if = "Option::is_none", default)]
    pub imax: Option<f64>,
    pub beta: f64,
}

impl TheoryConstants {
    /// `c = 1 - alpha phi / 2`.
    pub fn c_out(&self, alpha: f64) -> f64 {
        1.0 - alpha * self.phi / 2.0
    }
}

/// `1 - e^{1/4} (2 - x) / (2 sqrt(sqrt(e) - 1 + ((2 - x) / (2 - 2x))^2))`, for `x` in `[0, 1)`.
pub fn rate_constant(x: f64) -> f64 {
    let ratio = (2.0 - x) / (2.0 - 2.0 * x);
    let root = (0.5f64.exp() - 1.0 + ratio * ratio).sqrt();
    1.0 - 0.5 * 0.25f64.exp() * (2.0 - x) / root
}

/// `sum_{k<n} r^k`.
fn geometric(r: f64, n: usize) -> f64 {
    if (r - 1.0).abs() < 1e-12 {
        n as f64
    } else {
        (1.0 - r.powi(n as i32)) / (1.0 - r)
    }
}

/// Tabular off-policy TD constants from `mu_min`, `gamma`, `n` and the largest importance ratio.
pub fn offpolicy_constants(mu_min: f64, gamma: f64, n: usize, imax: f64) -> (f64, f64, f64, f64) {
    let x = mu_min * (1.0 - gamma.powi(n as i32 + 1));
    let geo = geometric(gamma * imax, n);
    let a = 1.0 + (1.0 + gamma) * imax * geo;
    let b = 2.0 * imax / (1.0 - gamma) * geo;
    (1.0 - x, rate_constant(x), a, b)
}

/// Q-learning constants from `mu_min` (over state-action pairs) and `gamma`.
pub fn q_learning_constants(mu_min: f64, gamma: f64) -> (f64, f64, f64, f64) {
    let x = mu_min * (1.0 - gamma);
    (1.0 - x, rate_constant(x), 2.0, 2.0 / (1.0 - gamma))
}

fn min_positive_check(mu_min: f64) -> Result<f64> {
    if mu_min > 0.0 {
        Ok(mu_min)
    } else {
        Err(FedError::Ergodicity(format!("minimum stationary mass {mu_min} is not positive")))
    }
}

pub fn theory_constants(inst: &AlgorithmInstance) -> Result<TheoryConstants> {
    let mdp = inst.mdp();
    let gamma = mdp.gamma();
    let n = inst.n();
    let n_behaviors = inst.behaviors().len();
    let state_min = (0..n_behaviors)
        .flat_map(|m| inst.behavior_stationary(m).iter().copied())
        .fold(f64::INFINITY, f64::min);
    let kind = inst.kind();
    let out = match kind {
        AlgorithmKind::OffPolicyTdTabular => {
            let mu_min = min_positive_check(state_min)?;
            let imax = max_importance_ratio(inst.target(), inst.behaviors())?;
            let (gamma_c, phi, a, b) = offpolicy_constants(mu_min, gamma, n, imax);
            TheoryConstants { kind, gamma_c, a1: a, a2: a, b, mu_min, phi, imax: Some(imax), beta: 1.0 }
        }
        AlgorithmKind::QLearning => {
            let mut pair_min = f64::INFINITY;
            for (m, pi) in inst.behaviors().iter().enumerate() {
                let mu = inst.behavior_stationary(m);
                for (s, &mass) in mu.iter().enumerate() {
                    for a in 0..mdp.n_actions() {
                        pair_min = pair_min.min(mass * pi.prob(s, a));
                    }
                }
            }
            let mu_min = min_positive_check(pair_min)?;
            let (gamma_c, phi, a, b) = q_learning_constants(mu_min, gamma);
            TheoryConstants { kind, gamma_c, a1: a, a2: a, b, mu_min, phi, imax: None, beta: 1.0 }
        }
        AlgorithmKind::OnPolicyTdLfa => lfa_constants(inst, min_positive_check(state_min)?)?,
    };
    if !(out.gamma_c > 0.0 && out.gamma_c < 1.0) {
        return Err(FedError::Numeric(format!("contraction factor {} outside (0, 1)", out.gamma_c)));
    }
    Ok(out)
}

fn lfa_constants(inst: &AlgorithmInstance, mu_min: f64) -> Result<TheoryConstants> {
    let features = inst.features().expect("linear TD instance");
    let gamma = inst.mdp().gamma();
    let n = inst.n();
    let beta = inst.beta();
    let gn = gamma.powi(n as i32);
    let d = features.dim();
    let ns = features.n_states();

    let eig = inst.lfa_u_matrix().complex_eigenvalues();
    let delta = eig.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
    let lambda_max = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if delta.is_nan() || delta <= 0.0 {
        return Err(FedError::Numeric("expected linear TD matrix is not Hurwitz".into()));
    }
    let gamma_c = 1.0 - delta * delta / (8.0 * lambda_max * lambda_max);

    // G(theta, y) - G(theta', y) depends on y only through (S_t, S_{t+n}).
    let mut a = 0.0f64;
    for s in 0..ns {
        let fs = features.phi(s);
        for s2 in 0..ns {
            let f2 = features.phi(s2);
            let m = DMatrix::from_fn(d, d, |r, c| {
                let eye = if r == c { 1.0 } else { 0.0 };
                eye + fs[r] * (gn * f2[c] - fs[c]) / beta
            });
            a = a.max(m.singular_values().max());
        }
    }
    let fp = inst.fixed_point();
    let phi_norm = (0..ns).map(|s| dot(features.phi(s), features.phi(s)).sqrt()).fold(0.0, f64::max);
    let value_max = (0..ns).map(|s| dot(features.phi(s), fp).abs()).fold(0.0, f64::max);
    let b = phi_norm * (1.0 + (1.0 + gamma) * value_max) * geometric(gamma, n) / beta;

    Ok(TheoryConstants {
        kind: AlgorithmKind::OnPolicyTdLfa,
        gamma_c,
        a1: a,
        a2: a,
        b,
        mu_min,
        phi: 1.0 - gamma_c,
        imax: None,
        beta,
    })
}
