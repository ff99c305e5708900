//! Raw per-sample updates and the engine adapter that runs them unshifted.

use rand_chacha::ChaCha8Rng;

use super::{AlgorithmInstance, AlgorithmKind};
use crate::engine::{LocalUpdate, MarkovNoise, NormKind};
use crate::error::{FedError, Result};
use crate::mdp::{importance_ratio, max_of, FeatureMatrix, Mdp, Policy};
use crate::sampling::{AgentChain, ChainModel, Window};

pub(super) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `sum_l gamma^l (gamma phi_{l+1}^T v - phi_l^T v)` over the window.
pub(super) fn lfa_value_part(v: &[f64], w: Window<'_>, features: &FeatureMatrix, gamma: f64) -> f64 {
    let mut disc = 1.0;
    let mut acc = 0.0;
    for l in 0..w.len() {
        let next = dot(features.phi(w.states[l + 1]), v);
        let cur = dot(features.phi(w.states[l]), v);
        acc += disc * (gamma * next - cur);
        disc *= gamma;
    }
    acc
}

/// `sum_l gamma^l R(S_l, A_l)`.
pub(super) fn discounted_rewards(w: Window<'_>, mdp: &Mdp) -> f64 {
    let mut disc = 1.0;
    let mut acc = 0.0;
    for l in 0..w.len() {
        acc += disc * mdp.reward(w.states[l], w.actions[l]);
        disc *= mdp.gamma();
    }
    acc
}

/// `sum_l gamma^l (prod_{j<=l} ratio_j) (R_l [if rewards] + gamma V(S_{l+1}) - V(S_l))`.
pub(super) fn offpolicy_sum(v: &[f64], w: Window<'_>, mdp: &Mdp, ratios: &[f64], rewards: bool) -> f64 {
    let na = mdp.n_actions();
    let gamma = mdp.gamma();
    let mut weight = 1.0;
    let mut acc = 0.0;
    for l in 0..w.len() {
        let (s, a) = (w.states[l], w.actions[l]);
        weight *= ratios[s * na + a];
        if weight == 0.0 {
            break;
        }
        let r = if rewards { mdp.reward(s, a) } else { 0.0 };
        acc += weight * (r + gamma * v[w.states[l + 1]] - v[s]);
        weight *= gamma;
    }
    acc
}

fn check_window(w: Window<'_>, mdp: &Mdp) -> Result<()> {
    if w.is_empty() || w.states.len() != w.len() + 1 {
        return Err(FedError::Shape("window must hold n >= 1 actions and n + 1 states".into()));
    }
    if w.states.iter().any(|&s| s >= mdp.n_states()) || w.actions.iter().any(|&a| a >= mdp.n_actions()) {
        return Err(FedError::Shape("window index out of range".into()));
    }
    Ok(())
}

/// n-step linear TD: `v + alpha phi(S_t) sum_l gamma^l (R_l + gamma phi_{l+1}^T v - phi_l^T v)`.
pub fn onpolicy_td_update(
    v: &[f64],
    w: Window<'_>,
    features: &FeatureMatrix,
    mdp: &Mdp,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_window(w, mdp)?;
    if v.len() != features.dim() || features.n_states() != mdp.n_states() {
        return Err(FedError::Shape("parameter, features and MDP disagree".into()));
    }
    let err = discounted_rewards(w, mdp) + lfa_value_part(v, w, features, mdp.gamma());
    Ok(v.iter().zip(features.phi(w.states[0])).map(|(x, f)| x + alpha * f * err).collect())
}

/// n-step tabular TD with per-decision importance ratios `pi / pi_b`.
pub fn offpolicy_td_update(
    v: &[f64],
    w: Window<'_>,
    mdp: &Mdp,
    target: &Policy,
    behavior: &Policy,
    alpha: f64,
) -> Result<Vec<f64>> {
    check_window(w, mdp)?;
    if v.len() != mdp.n_states() {
        return Err(FedError::Shape("value vector length differs from |S|".into()));
    }
    let na = mdp.n_actions();
    let mut ratios = vec![0.0; mdp.n_states() * na];
    for (&s, &a) in w.states.iter().zip(w.actions) {
        ratios[s * na + a] = importance_ratio(target, behavior, s, a)?;
    }
    let mut out = v.to_vec();
    out[w.states[0]] += alpha * offpolicy_sum(v, w, mdp, &ratios, true);
    Ok(out)
}

/// `Q(s,a) + alpha (R(s,a) + gamma max_a' Q(s',a') - Q(s,a))`.
pub fn q_learning_update(q: &[f64], transition: (usize, usize, usize), mdp: &Mdp, alpha: f64) -> Result<Vec<f64>> {
    let (s, a, s2) = transition;
    let na = mdp.n_actions();
    if q.len() != mdp.n_states() * na {
        return Err(FedError::Shape("Q table length differs from |S| |A|".into()));
    }
    if s >= mdp.n_states() || s2 >= mdp.n_states() || a >= na {
        return Err(FedError::Shape("transition index out of range".into()));
    }
    let mut out = q.to_vec();
    let next = max_of(&q[s2 * na..(s2 + 1) * na]);
    out[s * na + a] += alpha * (mdp.reward(s, a) + mdp.gamma() * next - q[s * na + a]);
    Ok(out)
}

/// Runs the unshifted algorithm through the engine (estimates in raw coordinates).
pub struct RawRule<'a> {
    inst: &'a AlgorithmInstance,
    models: Vec<ChainModel>,
}

impl<'a> RawRule<'a> {
    pub fn new(inst: &'a AlgorithmInstance) -> Result<Self> {
        Ok(Self {
            inst,
            models: inst.chain_models()?,
        })
    }
}

impl MarkovNoise for RawRule<'_> {
    type Noise = AgentChain;

    fn dim(&self) -> usize {
        self.inst.dim()
    }

    fn norm_kind(&self) -> NormKind {
        self.inst.kind().norm()
    }

    fn init_noise(&self, agent: usize, rng: ChaCha8Rng) -> Result<AgentChain> {
        AgentChain::init(&self.models[self.inst.behavior_index(agent)], agent, self.inst.n(), rng)
    }

    fn advance_noise(&self, agent: usize, noise: &mut AgentChain) {
        noise.advance(&self.models[self.inst.behavior_index(agent)]);
    }
}

impl LocalUpdate for RawRule<'_> {
    fn local_step(&self, agent: usize, theta: &mut [f64], noise: &AgentChain, alpha: f64, _scratch: &mut Vec<f64>) {
        raw_step(self.inst, agent, theta, noise.window(), alpha);
    }
}

/// In-place raw update of agent `agent` on window `w`.
pub(crate) fn raw_step(inst: &AlgorithmInstance, agent: usize, theta: &mut [f64], w: Window<'_>, alpha: f64) {
    let mdp = inst.mdp();
    match inst.kind() {
        AlgorithmKind::OnPolicyTdLfa => {
            let features = inst.features().expect("linear TD instance");
            let err = discounted_rewards(w, mdp) + lfa_value_part(theta, w, features, mdp.gamma());
            for (x, f) in theta.iter_mut().zip(features.phi(w.states[0])) {
                *x += alpha * f * err;
            }
        }
        AlgorithmKind::OffPolicyTdTabular => {
            let ratios = inst.ratio_table(inst.behavior_index(agent));
            let err = offpolicy_sum(theta, w, mdp, ratios, true);
            theta[w.states[0]] += alpha * err;
        }
        AlgorithmKind::QLearning => {
            let na = mdp.n_actions();
            let (s, a, s2) = (w.states[0], w.actions[0], w.states[1]);
            let next = max_of(&theta[s2 * na..(s2 + 1) * na]);
            let k = s * na + a;
            theta[k] += alpha * (mdp.reward(s, a) + mdp.gamma() * next - theta[k]);
        }
    }
}
