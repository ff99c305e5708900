//! Shifted operators `G^i`, `b^i` and their exact expectations.

use rand_chacha::ChaCha8Rng;

use super::updates::{discounted_rewards, lfa_value_part, offpolicy_sum, raw_step};
use super::{AlgorithmInstance, AlgorithmKind};
use crate::engine::{FedSamProblem, MarkovNoise, NormKind};
use crate::error::{FedError, Result};
use crate::mdp::max_of;
use crate::sampling::{AgentChain, ChainModel, Window};

/// Largest number of windows [`enumerate_windows`] will visit.
pub const MAX_ENUMERATED_WINDOWS: f64 = 2e7;

/// The algorithm in shifted coordinates `theta = estimate - fixed point`.
pub struct ShiftedProblem<'a> {
    inst: &'a AlgorithmInstance,
    models: Vec<ChainModel>,
}

/// Wraps an instance as an engine problem with `G^i(0, y) = 0`.
pub fn build_problem(inst: &AlgorithmInstance) -> Result<ShiftedProblem<'_>> {
    Ok(ShiftedProblem {
        inst,
        models: inst.chain_models()?,
    })
}

impl ShiftedProblem<'_> {
    pub fn instance(&self) -> &AlgorithmInstance {
        self.inst
    }
}

impl MarkovNoise for ShiftedProblem<'_> {
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

impl FedSamProblem for ShiftedProblem<'_> {
    fn apply_g(&self, agent: usize, theta: &[f64], noise: &AgentChain, out: &mut [f64]) {
        g_window(self.inst, agent, theta, noise.window(), out);
    }

    fn apply_b(&self, agent: usize, noise: &AgentChain, out: &mut [f64]) {
        b_window(self.inst, agent, noise.window(), out);
    }

    fn expected_g(&self, agent: usize, theta: &[f64]) -> Option<Vec<f64>> {
        Some(expected_operator(self.inst, agent, theta))
    }
}

fn q_next_shift(inst: &AlgorithmInstance, theta: &[f64], s2: usize) -> f64 {
    let na = inst.mdp().n_actions();
    let qs = &inst.fixed_point()[s2 * na..(s2 + 1) * na];
    let shifted = theta[s2 * na..(s2 + 1) * na].iter().zip(qs).map(|(t, q)| t + q).fold(f64::NEG_INFINITY, f64::max);
    shifted - max_of(qs)
}

pub(crate) fn g_window(inst: &AlgorithmInstance, agent: usize, theta: &[f64], w: Window<'_>, out: &mut [f64]) {
    let mdp = inst.mdp();
    out.copy_from_slice(theta);
    match inst.kind() {
        AlgorithmKind::OnPolicyTdLfa => {
            let features = inst.features().expect("linear TD instance");
            let scale = lfa_value_part(theta, w, features, mdp.gamma()) / inst.beta();
            for (o, f) in out.iter_mut().zip(features.phi(w.states[0])) {
                *o += f * scale;
            }
        }
        AlgorithmKind::OffPolicyTdTabular => {
            let ratios = inst.ratio_table(inst.behavior_index(agent));
            out[w.states[0]] += offpolicy_sum(theta, w, mdp, ratios, false);
        }
        AlgorithmKind::QLearning => {
            let k = w.states[0] * mdp.n_actions() + w.actions[0];
            out[k] += mdp.gamma() * q_next_shift(inst, theta, w.states[1]) - theta[k];
        }
    }
}

pub(crate) fn b_window(inst: &AlgorithmInstance, agent: usize, w: Window<'_>, out: &mut [f64]) {
    let mdp = inst.mdp();
    let fp = inst.fixed_point();
    out.fill(0.0);
    match inst.kind() {
        AlgorithmKind::OnPolicyTdLfa => {
            let features = inst.features().expect("linear TD instance");
            let err = discounted_rewards(w, mdp) + lfa_value_part(fp, w, features, mdp.gamma());
            let scale = err / inst.beta();
            for (o, f) in out.iter_mut().zip(features.phi(w.states[0])) {
                *o = f * scale;
            }
        }
        AlgorithmKind::OffPolicyTdTabular => {
            let ratios = inst.ratio_table(inst.behavior_index(agent));
            out[w.states[0]] = offpolicy_sum(fp, w, mdp, ratios, true);
        }
        AlgorithmKind::QLearning => {
            let na = mdp.n_actions();
            let (s, a, s2) = (w.states[0], w.actions[0], w.states[1]);
            let k = s * na + a;
            out[k] = mdp.reward(s, a) + mdp.gamma() * max_of(&fp[s2 * na..(s2 + 1) * na]) - fp[k];
        }
    }
}

/// Exact `G-bar^i(theta)` under the stationary law of agent `agent`'s chain.
pub fn expected_operator(inst: &AlgorithmInstance, agent: usize, theta: &[f64]) -> Vec<f64> {
    let mdp = inst.mdp();
    let gamma = mdp.gamma();
    match inst.kind() {
        AlgorithmKind::OnPolicyTdLfa => {
            let m = inst.lfa_expected_matrix();
            (m * nalgebra::DVector::from_column_slice(theta)).as_slice().to_vec()
        }
        AlgorithmKind::OffPolicyTdTabular => {
            let mu = inst.behavior_stationary(inst.behavior_index(agent));
            let gn = gamma.powi(inst.n() as i32);
            let pn_theta = inst.target_pn() * nalgebra::DVector::from_column_slice(theta);
            (0..theta.len()).map(|s| theta[s] + mu[s] * (gn * pn_theta[s] - theta[s])).collect()
        }
        AlgorithmKind::QLearning => {
            let b = inst.behavior_index(agent);
            let mu = inst.behavior_stationary(b);
            let pi = &inst.behaviors()[b];
            let na = mdp.n_actions();
            let next: Vec<f64> = (0..mdp.n_states()).map(|s2| q_next_shift(inst, theta, s2)).collect();
            let mut out = theta.to_vec();
            for (s, &mu_s) in mu.iter().enumerate() {
                for a in 0..na {
                    let k = s * na + a;
                    let ev: f64 = mdp.transition_row(s, a).iter().zip(&next).map(|(p, x)| p * x).sum();
                    out[k] += mu_s * pi.prob(s, a) * (gamma * ev - theta[k]);
                }
            }
            out
        }
    }
}

/// Visits every window `(S_0, A_0, ..., S_n)` with its stationary probability
/// under agent `agent`'s behavior chain. Zero-probability branches are skipped.
pub fn enumerate_windows<F: FnMut(f64, Window<'_>)>(inst: &AlgorithmInstance, agent: usize, mut f: F) -> Result<()> {
    let mdp = inst.mdp();
    let (ns, na, n) = (mdp.n_states(), mdp.n_actions(), inst.n());
    let count = (ns as f64).powi(n as i32 + 1) * (na as f64).powi(n as i32);
    if count > MAX_ENUMERATED_WINDOWS {
        return Err(FedError::Precondition(format!("{count:.0} windows is too many to enumerate")));
    }
    let b = inst.behavior_index(agent);
    let mu = inst.behavior_stationary(b);
    let pi = &inst.behaviors()[b];
    let mut states = vec![0usize; n + 1];
    let mut actions = vec![0usize; n];

    #[allow(clippy::too_many_arguments)]
    fn walk<F: FnMut(f64, Window<'_>)>(
        depth: usize,
        prob: f64,
        states: &mut [usize],
        actions: &mut [usize],
        mdp: &crate::mdp::Mdp,
        pi: &crate::mdp::Policy,
        f: &mut F,
    ) {
        if depth == actions.len() {
            f(prob, Window { states, actions });
            return;
        }
        let s = states[depth];
        for a in 0..mdp.n_actions() {
            let pa = prob * pi.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                actions[depth] = a;
                states[depth + 1] = s2;
                walk(depth + 1, pa * p, states, actions, mdp, pi, f);
            }
        }
    }

    for (s0, &p0) in mu.iter().enumerate() {
        if p0 == 0.0 {
            continue;
        }
        states[0] = s0;
        walk(0, p0, &mut states, &mut actions, mdp, pi, &mut f);
    }
    Ok(())
}

/// `E[G^i(theta, y)]` by summing over every window.
pub fn expected_g_by_enumeration(inst: &AlgorithmInstance, agent: usize, theta: &[f64]) -> Result<Vec<f64>> {
    let d = inst.dim();
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    enumerate_windows(inst, agent, |p, w| {
        g_window(inst, agent, theta, w, &mut g);
        for (a, x) in acc.iter_mut().zip(&g) {
            *a += p * x;
        }
    })?;
    Ok(acc)
}

/// Expected raw increment `E[update(v, y) - v]` at unit step and raw parameter `v`.
pub fn expected_raw_increment(inst: &AlgorithmInstance, agent: usize, v: &[f64]) -> Result<Vec<f64>> {
    let d = inst.dim();
    if v.len() != d {
        return Err(FedError::Shape(format!("parameter has length {}, expected {d}", v.len())));
    }
    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    enumerate_windows(inst, agent, |p, w| {
        buf.copy_from_slice(v);
        raw_step(inst, agent, &mut buf, w, 1.0);
        for ((a, x), y) in acc.iter_mut().zip(&buf).zip(v) {
            *a += p * (x - y);
        }
    })?;
    Ok(acc)
}
