//! Finite MDPs, policies, feature tables and the exact oracles every
//! stochastic algorithm in this crate is checked against.
//!
//! Layout conventions used throughout the crate:
//! * value tables are length-`|S|` vectors,
//! * Q-tables are flat row-major `|S| x |A|` vectors (`q[s * |A| + a]`),
//! * linear-FA parameters are length-`d` vectors.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// Dense `|S| x |S|` matrix (row-stochastic when it comes from a policy).
pub type StateMatrix = DMatrix<f64>;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite discounted MDP with rewards in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// `P(s'|s,a)` stored at `[(s * n_actions + a) * n_states + s']`.
    transition: Vec<f64>,
    /// `R(s,a)` stored at `[s * n_actions + a]`.
    reward: Vec<f64>,
    gamma: f64,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(FedError::Shape("MDP needs at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(FedError::Shape(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(FedError::Shape(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(FedError::Parameter(format!("discount {gamma} outside (0, 1)")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                check_distribution(row).map_err(|msg| {
                    FedError::Distribution(format!("P(.|{s},{a}): {msg}"))
                })?;
                let r = reward[s * n_actions + a];
                if !(0.0..=1.0).contains(&r) {
                    return Err(FedError::Parameter(format!(
                        "reward R({s},{a}) = {r} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
        })
    }

    /// Builds an MDP from `transition[s][a][s']` and `reward[s][a]`.
    pub fn from_nested(transition: &[Vec<Vec<f64>>], reward: &[Vec<f64>], gamma: f64) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        let mut flat_p = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(FedError::Shape(format!("state {s} has {} actions", per_action.len())));
            }
            for row in per_action {
                if row.len() != n_states {
                    return Err(FedError::Shape(format!("transition row of state {s} has length {}", row.len())));
                }
                flat_p.extend_from_slice(row);
            }
        }
        if reward.len() != n_states || reward.iter().any(|r| r.len() != n_actions) {
            return Err(FedError::Shape("reward table shape differs from transition".into()));
        }
        let flat_r = reward.iter().flatten().copied().collect();
        Self::new(n_states, n_actions, flat_p, flat_r, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `P(.|s,a)` as a slice over next states.
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Flat reward table, row-major over `(s, a)`.
    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.transition_row(s, a).to_vec()).collect())
            .collect()
    }

    pub fn reward_nested(&self) -> Vec<Vec<f64>> {
        self.reward.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
    }

    pub fn to_json_string(&self) -> String {
        let file = MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            transition: self.transition_nested(),
            reward: self.reward_nested(),
        };
        serde_json::to_string_pretty(&file).expect("MDP serializes")
    }

    pub fn from_json_str(text: &str) -> std::result::Result<Self, String> {
        let file: MdpFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mdp = Self::from_nested(&file.transition, &file.reward, file.gamma).map_err(|e| e.to_string())?;
        if mdp.n_states != file.n_states || mdp.n_actions != file.n_actions {
            return Err(format!(
                "declared shape {}x{} does not match tables {}x{}",
                file.n_states, file.n_actions, mdp.n_states, mdp.n_actions
            ));
        }
        Ok(mdp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| FedError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
        Self::from_json_str(&text).map_err(|m| FedError::format(path, m))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
}

fn check_distribution(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(bad) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(format!("entry {bad} is negative or non-finite"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// Validates a distribution over `n` outcomes.
pub fn validate_distribution(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(FedError::Distribution(format!("length {} but {} outcomes", p.len(), n)));
    }
    check_distribution(p).map_err(FedError::Distribution)
}

/// Stochastic action-selection table `pi(a|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    probs: Vec<Vec<f64>>,
}

impl TryFrom<PolicyFile> for Policy {
    type Error = FedError;

    fn try_from(file: PolicyFile) -> Result<Self> {
        Policy::from_rows(&file.probs)
    }
}

impl From<Policy> for PolicyFile {
    fn from(p: Policy) -> Self {
        PolicyFile {
            probs: p.probs.chunks(p.n_actions).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(FedError::Shape(format!(
                "policy table has {} entries for {n_states} states x {n_actions} actions",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row).map_err(|m| FedError::Distribution(format!("pi(.|{s}): {m}")))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(FedError::Shape("policy rows have unequal lengths".into()));
        }
        Self::new(rows.len(), n_actions, rows.iter().flatten().copied().collect())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(FedError::Shape(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// `(1 - weight) * self + weight * other`.
    pub fn mix(&self, other: &Policy, weight: f64) -> Result<Self> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(FedError::Shape("cannot mix policies of different shapes".into()));
        }
        let probs = self
            .probs
            .chunks(self.n_actions)
            .zip(other.probs.chunks(self.n_actions))
            .flat_map(|(p, q)| {
                let mut row: Vec<f64> = p.iter().zip(q).map(|(x, y)| (1.0 - weight) * x + weight * y).collect();
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= total);
                row
            })
            .collect();
        Self::new(self.n_states, self.n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Full-column-rank `|S| x d` feature table.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    phi: DMatrix<f64>,
    /// Row-major copy for fast `phi(s)` access.
    rows: Vec<f64>,
}

/// Relative singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

impl FeatureMatrix {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        let (n_states, d) = phi.shape();
        if d == 0 || d > n_states {
            return Err(FedError::Shape(format!(
                "feature dimension {d} must satisfy 1 <= d <= |S| = {n_states}"
            )));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(FedError::Numeric("feature matrix has non-finite entries".into()));
        }
        let rank = numerical_rank(&phi);
        if rank < d {
            return Err(FedError::Rank(format!("feature matrix has rank {rank} < d = {d}")));
        }
        let rows = (0..n_states).flat_map(|s| phi.row(s).iter().copied().collect::<Vec<_>>()).collect();
        Ok(Self { phi, rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(FedError::Shape("feature rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |s, k| rows[s][k]))
    }

    /// Tabular features `Phi = I`.
    pub fn identity(n_states: usize) -> Self {
        Self::new(DMatrix::identity(n_states, n_states)).expect("identity has full rank")
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// Feature row `phi(s)`.
    #[inline]
    pub fn phi(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.rows[s * d..(s + 1) * d]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows.chunks(self.dim()).map(<[f64]>::to_vec).collect()
    }
}

impl Serialize for FeatureMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out {
            phi: Vec<Vec<f64>>,
        }
        Out { phi: self.to_rows() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeatureMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct In {
            phi: Vec<Vec<f64>>,
        }
        let raw = In::deserialize(deserializer)?;
        FeatureMatrix::from_rows(&raw.phi).map_err(serde::de::Error::custom)
    }
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&x| x > RANK_TOL * top).count()
}

/// `P^pi(s, s') = sum_a pi(a|s) P(s'|s,a)`.
pub fn policy_transition_matrix(mdp: &Mdp, policy: &Policy) -> Result<StateMatrix> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.n_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (s2, &q) in mdp.transition_row(s, a).iter().enumerate() {
                p[(s, s2)] += w * q;
            }
        }
    }
    Ok(p)
}

/// Expected one-step reward `r^pi(s) = sum_a pi(a|s) R(s,a)`.
pub fn policy_reward(mdp: &Mdp, policy: &Policy) -> Result<DVector<f64>> {
    check_policy_shape(mdp, policy)?;
    Ok(DVector::from_fn(mdp.n_states(), |s, _| {
        (0..mdp.n_actions()).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum()
    }))
}

fn check_policy_shape(mdp: &Mdp, policy: &Policy) -> Result<()> {
    if mdp.n_states() != policy.n_states() || mdp.n_actions() != policy.n_actions() {
        return Err(FedError::Shape(format!(
            "policy is {}x{} but MDP is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// Stationary distribution of a row-stochastic matrix.
///
/// The linear solve of `(P^T - I) mu = 0, sum(mu) = 1` is authoritative; it is
/// cross-checked against `e_0 P^(2^k)` obtained by repeated squaring, which
/// fails to settle on periodic chains.
pub fn stationary_distribution(p: &StateMatrix) -> Result<Vec<f64>> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(FedError::Shape(format!("transition matrix is {}x{}", p.nrows(), p.ncols())));
    }
    for s in 0..n {
        let row: Vec<f64> = p.row(s).iter().copied().collect();
        check_distribution(&row).map_err(|m| FedError::Distribution(format!("row {s}: {m}")))?;
    }

    let mut a = p.transpose() - DMatrix::identity(n, n);
    for k in 0..n {
        a[(n - 1, k)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut mu = lu
        .solve(&rhs)
        .ok_or_else(|| FedError::Ergodicity("stationary system is singular (reducible chain)".into()))?;
    // one step of iterative refinement
    let resid = &rhs - &a * &mu;
    if let Some(corr) = lu.solve(&resid) {
        mu += corr;
    }
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(FedError::Ergodicity("stationary solve produced non-finite values".into()));
    }
    if let Some((s, m)) = mu.iter().enumerate().find(|(_, m)| **m <= 1e-12) {
        return Err(FedError::Ergodicity(format!("stationary mass mu({s}) = {m:e} <= 1e-12")));
    }

    let power = power_limit_row(p);
    let gap: f64 = mu.iter().zip(&power).map(|(x, y)| (x - y).abs()).sum();
    if gap > 1e-8 {
        return Err(FedError::Ergodicity(format!(
            "power iteration disagrees with the linear solve by {gap:e} in l1 (periodic chain?)"
        )));
    }
    Ok(mu.iter().copied().collect())
}

/// First row of `P^(2^k)` once repeated squaring settles (or after 64 squarings).
fn power_limit_row(p: &StateMatrix) -> Vec<f64> {
    let mut m = p.clone();
    for _ in 0..64 {
        let mut next = &m * &m;
        for mut row in next.row_iter_mut() {
            let total: f64 = row.iter().sum();
            row /= total;
        }
        let change = (&next - &m).amax();
        m = next;
        if change < 1e-15 {
            break;
        }
    }
    m.row(0).iter().copied().collect()
}

/// Exact `V^pi = (I - gamma P^pi)^{-1} r^pi`.
pub fn value_function_oracle(mdp: &Mdp, policy: &Policy) -> Result<Vec<f64>> {
    let p = policy_transition_matrix(mdp, policy)?;
    let r = policy_reward(mdp, policy)?;
    let n = mdp.n_states();
    let a = DMatrix::identity(n, n) - p * mdp.gamma();
    let v = a
        .lu()
        .solve(&r)
        .ok_or_else(|| FedError::Numeric("I - gamma P^pi is singular".into()))?;
    Ok(v.iter().copied().collect())
}

/// Sup-norm residual of the policy Bellman equation.
pub fn bellman_residual(mdp: &Mdp, policy: &Policy, v: &[f64]) -> Result<f64> {
    let applied = bellman_policy_operator(mdp, policy, v)?;
    Ok(applied.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// `(T^pi V)(s) = sum_a pi(a|s) [R(s,a) + gamma sum_s' P(s'|s,a) V(s')]`.
pub fn bellman_policy_operator(mdp: &Mdp, policy: &Policy, v: &[f64]) -> Result<Vec<f64>> {
    check_policy_shape(mdp, policy)?;
    if v.len() != mdp.n_states() {
        return Err(FedError::Shape(format!("value table has length {}", v.len())));
    }
    Ok((0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions())
                .map(|a| {
                    let next: f64 = mdp.transition_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
                    policy.prob(s, a) * (mdp.reward(s, a) + mdp.gamma() * next)
                })
                .sum()
        })
        .collect())
}

/// Iterative policy evaluation, run until successive iterates differ by at most `tol`.
pub fn policy_evaluation_iterative(mdp: &Mdp, policy: &Policy, tol: f64) -> Result<Vec<f64>> {
    let mut v = vec![0.0; mdp.n_states()];
    loop {
        let next = bellman_policy_operator(mdp, policy, &v)?;
        let change = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        if change <= tol {
            return Ok(v);
        }
    }
}

/// Bellman optimality operator on a flat Q-table.
pub fn optimality_operator(mdp: &Mdp, q: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions();
    let vmax: Vec<f64> = q.chunks(na).map(max_of).collect();
    (0..mdp.n_states())
        .flat_map(|s| {
            let vmax = &vmax;
            (0..na).map(move |a| {
                let next: f64 = mdp.transition_row(s, a).iter().zip(vmax).map(|(p, v)| p * v).sum();
                mdp.reward(s, a) + mdp.gamma() * next
            })
        })
        .collect()
}

pub(crate) fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `Q*` by value iteration, stopped once successive iterates differ by at
/// most `(1 - gamma) * 1e-10 / (2 gamma)`.
pub fn q_star_oracle(mdp: &Mdp) -> Result<Vec<f64>> {
    let gamma = mdp.gamma();
    let threshold = (1.0 - gamma) * 1e-10 / (2.0 * gamma);
    let mut q = vec![0.0; mdp.n_states() * mdp.n_actions()];
    for _ in 0..10_000_000 {
        let next = optimality_operator(mdp, &q);
        let change = next.iter().zip(&q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        q = next;
        if change <= threshold {
            return Ok(q);
        }
    }
    Err(FedError::Numeric("value iteration did not reach its stopping threshold".into()))
}

/// Greedy policy of a Q-table, lowest action index on ties.
pub fn greedy_policy(mdp: &Mdp, q: &[f64]) -> Policy {
    let actions: Vec<usize> = q.chunks(mdp.n_actions()).map(argmax).collect();
    Policy::deterministic(&actions, mdp.n_actions()).expect("greedy actions are in range")
}

/// Pieces of the `n`-step projected Bellman system shared by the oracle
/// and its residual check.
struct ProjectedSystem {
    /// `gamma^n (P^pi)^n`
    discounted_pn: StateMatrix,
    /// `sum_{l<n} gamma^l (P^pi)^l r^pi`
    reward_n: DVector<f64>,
    /// `diag(mu^pi)`
    weights: StateMatrix,
}

fn projected_system(mdp: &Mdp, policy: &Policy, n: usize) -> Result<ProjectedSystem> {
    if n == 0 {
        return Err(FedError::Parameter("step count n must be >= 1".into()));
    }
    let p = policy_transition_matrix(mdp, policy)?;
    let r = policy_reward(mdp, policy)?;
    let mu = stationary_distribution(&p)?;
    let ns = mdp.n_states();
    let mut pl = DMatrix::identity(ns, ns);
    let mut reward_n = DVector::zeros(ns);
    let mut disc = 1.0;
    for _ in 0..n {
        reward_n += &pl * &r * disc;
        pl = &pl * &p;
        disc *= mdp.gamma();
    }
    Ok(ProjectedSystem {
        discounted_pn: pl * disc,
        reward_n,
        weights: DMatrix::from_diagonal(&DVector::from_vec(mu)),
    })
}

/// Solution `v` of `Phi v = Pi((T^pi)^n Phi v)`, obtained from the normal
/// equations `Phi^T D (I - gamma^n P^n) Phi v = Phi^T D r_n`.
pub fn projected_fixed_point_oracle(mdp: &Mdp, policy: &Policy, features: &FeatureMatrix, n: usize) -> Result<Vec<f64>> {
    if features.n_states() != mdp.n_states() {
        return Err(FedError::Shape("feature rows differ from |S|".into()));
    }
    let sys = projected_system(mdp, policy, n)?;
    let phi = features.matrix();
    let ns = mdp.n_states();
    let lhs = phi.transpose() * &sys.weights * (DMatrix::identity(ns, ns) - &sys.discounted_pn) * phi;
    let rhs = phi.transpose() * &sys.weights * &sys.reward_n;
    let v = lhs.lu().solve(&rhs).ok_or_else(|| {
        FedError::Numeric("projected system matrix Phi^T D (I - gamma^n P^n) Phi is singular".into())
    })?;
    Ok(v.iter().copied().collect())
}

/// `|| Phi v - Pi((T^pi)^n Phi v) ||_inf` with `Pi = Phi (Phi^T D Phi)^{-1} Phi^T D`.
pub fn projected_residual(mdp: &Mdp, policy: &Policy, features: &FeatureMatrix, n: usize, v: &[f64]) -> Result<f64> {
    let sys = projected_system(mdp, policy, n)?;
    let phi = features.matrix();
    let gram = phi.transpose() * &sys.weights * phi;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| FedError::Numeric("Phi^T D Phi is singular".into()))?;
    let value = phi * DVector::from_column_slice(v);
    let target = &sys.reward_n + &sys.discounted_pn * &value;
    let projected = phi * gram_inv * phi.transpose() * &sys.weights * target;
    Ok((value - projected).amax())
}

/// Importance weight `pi(a|s) / pi_b(a|s)`.
pub fn importance_ratio(target: &Policy, behavior: &Policy, s: usize, a: usize) -> Result<f64> {
    let t = target.prob(s, a);
    let b = behavior.prob(s, a);
    if b > 0.0 {
        Ok(t / b)
    } else if t > 0.0 {
        Err(FedError::Coverage {
            state: s,
            action: a,
            target: t,
        })
    } else {
        Ok(0.0)
    }
}

/// `I_max = max_{s,a,i} pi(a|s) / pi^i(a|s)`.
pub fn max_importance_ratio(target: &Policy, behaviors: &[Policy]) -> Result<f64> {
    let mut best = 0.0_f64;
    for b in behaviors {
        if b.n_states() != target.n_states() || b.n_actions() != target.n_actions() {
            return Err(FedError::Shape("behavior policy shape differs from target".into()));
        }
        for s in 0..target.n_states() {
            for a in 0..target.n_actions() {
                best = best.max(importance_ratio(target, b, s, a)?);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn cycle_mdp(n: usize) -> Mdp {
        let mut p = vec![0.0; n * n];
        for s in 0..n {
            p[s * n + (s + 1) % n] = 1.0;
        }
        Mdp::new(n, 1, p, vec![0.5; n], 0.9).unwrap()
    }

    pub(crate) fn small_random_mdp(seed: u64, ns: usize, na: usize) -> (Mdp, Policy) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::new();
        for _ in 0..ns * na {
            let row: Vec<f64> = (0..ns).map(|_| rng.random::<f64>() + 0.01).collect();
            let t: f64 = row.iter().sum();
            p.extend(row.into_iter().map(|x| x / t));
        }
        let r = (0..ns * na).map(|_| rng.random::<f64>()).collect();
        let mdp = Mdp::new(ns, na, p, r, 0.9).unwrap();
        let mut probs = Vec::new();
        for _ in 0..ns {
            let row: Vec<f64> = (0..na).map(|_| rng.random::<f64>() + 0.05).collect();
            let t: f64 = row.iter().sum();
            probs.extend(row.into_iter().map(|x| x / t));
        }
        (mdp, Policy::new(ns, na, probs).unwrap())
    }

    #[test]
    fn deterministic_cycle_gives_permutation() {
        let mdp = cycle_mdp(4);
        let p = policy_transition_matrix(&mdp, &Policy::uniform(4, 1)).unwrap();
        for s in 0..4 {
            for s2 in 0..4 {
                assert_eq!(p[(s, s2)], if s2 == (s + 1) % 4 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn uniform_everything_gives_flat_matrix() {
        let n = 3;
        let mdp = Mdp::new(n, 2, vec![1.0 / 3.0; n * 2 * n], vec![0.0; 6], 0.5).unwrap();
        let p = policy_transition_matrix(&mdp, &Policy::uniform(n, 2)).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn random_rows_sum_to_one() {
        let (mdp, pi) = small_random_mdp(3, 4, 3);
        let p = policy_transition_matrix(&mdp, &pi).unwrap();
        for row in p.row_iter() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mdp, _) = small_random_mdp(3, 4, 3);
        let wrong = Policy::uniform(4, 2);
        assert!(matches!(policy_transition_matrix(&mdp, &wrong), Err(FedError::Shape(_))));
    }

    #[test]
    fn stationary_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let mu = stationary_distribution(&p).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-14 && (mu[1] - 0.5).abs() < 1e-14);

        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5]);
        let mu = stationary_distribution(&p).unwrap();
        assert!((mu[0] - 5.0 / 6.0).abs() < 1e-14);
        assert!((mu[1] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_chain_is_rejected() {
        let mdp = cycle_mdp(3);
        let p = policy_transition_matrix(&mdp, &Policy::uniform(3, 1)).unwrap();
        assert!(matches!(stationary_distribution(&p), Err(FedError::Ergodicity(_))));
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(stationary_distribution(&swap), Err(FedError::Ergodicity(_))));
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let p = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.3, 0.3, 0.4]);
        assert!(matches!(stationary_distribution(&p), Err(FedError::Ergodicity(_))));
    }

    #[test]
    fn stationary_is_invariant() {
        for seed in 0..10 {
            let (mdp, pi) = small_random_mdp(seed, 6, 2);
            let p = policy_transition_matrix(&mdp, &pi).unwrap();
            let mu = stationary_distribution(&p).unwrap();
            let row = DVector::from_vec(mu.clone()).transpose() * &p;
            let gap: f64 = row.iter().zip(&mu).map(|(x, y)| (x - y).abs()).sum();
            assert!(gap <= 1e-10, "gap {gap}");
        }
    }

    #[test]
    fn value_function_examples() {
        let (mdp, pi) = small_random_mdp(11, 5, 2);
        let zero = Mdp::new(5, 2, mdp.transition.clone(), vec![0.0; 10], 0.9).unwrap();
        assert!(value_function_oracle(&zero, &pi).unwrap().iter().all(|&v| v == 0.0));

        let single = Mdp::new(1, 1, vec![1.0], vec![1.0], 0.9).unwrap();
        let v = value_function_oracle(&single, &Policy::uniform(1, 1)).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);

        let (mdp, pi) = small_random_mdp(5, 6, 3);
        let exact = value_function_oracle(&mdp, &pi).unwrap();
        let iterated = policy_evaluation_iterative(&mdp, &pi, 1e-12).unwrap();
        for (x, y) in exact.iter().zip(&iterated) {
            assert!((x - y).abs() <= 1e-8);
        }
        assert!(bellman_residual(&mdp, &pi, &exact).unwrap() <= 1e-10);
    }

    #[test]
    fn q_star_examples() {
        let single = Mdp::new(1, 1, vec![1.0], vec![1.0], 0.5).unwrap();
        let q = q_star_oracle(&single).unwrap();
        assert!((q[0] - 2.0).abs() < 1e-9);

        let two = Mdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 0.0], 0.5).unwrap();
        let q = q_star_oracle(&two).unwrap();
        assert!((q[0] - 2.0).abs() < 1e-9);
        assert!((q[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_beats_random_policies() {
        use rand::{Rng, SeedableRng};
        let (mdp, _) = small_random_mdp(21, 5, 3);
        let q = q_star_oracle(&mdp).unwrap();
        let residual = optimality_operator(&mdp, &q)
            .iter()
            .zip(&q)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(residual <= 1e-10);
        let v_greedy = value_function_oracle(&mdp, &greedy_policy(&mdp, &q)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let probs: Vec<f64> = (0..5)
                .flat_map(|_| {
                    let row: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                    let t: f64 = row.iter().sum();
                    row.into_iter().map(move |x| x / t)
                })
                .collect();
            let v = value_function_oracle(&mdp, &Policy::new(5, 3, probs).unwrap()).unwrap();
            for (g, r) in v_greedy.iter().zip(&v) {
                assert!(g - r >= -1e-9);
            }
        }
    }

    #[test]
    fn projected_oracle_examples() {
        let (mdp, pi) = small_random_mdp(8, 5, 2);
        let tab = projected_fixed_point_oracle(&mdp, &pi, &FeatureMatrix::identity(5), 1).unwrap();
        let v = value_function_oracle(&mdp, &pi).unwrap();
        for (x, y) in tab.iter().zip(&v) {
            assert!((x - y).abs() <= 1e-8);
        }

        let zero = Mdp::new(5, 2, mdp.transition.clone(), vec![0.0; 10], 0.9).unwrap();
        let phi = FeatureMatrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.5, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![0.3, -0.2],
        ])
        .unwrap();
        let v0 = projected_fixed_point_oracle(&zero, &pi, &phi, 2).unwrap();
        assert!(v0.iter().all(|x| x.abs() < 1e-15));

        let v2 = projected_fixed_point_oracle(&mdp, &pi, &phi, 2).unwrap();
        assert!(projected_residual(&mdp, &pi, &phi, 2, &v2).unwrap() <= 1e-8);
    }

    #[test]
    fn rank_deficient_features_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        assert!(matches!(FeatureMatrix::from_rows(&rows), Err(FedError::Rank(_))));
        let wide = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert!(matches!(FeatureMatrix::from_rows(&wide), Err(FedError::Shape(_))));
    }

    #[test]
    fn importance_ratio_examples() {
        let (_, pi) = small_random_mdp(4, 3, 3);
        for s in 0..3 {
            for a in 0..3 {
                assert_eq!(importance_ratio(&pi, &pi, s, a).unwrap(), 1.0);
            }
        }
        let target = Policy::from_rows(&[vec![0.6, 0.4]]).unwrap();
        let behavior = Policy::from_rows(&[vec![0.3, 0.7]]).unwrap();
        assert!((importance_ratio(&target, &behavior, 0, 0).unwrap() - 2.0).abs() < 1e-15);

        let blind = Policy::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(importance_ratio(&target, &blind, 0, 0), Err(FedError::Coverage { .. })));
    }

    #[test]
    fn importance_weighting_is_unbiased() {
        let (_, target) = small_random_mdp(31, 4, 4);
        let (_, behavior) = small_random_mdp(32, 4, 4);
        let f = [0.3, -1.2, 4.0, 0.7];
        for s in 0..4 {
            let weighted: f64 = (0..4)
                .map(|a| behavior.prob(s, a) * importance_ratio(&target, &behavior, s, a).unwrap() * f[a])
                .sum();
            let direct: f64 = (0..4).map(|a| target.prob(s, a) * f[a]).sum();
            assert!((weighted - direct).abs() <= 1e-14);
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(Mdp::new(1, 1, vec![1.0], vec![1.5], 0.5).is_err());
        assert!(Mdp::new(1, 1, vec![1.0], vec![0.5], 1.0).is_err());
        assert!(Mdp::new(2, 1, vec![0.6, 0.6, 0.5, 0.5], vec![0.5; 2], 0.5).is_err());
        assert!(Policy::from_rows(&[vec![0.5, 0.6]]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (mdp, pi) = small_random_mdp(77, 4, 3);
        let back = Mdp::from_json_str(&mdp.to_json_string()).unwrap();
        assert_eq!(back, mdp);
        let text = serde_json::to_string(&pi).unwrap();
        let pi2: Policy = serde_json::from_str(&text).unwrap();
        assert_eq!(pi2, pi);
    }
}
