//! Random ergodic MDPs and the policies and features that go with them.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmInstance, AlgorithmKind};
use crate::error::{FedError, Result};
use crate::mdp::{numerical_rank, FeatureMatrix, Mdp, Policy};

const FEATURE_REDRAWS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorParams {
    pub n_states: usize,
    pub n_actions: usize,
    /// Successor states with Garnet mass per `(s, a)` before the uniform mix.
    pub branching: usize,
    pub gamma: f64,
    /// Feature dimension (linear TD only).
    pub d: usize,
    pub n: usize,
    /// Floor on every behavior probability.
    pub eps_cov: f64,
    /// Uniform mass mixed into every transition row.
    pub eps_ergodic: f64,
    /// Distinct behavior policies; agent `i` uses behavior `i mod n_behaviors`.
    pub n_behaviors: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            n_states: 10,
            n_actions: 4,
            branching: 3,
            gamma: 0.9,
            d: 4,
            n: 1,
            eps_cov: 0.05,
            eps_ergodic: 0.01,
            n_behaviors: 4,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FedError::Parameter(m));
        if self.n_states == 0 || self.n_actions == 0 {
            return bad("need at least one state and one action".into());
        }
        if self.branching == 0 || self.branching > self.n_states {
            return bad(format!("branching {} must lie in 1..={}", self.branching, self.n_states));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} must lie in (0, 1)", self.gamma));
        }
        if self.d == 0 || self.d > self.n_states {
            return bad(format!("feature dimension {} must lie in 1..=|S| = {}", self.d, self.n_states));
        }
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if !(self.eps_cov > 0.0 && self.eps_cov * self.n_actions as f64 <= 1.0) {
            return bad(format!("eps_cov {} must lie in (0, 1/|A|]", self.eps_cov));
        }
        if !(self.eps_ergodic > 0.0 && self.eps_ergodic <= 1.0) {
            return bad(format!("eps_ergodic {} must lie in (0, 1]", self.eps_ergodic));
        }
        if self.n_behaviors == 0 {
            return bad("need at least one behavior policy".into());
        }
        Ok(())
    }
}

/// Everything drawn for one generated instance.
#[derive(Clone, Debug)]
pub struct GeneratedParts {
    pub mdp: Mdp,
    pub target: Policy,
    pub behaviors: Vec<Policy>,
    pub features: FeatureMatrix,
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    // Uniform on the simplex via normalized exponentials.
    let w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let t: f64 = w.iter().sum();
    w.into_iter().map(|x| x / t).collect()
}

pub fn generate_mdp(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Result<Mdp> {
    params.validate()?;
    let (ns, na) = (params.n_states, params.n_actions);
    let mut transition = vec![0.0; ns * na * ns];
    for row in transition.chunks_mut(ns) {
        let succ = sample(rng, ns, params.branching);
        let mass = random_simplex(rng, params.branching);
        for (s2, m) in succ.iter().zip(mass) {
            row[s2] = (1.0 - params.eps_ergodic) * m;
        }
        for p in row.iter_mut() {
            *p += params.eps_ergodic / ns as f64;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    Mdp::new(ns, na, transition, reward, params.gamma)
}

/// Orthonormalized Gaussian `|S| x d` features, redrawn up to five times on rank loss.
pub fn generate_features(n_states: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<FeatureMatrix> {
    for _ in 0..FEATURE_REDRAWS {
        let g = DMatrix::from_fn(n_states, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        if numerical_rank(&g) < d {
            continue;
        }
        let q = g.qr().q();
        if let Ok(f) = FeatureMatrix::new(q.columns(0, d).into_owned()) {
            return Ok(f);
        }
    }
    Err(FedError::Generation(format!("no rank-{d} feature matrix after {FEATURE_REDRAWS} draws")))
}

/// Draws the MDP, a random target policy, behaviors `(1 - l) pi + l uniform`
/// with `l >= |A| eps_cov`, and features.
pub fn generate_parts(params: &GeneratorParams, seed: u64) -> Result<GeneratedParts> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = generate_mdp(params, &mut rng)?;
    let (ns, na) = (params.n_states, params.n_actions);
    let probs: Vec<f64> = (0..ns).flat_map(|_| random_simplex(&mut rng, na)).collect();
    let target = Policy::new(ns, na, probs)?;
    let uniform = Policy::uniform(ns, na);
    let floor = na as f64 * params.eps_cov;
    let behaviors = (0..params.n_behaviors)
        .map(|_| {
            let lambda = floor + (1.0 - floor) * rng.random::<f64>();
            target.mix(&uniform, lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    let features = generate_features(ns, params.d, &mut rng)?;
    Ok(GeneratedParts { mdp, target, behaviors, features })
}

pub fn generate_instance(kind: AlgorithmKind, params: &GeneratorParams, seed: u64) -> Result<AlgorithmInstance> {
    let parts = generate_parts(params, seed)?;
    AlgorithmInstance::new(kind, parts.mdp, parts.target, parts.behaviors, Some(parts.features), params.n)
}
