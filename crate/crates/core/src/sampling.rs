//! Markovian trajectories for each agent, seeded random streams and
//! mixing-rate diagnostics.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FedError, Result};
use crate::mdp::{stationary_distribution, validate_distribution, Mdp, Policy, StateMatrix};

/// Stream id reserved for the output-time draw of a run.
pub const OUTPUT_STREAM: u64 = u64::MAX;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream `stream` in trial `trial`; a pure function of its inputs.
pub fn derive_seed(master_seed: u64, trial: u64, stream: u64) -> u64 {
    let h = splitmix64(master_seed ^ 0x6A09_E667_F3BC_C908);
    let h = splitmix64(h ^ trial.rotate_left(17));
    splitmix64(h ^ stream.rotate_left(41) ^ 0xBB67_AE85_84CA_A73B)
}

pub fn stream_rng(master_seed: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, trial, stream))
}

/// Inverse-CDF sampler over `0..len`.
#[derive(Clone, Debug)]
pub struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    pub fn new(p: &[f64]) -> Result<Self> {
        validate_distribution(p, p.len())?;
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        // everything from the last supported outcome on absorbs the rounding slack
        let last = p.iter().rposition(|&x| x > 0.0).expect("a distribution has support");
        cdf[last..].iter_mut().for_each(|c| *c = f64::INFINITY);
        Ok(Self { cdf })
    }

    /// Sampler proportional to non-negative `weights`, without the unit-sum check.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|x| {
                acc += x / total;
                acc
            })
            .collect();
        let last = weights.iter().rposition(|&x| x > 0.0).unwrap_or(weights.len() - 1);
        cdf[last..].iter_mut().for_each(|c| *c = f64::INFINITY);
        Self { cdf }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u)
    }
}

/// Precomputed samplers for one agent's state-action chain.
#[derive(Clone, Debug)]
pub struct ChainModel {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Categorical>,
    behavior: Vec<Categorical>,
    initial: Categorical,
}

impl ChainModel {
    pub fn new(mdp: &Mdp, behavior: &Policy, xi: &[f64]) -> Result<Self> {
        if behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions() {
            return Err(FedError::Shape("behavior policy shape differs from MDP".into()));
        }
        validate_distribution(xi, mdp.n_states())?;
        let transition = (0..mdp.n_states())
            .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
            .map(|(s, a)| Categorical::new(mdp.transition_row(s, a)))
            .collect::<Result<_>>()?;
        let behavior = (0..mdp.n_states())
            .map(|s| Categorical::new(behavior.row(s)))
            .collect::<Result<_>>()?;
        Ok(Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            transition,
            behavior,
            initial: Categorical::new(xi)?,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    fn step<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> (usize, usize) {
        let a = self.behavior[s].sample(rng);
        let s2 = self.transition[s * self.n_actions + a].sample(rng);
        (a, s2)
    }
}

pub fn uniform_distribution(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Borrowed view of `y_t = (S_t, A_t, ..., A_{t+n-1}, S_{t+n})`.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub states: &'a [usize],
    pub actions: &'a [usize],
}

impl Window<'_> {
    /// Multi-step count `n`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// One agent's Markov chain over windows of `n` transitions.
#[derive(Clone, Debug)]
pub struct AgentChain {
    agent_id: usize,
    states: Vec<usize>,
    actions: Vec<usize>,
    rng: ChaCha8Rng,
}

impl AgentChain {
    /// Draws `S_0 ~ xi` and warms the window with `n` transitions.
    pub fn init(model: &ChainModel, agent_id: usize, n: usize, mut rng: ChaCha8Rng) -> Result<Self> {
        if n == 0 {
            return Err(FedError::Parameter("window needs n >= 1 transitions".into()));
        }
        let mut states = Vec::with_capacity(n + 1);
        let mut actions = Vec::with_capacity(n);
        states.push(model.initial.sample(&mut rng));
        for _ in 0..n {
            let (a, s2) = model.step(*states.last().unwrap(), &mut rng);
            actions.push(a);
            states.push(s2);
        }
        Ok(Self {
            agent_id,
            states,
            actions,
            rng,
        })
    }

    /// Shifts the window by one step and returns the newest `(A_{t+n}, S_{t+n+1})`.
    pub fn advance(&mut self, model: &ChainModel) -> (usize, usize) {
        let n = self.actions.len();
        let (a, s2) = model.step(self.states[n], &mut self.rng);
        self.states.copy_within(1.., 0);
        self.states[n] = s2;
        self.actions.copy_within(1.., 0);
        self.actions[n - 1] = a;
        (a, s2)
    }

    pub fn window(&self) -> Window<'_> {
        Window {
            states: &self.states,
            actions: &self.actions,
        }
    }

    pub fn agent_id(&self) -> usize {
        self.agent_id
    }

    pub fn current_state(&self) -> usize {
        self.states[0]
    }
}

/// Builds and warms an agent chain from scratch.
pub fn init_chain(mdp: &Mdp, behavior: &Policy, xi: &[f64], n: usize, seed: u64) -> Result<(ChainModel, AgentChain)> {
    let model = ChainModel::new(mdp, behavior, xi)?;
    let chain = AgentChain::init(&model, 0, n, ChaCha8Rng::seed_from_u64(seed))?;
    Ok((model, chain))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixingEstimate {
    pub rho: f64,
    pub m_bar: f64,
}

impl MixingEstimate {
    /// `ceil(2 ln(alpha) / ln(rho))`, at least 1.
    pub fn tau_alpha(&self, alpha: f64) -> usize {
        if self.rho <= 0.0 || !(alpha > 0.0 && alpha < 1.0) {
            return 1;
        }
        let tau = (2.0 * alpha.ln() / self.rho.ln()).ceil();
        (tau as usize).max(1)
    }
}

/// Worst-start total-variation distance of `P^t` to `mu`.
pub fn tv_to_stationary(pt: &StateMatrix, mu: &[f64]) -> f64 {
    pt.row_iter()
        .map(|row| 0.5 * row.iter().zip(mu).map(|(x, m)| (x - m).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Second-largest eigenvalue modulus and the geometric-mixing prefactor.
pub fn mixing_diagnostics(p: &StateMatrix) -> Result<MixingEstimate> {
    let mu = stationary_distribution(p)?;
    let n = p.nrows();
    let mut moduli: Vec<(f64, f64)> = p
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| (((z.re - 1.0).powi(2) + z.im.powi(2)).sqrt(), z.norm()))
        .collect();
    moduli.sort_by(|x, y| x.0.total_cmp(&y.0));
    let rho = moduli.iter().skip(1).map(|m| m.1).fold(0.0, f64::max).min(1.0);
    if rho >= 1.0 - 1e-12 {
        return Err(FedError::NearPeriodic { rho });
    }

    let mut pt = DMatrix::identity(n, n);
    let mut m_bar = tv_to_stationary(&pt, &mu);
    if rho > 1e-12 {
        for t in 1..=10_000 {
            pt = &pt * p;
            let tv = tv_to_stationary(&pt, &mu);
            if tv <= 1e-10 {
                break;
            }
            m_bar = m_bar.max(tv / rho.powi(t));
        }
    }
    Ok(MixingEstimate { rho, m_bar })
}
