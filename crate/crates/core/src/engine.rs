//! The federated loop: `N` agents take local stochastic-approximation steps
//! driven by their own Markov noise and average every `K` steps. The output
//! is the averaged iterate at a random time drawn from `q^c_T`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::sampling::{derive_seed, stream_rng, Categorical, OUTPUT_STREAM};

/// Norm in which a problem's contraction is stated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Sup,
    Euclidean,
}

impl NormKind {
    pub fn norm(self, x: &[f64]) -> f64 {
        match self {
            NormKind::Sup => x.iter().fold(0.0, |m, v| m.max(v.abs())),
            NormKind::Euclidean => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    pub fn dist(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            NormKind::Sup => x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs())),
            NormKind::Euclidean => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        }
    }
}

/// Per-agent Markov noise `y^i_t` and the parameter space it acts on.
pub trait MarkovNoise: Sync {
    type Noise: Clone + Send;

    fn dim(&self) -> usize;
    fn norm_kind(&self) -> NormKind;
    /// Draws `y^i_0` from the agent's own stream.
    fn init_noise(&self, agent: usize, rng: ChaCha8Rng) -> Result<Self::Noise>;
    /// `y^i_t -> y^i_{t+1}`.
    fn advance_noise(&self, agent: usize, noise: &mut Self::Noise);
}

/// A problem in the form `theta + alpha (G^i(theta, y) - theta + b^i(y))`.
pub trait FedSamProblem: MarkovNoise {
    fn apply_g(&self, agent: usize, theta: &[f64], noise: &Self::Noise, out: &mut [f64]);
    fn apply_b(&self, agent: usize, noise: &Self::Noise, out: &mut [f64]);
    /// Exact `G-bar^i(theta)` when the instantiation can compute it.
    fn expected_g(&self, _agent: usize, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Anything the engine can drive: one in-place local step per agent.
pub trait LocalUpdate: MarkovNoise {
    fn local_step(&self, agent: usize, theta: &mut [f64], noise: &Self::Noise, alpha: f64, scratch: &mut Vec<f64>);
}

impl<P: FedSamProblem> LocalUpdate for P {
    fn local_step(&self, agent: usize, theta: &mut [f64], noise: &Self::Noise, alpha: f64, scratch: &mut Vec<f64>) {
        fedsam_step_into(self, agent, theta, noise, alpha, scratch);
    }
}

fn fedsam_step_into<P: FedSamProblem + ?Sized>(
    problem: &P,
    agent: usize,
    theta: &mut [f64],
    noise: &P::Noise,
    alpha: f64,
    scratch: &mut Vec<f64>,
) {
    let d = theta.len();
    scratch.resize(2 * d, 0.0);
    let (g, b) = scratch.split_at_mut(d);
    problem.apply_g(agent, theta, noise, g);
    problem.apply_b(agent, noise, b);
    for k in 0..d {
        theta[k] += alpha * (g[k] - theta[k] + b[k]);
    }
}

/// `theta + alpha (G(theta, y) - theta + b(y))`.
pub fn fedsam_local_step<P: FedSamProblem + ?Sized>(
    problem: &P,
    agent: usize,
    theta: &[f64],
    noise: &P::Noise,
    alpha: f64,
) -> Result<Vec<f64>> {
    let mut out = theta.to_vec();
    fedsam_step_into(problem, agent, &mut out, noise, alpha, &mut Vec::new());
    if out.iter().any(|x| !x.is_finite()) {
        return Err(FedError::Divergence { t: 0, agent });
    }
    Ok(out)
}

/// `q(t) = c^{-t} / sum_{t' < T} c^{-t'}` over `0..T`.
pub fn q_distribution(c: f64, horizon: usize) -> Result<Vec<f64>> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(FedError::Parameter(format!("output constant c = {c} must be positive")));
    }
    if horizon == 0 {
        return Err(FedError::Parameter("horizon must be >= 1".into()));
    }
    let slope = -c.ln();
    let top = if slope >= 0.0 { slope * (horizon - 1) as f64 } else { 0.0 };
    let mut q: Vec<f64> = (0..horizon).map(|t| (slope * t as f64 - top).exp()).collect();
    let total = neumaier_sum(&q);
    q.iter_mut().for_each(|x| *x /= total);
    Ok(q)
}

pub(crate) fn neumaier_sum(xs: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Draws `T-hat` from `q^c_T`.
pub fn sample_output_time<R: Rng + ?Sized>(q: &[f64], rng: &mut R) -> usize {
    Categorical::from_weights(q).sample(rng)
}

/// Mean of equal-length vectors, computed as `x_1 + (1/N) sum (x_i - x_1)` so
/// that identical inputs give back `x_1` exactly.
fn mean_of<'a>(thetas: impl Iterator<Item = &'a [f64]> + Clone, d: usize) -> Vec<f64> {
    let mut it = thetas.clone();
    let first = it.next().expect("at least one agent");
    let mut acc = vec![0.0; d];
    let mut n = 1usize;
    for th in it {
        for k in 0..d {
            acc[k] += th[k] - first[k];
        }
        n += 1;
    }
    (0..d).map(|k| first[k] + acc[k] / n as f64).collect()
}

fn check_shapes(thetas: &[Vec<f64>]) -> Result<usize> {
    let d = thetas
        .first()
        .map(Vec::len)
        .ok_or_else(|| FedError::Shape("no agents to average".into()))?;
    if thetas.iter().any(|t| t.len() != d) {
        return Err(FedError::Shape("agents hold parameters of different dimensions".into()));
    }
    Ok(d)
}

/// Replaces every agent's parameter by the arithmetic mean.
pub fn sync_average(thetas: &mut [Vec<f64>]) -> Result<()> {
    let d = check_shapes(thetas)?;
    let mean = mean_of(thetas.iter().map(Vec::as_slice), d);
    for th in thetas.iter_mut() {
        th.copy_from_slice(&mean);
    }
    Ok(())
}

/// `(Delta, Omega)`: mean and mean-square distance of the agents to their average.
pub fn sync_error(thetas: &[Vec<f64>], norm: NormKind) -> Result<(f64, f64)> {
    let d = check_shapes(thetas)?;
    Ok(dispersion(thetas.iter().map(Vec::as_slice), d, norm).1)
}

fn dispersion<'a>(thetas: impl Iterator<Item = &'a [f64]> + Clone, d: usize, norm: NormKind) -> (Vec<f64>, (f64, f64)) {
    let mean = mean_of(thetas.clone(), d);
    let (mut delta, mut omega, mut n) = (0.0, 0.0, 0usize);
    for th in thetas {
        let e = norm.dist(&mean, th);
        delta += e;
        omega += e * e;
        n += 1;
    }
    (mean, (delta / n as f64, omega / n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedRunConfig {
    pub n_agents: usize,
    pub sync_period: usize,
    pub step_size: f64,
    pub horizon: usize,
    pub output_c: f64,
    pub master_seed: u64,
    /// Replication id; selects the family of random streams.
    pub trial: u64,
    pub parallel: bool,
    /// Record checkpoints every `max(1, T / checkpoint_count)` steps.
    pub trace: bool,
    pub checkpoint_count: usize,
    /// Stop at `T-hat` when no trace is requested.
    pub early_stop: bool,
    /// Initial parameter shared by all agents (zeros when absent).
    pub theta0: Option<Vec<f64>>,
    /// Mixing time used only for the short-horizon warning.
    pub tau: Option<usize>,
}

impl FedRunConfig {
    pub fn new(n_agents: usize, sync_period: usize, step_size: f64, horizon: usize, output_c: f64) -> Self {
        Self {
            n_agents,
            sync_period,
            step_size,
            horizon,
            output_c,
            master_seed: 0,
            trial: 0,
            parallel: false,
            trace: true,
            checkpoint_count: 500,
            early_stop: false,
            theta0: None,
            tau: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_agents == 0 {
            return Err(FedError::Parameter("n_agents must be >= 1".into()));
        }
        if self.sync_period == 0 {
            return Err(FedError::Parameter("sync_period must be >= 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(FedError::Parameter(format!("step size {} must be finite and >= 0", self.step_size)));
        }
        if self.horizon == 0 {
            return Err(FedError::Parameter("horizon must be >= 1".into()));
        }
        if !(self.output_c > 0.0 && self.output_c.is_finite()) {
            return Err(FedError::Parameter(format!("output constant {} must be positive", self.output_c)));
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != dim {
                return Err(FedError::Shape(format!("theta0 has length {} but the problem has dimension {dim}", t0.len())));
            }
        }
        Ok(())
    }

    pub fn checkpoint_every(&self) -> usize {
        (self.horizon / self.checkpoint_count.max(1)).max(1)
    }

    /// Checkpoint times `0, every, 2 every, ...` plus `T`.
    pub fn checkpoint_times(&self) -> Vec<usize> {
        let every = self.checkpoint_every();
        let mut times: Vec<usize> = (0..=self.horizon).step_by(every).collect();
        if times.last() != Some(&self.horizon) {
            times.push(self.horizon);
        }
        times
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub checkpoints: Vec<usize>,
    pub theta_bar_series: Vec<Vec<f64>>,
    pub omega_series: Vec<f64>,
    pub output_index: usize,
    pub output_theta: Vec<f64>,
    /// Averaged iterate when the loop stopped.
    pub final_theta: Vec<f64>,
    pub steps_run: usize,
    /// Largest `Omega` observed right after any averaging round.
    pub sync_omega_max: f64,
}

struct AgentState<N> {
    theta: Vec<f64>,
    noise: N,
    scratch: Vec<f64>,
    snaps: Vec<f64>,
}

fn run_block<U: LocalUpdate>(
    update: &U,
    agent: usize,
    st: &mut AgentState<U::Noise>,
    t0: usize,
    t1: usize,
    alpha: f64,
    events: &[usize],
) -> Result<()> {
    st.snaps.clear();
    let mut next_event = events.iter().peekable();
    for t in t0..t1 {
        update.local_step(agent, &mut st.theta, &st.noise, alpha, &mut st.scratch);
        if st.theta.iter().any(|x| !x.is_finite()) {
            return Err(FedError::Divergence { t: t + 1, agent });
        }
        update.advance_noise(agent, &mut st.noise);
        if next_event.peek() == Some(&&(t + 1)) {
            st.snaps.extend_from_slice(&st.theta);
            next_event.next();
        }
    }
    Ok(())
}

struct Recorder {
    checkpoints: Vec<usize>,
    output_index: usize,
    trace: RunTrace,
}

impl Recorder {
    fn is_event(&self, t: usize) -> bool {
        t == self.output_index || self.checkpoints.binary_search(&t).is_ok()
    }

    fn record<'a>(&mut self, t: usize, thetas: impl Iterator<Item = &'a [f64]> + Clone, d: usize, norm: NormKind) {
        let (mean, (_, omega)) = dispersion(thetas, d, norm);
        if t == self.output_index {
            self.trace.output_theta = mean.clone();
        }
        if self.checkpoints.binary_search(&t).is_ok() {
            self.trace.checkpoints.push(t);
            self.trace.theta_bar_series.push(mean);
            self.trace.omega_series.push(omega);
        }
    }
}

/// Checks `G^i(0, y) = 0` on a handful of sampled windows for every agent.
pub fn check_registration<P: FedSamProblem>(problem: &P, n_agents: usize, seed: u64) -> Result<()> {
    let d = problem.dim();
    let zero = vec![0.0; d];
    let mut out = vec![0.0; d];
    for agent in 0..n_agents.min(8) {
        let rng = stream_rng(seed, u64::MAX, agent as u64);
        let mut noise = problem.init_noise(agent, rng)?;
        for _ in 0..32 {
            problem.apply_g(agent, &zero, &noise, &mut out);
            let size = problem.norm_kind().norm(&out);
            if size > 1e-12 {
                return Err(FedError::Precondition(format!(
                    "G({agent}, 0, y) has norm {size:e}; zero must be the fixed point"
                )));
            }
            problem.advance_noise(agent, &mut noise);
        }
    }
    Ok(())
}

/// Runs the federated loop on a registered problem.
pub fn run_fedsam<P: FedSamProblem>(problem: &P, config: &FedRunConfig) -> Result<RunTrace> {
    check_registration(problem, config.n_agents, config.master_seed)?;
    run_local(problem, config)
}

/// Runs the federated loop with any local update rule.
pub fn run_local<U: LocalUpdate>(update: &U, config: &FedRunConfig) -> Result<RunTrace> {
    let d = update.dim();
    config.validate(d)?;
    let (n, k, horizon) = (config.n_agents, config.sync_period, config.horizon);
    if let Some(tau) = config.tau {
        let needed = (k + tau).max(2 * tau);
        if horizon < needed {
            log::warn!("horizon {horizon} is below max(K + tau, 2 tau) = {needed}");
        }
    }

    let q = q_distribution(config.output_c, horizon)?;
    let mut out_rng = stream_rng(config.master_seed, config.trial, OUTPUT_STREAM);
    let output_index = sample_output_time(&q, &mut out_rng);
    let run_until = if config.early_stop && !config.trace { output_index } else { horizon };

    let theta0 = config.theta0.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut agents = (0..n)
        .map(|i| {
            let rng = stream_rng(config.master_seed, config.trial, i as u64);
            Ok(AgentState {
                theta: theta0.clone(),
                noise: update.init_noise(i, rng)?,
                scratch: Vec::with_capacity(2 * d),
                snaps: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rec = Recorder {
        checkpoints: if config.trace { config.checkpoint_times() } else { Vec::new() },
        output_index,
        trace: RunTrace {
            checkpoints: Vec::new(),
            theta_bar_series: Vec::new(),
            omega_series: Vec::new(),
            output_index,
            output_theta: Vec::new(),
            final_theta: Vec::new(),
            steps_run: run_until,
            sync_omega_max: 0.0,
        },
    };
    let norm = update.norm_kind();
    rec.record(0, agents.iter().map(|a| a.theta.as_slice()), d, norm);

    let mut t0 = 0;
    while t0 < run_until {
        let t1 = ((t0 / k + 1) * k).min(run_until);
        let inner: Vec<usize> = (t0 + 1..t1).filter(|&t| rec.is_event(t)).collect();
        let alpha = config.step_size;
        let outcomes: Vec<Result<()>> = if config.parallel {
            agents
                .par_iter_mut()
                .enumerate()
                .map(|(i, st)| run_block(update, i, st, t0, t1, alpha, &inner))
                .collect()
        } else {
            agents
                .iter_mut()
                .enumerate()
                .map(|(i, st)| run_block(update, i, st, t0, t1, alpha, &inner))
                .collect()
        };
        let first_failure = outcomes
            .into_iter()
            .filter_map(std::result::Result::err)
            .min_by_key(|e| match e {
                FedError::Divergence { t, agent } => (*t, *agent),
                _ => (0, 0),
            });
        if let Some(err) = first_failure {
            return Err(err);
        }
        for (j, &t) in inner.iter().enumerate() {
            rec.record(t, agents.iter().map(|a| &a.snaps[j * d..(j + 1) * d]), d, norm);
        }
        if t1 % k == 0 {
            let mean = mean_of(agents.iter().map(|a| a.theta.as_slice()), d);
            for a in agents.iter_mut() {
                a.theta.copy_from_slice(&mean);
            }
            let (_, (_, omega)) = dispersion(agents.iter().map(|a| a.theta.as_slice()), d, norm);
            rec.trace.sync_omega_max = rec.trace.sync_omega_max.max(omega);
        }
        if rec.is_event(t1) {
            rec.record(t1, agents.iter().map(|a| a.theta.as_slice()), d, norm);
        }
        t0 = t1;
    }
    rec.trace.final_theta = mean_of(agents.iter().map(|a| a.theta.as_slice()), d);
    Ok(rec.trace)
}

/// Monte-Carlo estimate of `E || (1/N) sum_i b^i(y^i_r) ||` with chains started afresh.
pub fn noise_average_diagnostic<P: FedSamProblem>(
    problem: &P,
    n_agents: usize,
    r: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let d = problem.dim();
    let mut b = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let mut total = 0.0;
    for j in 0..samples {
        avg.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n_agents {
            let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, j as u64, i as u64));
            let mut noise = problem.init_noise(i, rng)?;
            for _ in 0..r {
                problem.advance_noise(i, &mut noise);
            }
            problem.apply_b(i, &noise, &mut b);
            for k in 0..d {
                avg[k] += b[k] / n_agents as f64;
            }
        }
        total += problem.norm_kind().norm(&avg);
    }
    Ok(total / samples as f64)
}

/// Scalar problem with `G = gain * theta` and i.i.d. `N(0, sigma^2)` noise `b(y) = y`.
///
/// With `gain = 0` one step is `x + alpha (X - x)`, the exactly solvable
/// i.i.d. recursion.
#[derive(Clone, Debug)]
pub struct ScalarGaussianProblem {
    pub gain: f64,
    pub sigma: f64,
}

impl MarkovNoise for ScalarGaussianProblem {
    type Noise = (ChaCha8Rng, f64);

    fn dim(&self) -> usize {
        1
    }

    fn norm_kind(&self) -> NormKind {
        NormKind::Sup
    }

    fn init_noise(&self, _agent: usize, mut rng: ChaCha8Rng) -> Result<Self::Noise> {
        let y: f64 = StandardNormal.sample(&mut rng);
        Ok((rng, self.sigma * y))
    }

    fn advance_noise(&self, _agent: usize, noise: &mut Self::Noise) {
        let y: f64 = StandardNormal.sample(&mut noise.0);
        noise.1 = self.sigma * y;
    }
}

impl FedSamProblem for ScalarGaussianProblem {
    fn apply_g(&self, _agent: usize, theta: &[f64], _noise: &Self::Noise, out: &mut [f64]) {
        out[0] = self.gain * theta[0];
    }

    fn apply_b(&self, _agent: usize, noise: &Self::Noise, out: &mut [f64]) {
        out[0] = noise.1;
    }

    fn expected_g(&self, _agent: usize, theta: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.gain * theta[0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic `G(theta) = gain * theta`, `b = offset`.
    struct Linear {
        gain: f64,
        offset: f64,
    }

    impl MarkovNoise for Linear {
        type Noise = ();
        fn dim(&self) -> usize {
            1
        }
        fn norm_kind(&self) -> NormKind {
            NormKind::Sup
        }
        fn init_noise(&self, _: usize, _: ChaCha8Rng) -> Result<()> {
            Ok(())
        }
        fn advance_noise(&self, _: usize, _: &mut ()) {}
    }

    impl FedSamProblem for Linear {
        fn apply_g(&self, _: usize, theta: &[f64], _: &(), out: &mut [f64]) {
            out[0] = self.gain * theta[0];
        }
        fn apply_b(&self, _: usize, _: &(), out: &mut [f64]) {
            out[0] = self.offset;
        }
    }

    #[test]
    fn q_distribution_examples() {
        assert_eq!(q_distribution(0.7, 1).unwrap(), vec![1.0]);
        let q = q_distribution(2.0, 3).unwrap();
        for (x, y) in q.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        let q = q_distribution(1.0 - 0.01 * 0.3 / 2.0, 50).unwrap();
        assert!(q.windows(2).all(|w| w[1] > w[0]));
        assert!(q_distribution(0.0, 3).is_err());
        assert!(q_distribution(-1.0, 3).is_err());
    }

    #[test]
    fn q_distribution_survives_extreme_constants() {
        for c in [1e-3, 1e3] {
            let q = q_distribution(c, 100_000).unwrap();
            assert!(q.iter().all(|x| x.is_finite()));
            assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn local_step_examples() {
        let identity = Linear { gain: 1.0, offset: 0.0 };
        assert_eq!(fedsam_local_step(&identity, 0, &[3.5], &(), 0.3).unwrap(), vec![3.5]);
        let p = Linear { gain: 0.5, offset: 1.0 };
        assert_eq!(fedsam_local_step(&p, 0, &[2.0], &(), 0.0).unwrap(), vec![2.0]);
        let out = fedsam_local_step(&p, 0, &[2.0], &(), 0.1).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-15);
        let blow = Linear { gain: 0.0, offset: f64::INFINITY };
        assert!(matches!(fedsam_local_step(&blow, 3, &[0.0], &(), 0.1), Err(FedError::Divergence { agent: 3, .. })));
    }

    #[test]
    fn sync_examples() {
        let mut same = vec![vec![1.5, -2.0]; 3];
        sync_average(&mut same).unwrap();
        assert_eq!(same, vec![vec![1.5, -2.0]; 3]);

        let mut two = vec![vec![1.0], vec![3.0]];
        sync_average(&mut two).unwrap();
        assert_eq!(two, vec![vec![2.0], vec![2.0]]);

        let mut odd = vec![vec![0.1, 0.7], vec![0.2, -0.3], vec![0.35, 1e-3]];
        sync_average(&mut odd).unwrap();
        let once = odd.clone();
        sync_average(&mut odd).unwrap();
        assert_eq!(odd, once);

        assert!(sync_average(&mut [vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn sync_error_examples() {
        assert_eq!(sync_error(&[vec![0.3], vec![0.3]], NormKind::Sup).unwrap(), (0.0, 0.0));
        assert_eq!(sync_error(&[vec![0.0], vec![2.0]], NormKind::Sup).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn linear_recursion_is_exact() {
        let gamma_c = 0.7;
        let alpha = 0.05;
        let p = Linear { gain: gamma_c, offset: 0.0 };
        let mut cfg = FedRunConfig::new(1, 1, alpha, 200, 1.0);
        cfg.theta0 = Some(vec![1.0]);
        let trace = run_fedsam(&p, &cfg).unwrap();
        let factor = 1.0 - alpha * (1.0 - gamma_c);
        for (t, th) in trace.checkpoints.iter().zip(&trace.theta_bar_series) {
            let exact = factor.powi(*t as i32);
            assert!((th[0] - exact).abs() <= 1e-14 * exact.max(1.0), "t {t}");
        }
    }

    #[test]
    fn omega_zero_at_sync_and_parallel_identical() {
        let p = ScalarGaussianProblem { gain: 0.5, sigma: 1.0 };
        let mut cfg = FedRunConfig::new(5, 7, 0.1, 1000, 0.99);
        cfg.master_seed = 42;
        let seq = run_fedsam(&p, &cfg).unwrap();
        cfg.parallel = true;
        let par = run_fedsam(&p, &cfg).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq.sync_omega_max, 0.0);
        for (t, om) in seq.checkpoints.iter().zip(&seq.omega_series) {
            if t % 7 == 0 {
                assert_eq!(*om, 0.0);
            }
        }
        assert!(seq.omega_series.iter().any(|&o| o > 0.0));
        assert_eq!(seq.checkpoints.len(), 501);
    }

    #[test]
    fn output_theta_matches_checkpoint_when_aligned() {
        let p = ScalarGaussianProblem { gain: 0.2, sigma: 1.0 };
        let mut cfg = FedRunConfig::new(3, 2, 0.1, 100, 1.0);
        cfg.master_seed = 9;
        let trace = run_fedsam(&p, &cfg).unwrap();
        let pos = trace.checkpoints.iter().position(|&t| t == trace.output_index).unwrap();
        assert_eq!(trace.theta_bar_series[pos], trace.output_theta);

        cfg.trace = false;
        cfg.early_stop = true;
        let short = run_fedsam(&p, &cfg).unwrap();
        assert_eq!(short.output_theta, trace.output_theta);
        assert_eq!(short.steps_run, trace.output_index);
    }

    #[test]
    fn registration_rejects_nonzero_fixed_point() {
        struct Shifted;
        impl MarkovNoise for Shifted {
            type Noise = ();
            fn dim(&self) -> usize {
                1
            }
            fn norm_kind(&self) -> NormKind {
                NormKind::Sup
            }
            fn init_noise(&self, _: usize, _: ChaCha8Rng) -> Result<()> {
                Ok(())
            }
            fn advance_noise(&self, _: usize, _: &mut ()) {}
        }
        impl FedSamProblem for Shifted {
            fn apply_g(&self, _: usize, theta: &[f64], _: &(), out: &mut [f64]) {
                out[0] = theta[0] + 1.0;
            }
            fn apply_b(&self, _: usize, _: &(), out: &mut [f64]) {
                out[0] = 0.0;
            }
        }
        let cfg = FedRunConfig::new(1, 1, 0.1, 10, 1.0);
        assert!(matches!(run_fedsam(&Shifted, &cfg), Err(FedError::Precondition(_))));
    }

    #[test]
    fn divergence_is_reported_with_context() {
        let p = Linear { gain: 1e300, offset: 0.0 };
        let mut cfg = FedRunConfig::new(2, 1, 1.0, 50, 1.0);
        cfg.theta0 = Some(vec![1.0]);
        match run_local(&p, &cfg) {
            Err(FedError::Divergence { t, agent }) => assert_eq!((t, agent), (2, 0)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn noise_average_examples() {
        let zero = Linear { gain: 0.0, offset: 0.0 };
        assert_eq!(noise_average_diagnostic(&zero, 4, 3, 100, 1).unwrap(), 0.0);
        let one = Linear { gain: 0.0, offset: 0.8 };
        assert!(noise_average_diagnostic(&one, 1, 3, 100, 1).unwrap() <= 0.8);
    }
}
