//! The desk-scale acceptance suite: ten checks with a pass/fail report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    expected_operator, expected_raw_increment, spectral_radius, theory_constants, AlgorithmInstance, AlgorithmKind,
    RawRule,
};
use crate::engine::{
    noise_average_diagnostic, q_distribution, run_local, FedRunConfig, FedSamProblem, MarkovNoise,
    NormKind, ScalarGaussianProblem,
};
use crate::error::{FedError, Result};
use crate::harness::{
    generate_instance, generate_parts, iid_scalar_validation, persist, sweep_instance, ExperimentSpec, GeneratorParams,
};
use crate::mdp::{
    optimality_operator, policy_evaluation_iterative, projected_fixed_point_oracle, projected_residual, q_star_oracle,
    value_function_oracle, FeatureMatrix,
};
use crate::sampling::{derive_seed, stream_rng, Categorical};

pub const DEFAULT_VALIDATION_SEED: u64 = 2024;

/// Deliberate bugs used to show that checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Halve every contraction factor before checking it.
    GammaCHalf,
}

impl std::str::FromStr for Fault {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma-c-half" => Ok(Self::GammaCHalf),
            _ => Err(FedError::Config(format!("unknown fault '{s}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValidateOptions {
    pub seed: u64,
    pub threads: usize,
    pub fault: Option<Fault>,
    /// Scratch space for the determinism check.
    pub work_dir: PathBuf,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_VALIDATION_SEED,
            threads: 8,
            fault: None,
            work_dir: std::env::temp_dir().join(format!("fedsam-validate-{}", std::process::id())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    /// Observed values and, on failure, the violated condition.
    pub details: Vec<String>,
    pub elapsed_ms: u64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {} ({} ms){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed_ms,
            if self.details.is_empty() { String::new() } else { format!(": {}", self.details.join("; ")) }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Outcome {
    passed: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { passed: true, details: Vec::new() }
    }

    fn note(&mut self, msg: String) {
        self.details.push(msg);
    }

    fn require(&mut self, ok: bool, msg: String) {
        if !ok {
            self.passed = false;
            self.details.push(format!("violated: {msg}"));
        }
    }
}

fn timed(id: u32, name: &str, f: impl FnOnce() -> Result<Outcome>) -> CheckResult {
    let start = Instant::now();
    let (passed, details) = match f() {
        Ok(o) => (o.passed, o.details),
        Err(e) => (false, vec![format!("error: {e}")]),
    };
    CheckResult { id, name: name.to_string(), passed, details, elapsed_ms: start.elapsed().as_millis() as u64 }
}

fn uniform_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

fn sup_diff(x: &[f64], y: &[f64]) -> f64 {
    NormKind::Sup.dist(x, y)
}

/// Instance `i` of the standard family used by the contraction and fixed-point checks.
fn family_instance(kind: AlgorithmKind, seed: u64, i: u64) -> Result<AlgorithmInstance> {
    let n = if kind == AlgorithmKind::QLearning { 1 } else { 1 + (i % 3) as usize };
    let params = GeneratorParams { n, ..GeneratorParams::default() };
    generate_instance(kind, &params, derive_seed(seed, i, kind as u64))
}

/// Check 1: exact second moment of the i.i.d. scalar recursion.
pub fn check_iid_closed_form(opts: &ValidateOptions) -> CheckResult {
    timed(1, "i.i.d. scalar recursion matches its closed-form second moment", || {
        let report = iid_scalar_validation(0.1, 1.0, 1.0, &[0, 10, 50, 200], 100_000, opts.seed)?;
        let mut o = Outcome::new();
        for p in &report.points {
            o.note(format!("t={}: {:.6} vs {:.6} (z={:.2})", p.t, p.empirical, p.exact, p.z));
            o.require(p.z.abs() <= 3.0, format!("|z| <= 3 at t = {}", p.t));
        }
        Ok(o)
    })
}

/// Check 2: the four oracles agree with independent computations.
pub fn check_oracles(opts: &ValidateOptions) -> CheckResult {
    timed(2, "oracle consistency on 20 random instances", || {
        let mut o = Outcome::new();
        let mut worst = [0.0f64; 4];
        for i in 0..20u64 {
            let ns = 2 + (i as usize * 7) % 19;
            let params = GeneratorParams {
                n_states: ns,
                n_actions: 2 + (i as usize % 3),
                branching: ns.min(3),
                d: 1 + (i as usize) % ns.min(5),
                n: 1 + (i as usize % 3),
                ..GeneratorParams::default()
            };
            let parts = generate_parts(&params, derive_seed(opts.seed, i, 2))?;
            let (mdp, pi) = (&parts.mdp, &parts.target);
            let v = value_function_oracle(mdp, pi)?;
            let v_iter = policy_evaluation_iterative(mdp, pi, 1e-13)?;
            worst[0] = worst[0].max(sup_diff(&v, &v_iter));
            let q = q_star_oracle(mdp)?;
            worst[1] = worst[1].max(sup_diff(&optimality_operator(mdp, &q), &q));
            let w = projected_fixed_point_oracle(mdp, pi, &parts.features, params.n)?;
            worst[2] = worst[2].max(projected_residual(mdp, pi, &parts.features, params.n, &w)?);
            let tab = projected_fixed_point_oracle(mdp, pi, &FeatureMatrix::identity(ns), params.n)?;
            worst[3] = worst[3].max(sup_diff(&tab, &v));
        }
        o.note(format!(
            "direct vs iterative {:.1e}, Q* residual {:.1e}, projected residual {:.1e}, tabular projection {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ));
        o.require(worst[0] <= 1e-8, "value oracle within 1e-8 of iterative evaluation".into());
        o.require(worst[1] <= 1e-10, "Q* Bellman residual <= 1e-10".into());
        o.require(worst[2] <= 1e-8, "projected residual <= 1e-8".into());
        o.require(worst[3] <= 1e-8, "tabular projected oracle equals V^pi within 1e-8".into());
        Ok(o)
    })
}

/// Check 3: contraction of the expected operators.
pub fn check_contraction(opts: &ValidateOptions) -> CheckResult {
    timed(3, "contraction of the expected operators", || {
        let mut o = Outcome::new();
        for kind in [AlgorithmKind::OffPolicyTdTabular, AlgorithmKind::QLearning] {
            let mut violations = 0usize;
            let mut worst_ratio = 0.0f64;
            let mut gamma_max = 0.0f64;
            for i in 0..20u64 {
                let inst = family_instance(kind, opts.seed, i)?;
                let mut gamma_c = theory_constants(&inst)?.gamma_c;
                if opts.fault == Some(Fault::GammaCHalf) {
                    gamma_c /= 2.0;
                }
                gamma_max = gamma_max.max(gamma_c);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, i, 3));
                for _ in 0..100 {
                    let t1 = uniform_vec(&mut rng, inst.dim(), 1.0);
                    let t2 = uniform_vec(&mut rng, inst.dim(), 1.0);
                    let dist = sup_diff(&t1, &t2);
                    for agent in 0..inst.behaviors().len() {
                        let lhs = sup_diff(&expected_operator(&inst, agent, &t1), &expected_operator(&inst, agent, &t2));
                        worst_ratio = worst_ratio.max(lhs / dist);
                        if lhs > gamma_c * dist + 1e-12 {
                            violations += 1;
                        }
                    }
                }
            }
            o.note(format!("{kind}: largest ratio {worst_ratio:.6}, largest gamma_c {gamma_max:.6}, {violations} violations"));
            o.require(violations == 0, format!("{kind}: ||G(t1) - G(t2)|| <= gamma_c ||t1 - t2|| + 1e-12"));
        }
        let mut worst_rho = 0.0f64;
        for i in 0..20u64 {
            let inst = family_instance(AlgorithmKind::OnPolicyTdLfa, opts.seed, i)?;
            worst_rho = worst_rho.max(spectral_radius(&inst.lfa_expected_matrix()));
        }
        o.note(format!("linear TD: largest spectral radius {worst_rho:.6}"));
        o.require(worst_rho <= 0.99, "linear TD spectral radius <= 0.99 at the selected beta".into());
        Ok(o)
    })
}

/// Check 4: zero is fixed by every expected operator and the raw update vanishes at the oracle.
pub fn check_fixed_point(opts: &ValidateOptions) -> CheckResult {
    timed(4, "fixed point of the expected operators", || {
        let mut o = Outcome::new();
        for kind in AlgorithmKind::ALL {
            let (mut g0, mut inc) = (0.0f64, 0.0f64);
            for i in 0..20u64 {
                let inst = family_instance(kind, opts.seed, i)?;
                let zero = vec![0.0; inst.dim()];
                for agent in 0..inst.behaviors().len() {
                    g0 = g0.max(NormKind::Sup.norm(&expected_operator(&inst, agent, &zero)));
                    inc = inc.max(NormKind::Sup.norm(&expected_raw_increment(&inst, agent, inst.fixed_point())?));
                }
            }
            o.note(format!("{kind}: |G(0)| {g0:.1e}, |E update at oracle| {inc:.1e}"));
            o.require(g0 <= 1e-12, format!("{kind}: expected operator at 0 within 1e-12"));
            o.require(inc <= 1e-12, format!("{kind}: expected raw update at the oracle within 1e-12"));
        }
        Ok(o)
    })
}

/// Sampled `A1`, `A2`, `B` bounds for one instance; returns the largest observed ratios.
fn sampled_bounds(inst: &AlgorithmInstance, seed: u64, samples: usize) -> Result<(f64, f64, f64)> {
    let problem = crate::algorithms::build_problem(inst)?;
    let norm = inst.kind().norm();
    let d = inst.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut g1, mut g2, mut b) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut r1, mut r2, mut rb) = (0.0f64, 0.0f64, 0.0f64);
    let agents = inst.behaviors().len();
    let mut chains = (0..agents)
        .map(|i| problem.init_noise(i, stream_rng(seed, 0, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    for j in 0..samples {
        let agent = j % agents;
        let scale = 10f64.powf(rng.random::<f64>() * 4.0 - 2.0);
        let t1 = uniform_vec(&mut rng, d, scale);
        let t2 = uniform_vec(&mut rng, d, scale);
        problem.apply_g(agent, &t1, &chains[agent], &mut g1);
        problem.apply_g(agent, &t2, &chains[agent], &mut g2);
        problem.apply_b(agent, &chains[agent], &mut b);
        r1 = r1.max(norm.dist(&g1, &g2) / norm.dist(&t1, &t2));
        r2 = r2.max(norm.norm(&g1) / norm.norm(&t1));
        rb = rb.max(norm.norm(&b));
        problem.advance_noise(agent, &mut chains[agent]);
    }
    Ok((r1, r2, rb))
}

/// Check 5: Lipschitz/boundedness samples, noise-average scaling and cross-agent independence.
pub fn check_assumptions(opts: &ValidateOptions) -> CheckResult {
    timed(5, "assumption suite", || {
        let mut o = Outcome::new();
        for kind in AlgorithmKind::ALL {
            let mut excess = [f64::NEG_INFINITY; 3];
            for i in 0..5u64 {
                let inst = family_instance(kind, opts.seed, 100 + i)?;
                let tc = theory_constants(&inst)?;
                let (r1, r2, rb) = sampled_bounds(&inst, derive_seed(opts.seed, i, 5), 10_000)?;
                excess[0] = excess[0].max(r1 - tc.a1);
                excess[1] = excess[1].max(r2 - tc.a2);
                excess[2] = excess[2].max(rb - tc.b);
            }
            o.note(format!(
                "{kind}: sample minus bound A1 {:.2e}, A2 {:.2e}, B {:.2e}",
                excess[0], excess[1], excess[2]
            ));
            o.require(excess.iter().all(|&e| e <= 1e-12), format!("{kind}: samples within A1, A2, B"));
        }

        let scalar = ScalarGaussianProblem { gain: 0.0, sigma: 1.0 };
        let base = noise_average_diagnostic(&scalar, 1, 5, 40_000, derive_seed(opts.seed, 0, 51))?;
        for n in [4usize, 16] {
            let e = noise_average_diagnostic(&scalar, n, 5, 40_000, derive_seed(opts.seed, n as u64, 51))?;
            let rel = (e / base) * (n as f64).sqrt();
            o.note(format!("N={n}: E|mean b| ratio x sqrt(N) = {rel:.3}"));
            o.require((rel - 1.0).abs() <= 0.2, format!("N={n}: ratio within 20% of 1/sqrt(N)"));
        }

        // Agents 0 and 1 at the same time index, over independent replications.
        let inst = family_instance(AlgorithmKind::OffPolicyTdTabular, opts.seed, 200)?;
        let problem = crate::algorithms::build_problem(&inst)?;
        let reps = 5000;
        let mut b = vec![0.0; inst.dim()];
        let (mut x, mut y) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
        for r in 0..reps as u64 {
            for (agent, out) in [(0usize, &mut x), (1usize, &mut y)] {
                let mut chain = problem.init_noise(agent, stream_rng(opts.seed, r, agent as u64))?;
                for _ in 0..10 {
                    problem.advance_noise(agent, &mut chain);
                }
                problem.apply_b(agent, &chain, &mut b);
                out.push(b.iter().sum::<f64>());
            }
        }
        let corr = pearson(&x, &y);
        let z = corr * (reps as f64).sqrt();
        o.note(format!("cross-agent correlation {corr:.4} (z = {z:.2})"));
        o.require(z.abs() <= 3.0, "cross-agent independence not rejected at 3 sigma".into());
        Ok(o)
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Instance family of the single-node and sweep checks: 5 states, 2 actions, gamma = 0.5.
pub fn small_params() -> GeneratorParams {
    GeneratorParams { n_states: 5, n_actions: 2, gamma: 0.5, d: 2, n: 1, n_behaviors: 1, ..GeneratorParams::default() }
}

/// Check 6: single-node tabular TD and Q-learning converge.
pub fn check_single_node(opts: &ValidateOptions) -> CheckResult {
    timed(6, "single-node convergence", || {
        let mut o = Outcome::new();
        for kind in [AlgorithmKind::OffPolicyTdTabular, AlgorithmKind::QLearning] {
            let mut good = 0usize;
            let mut worst = 0.0f64;
            for s in 0..20u64 {
                let parts = generate_parts(&small_params(), derive_seed(opts.seed, s, 6))?;
                // Tabular TD samples with the target policy; Q-learning explores with the behavior.
                let behaviors = if kind == AlgorithmKind::QLearning { parts.behaviors } else { Vec::new() };
                let inst = AlgorithmInstance::new(kind, parts.mdp, parts.target, behaviors, None, 1)?;
                let rule = RawRule::new(&inst)?;
                let mut cfg = FedRunConfig::new(1, 1, 0.01, 200_000, 1.0);
                cfg.master_seed = derive_seed(opts.seed, s, 61);
                cfg.trace = false;
                let trace = run_local(&rule, &cfg)?;
                let err = sup_diff(&trace.final_theta, inst.fixed_point());
                worst = worst.max(err);
                if err <= 0.05 {
                    good += 1;
                }
            }
            o.note(format!("{kind}: {good}/20 within 0.05 (largest error {worst:.4})"));
            o.require(good >= 19, format!("{kind}: at least 95% of seeds within 0.05"));
        }
        Ok(o)
    })
}

fn sweep_spec(seed: u64, n_agents: &[usize], sync: &[usize], alpha: f64, horizon: usize) -> Result<ExperimentSpec> {
    let value = serde_json::json!({
        "instance": {
            "kind": "off_policy_td_tabular",
            "seed": 3,
            "generator": { "n_states": 5, "n_actions": 2, "gamma": 0.5, "d": 2, "n": 1 }
        },
        "grid": { "n_agents": n_agents, "sync_period": sync, "step_size": [alpha], "horizon": [horizon] },
        "replications": 100,
        "master_seed": seed,
        "checkpoints": 20
    });
    ExperimentSpec::from_value(value)
}

/// Check 7: linear speedup in the variance-dominated regime.
pub fn check_speedup(opts: &ValidateOptions) -> CheckResult {
    timed(7, "linear speedup in N", || {
        let spec = sweep_spec(opts.seed, &[1, 2, 4, 8, 16], &[1], 0.05, 20_000)?;
        let inst = spec.instance.build(Path::new("."))?;
        let out = sweep_instance(&inst, &spec, opts.threads)?;
        let mut o = Outcome::new();
        let fit = out.result.speedup.first().ok_or_else(|| FedError::Numeric("no speedup fit".into()))?;
        o.note(format!(
            "slope {:.3} +/- {:.3}, MSE(16)/MSE(1) = {:.3}",
            fit.slope, fit.half_width, fit.end_ratio
        ));
        o.require((-1.3..=-0.5).contains(&fit.slope), "slope of log MSE vs log N in [-1.3, -0.5]".into());
        o.require(fit.end_ratio <= 0.25, "MSE(N=16) <= MSE(N=1) / 4".into());
        Ok(o)
    })
}

/// Check 8: MSE does not decrease with K and dispersion vanishes at every averaging round.
pub fn check_sync_period(opts: &ValidateOptions) -> CheckResult {
    timed(8, "synchronization period effect", || {
        let spec = sweep_spec(opts.seed, &[8], &[1, 4, 16, 64], 0.2, 5000)?;
        let inst = spec.instance.build(Path::new("."))?;
        let out = sweep_instance(&inst, &spec, opts.threads)?;
        let mut o = Outcome::new();
        let curve = out.result.k_curves.first().ok_or_else(|| FedError::Numeric("no K-curve".into()))?;
        o.note(format!(
            "MSE {:?}, slope per log2 K {:.2e} (se {:.1e}), Spearman {:.2}",
            curve.mse.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>(),
            curve.slope,
            curve.slope_se,
            curve.spearman
        ));
        o.require(curve.non_decreasing, "MSE(K) trend not below zero by 2 sigma".into());
        let omega = out.result.trials.iter().map(|t| t.sync_omega_max).fold(0.0, f64::max);
        o.note(format!("largest Omega after averaging {omega:e}"));
        o.require(omega == 0.0, "Omega exactly 0 at synchronization".into());
        Ok(o)
    })
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| FedError::io(dir, e))? {
        let entry = entry.map_err(|e| FedError::io(dir, e))?;
        let path = entry.path();
        let bytes = std::fs::read(&path).map_err(|e| FedError::io(&path, e))?;
        files.push((entry.file_name().to_string_lossy().into_owned(), bytes));
    }
    files.sort();
    Ok(files)
}

/// Check 9: identical bytes across repeated runs and thread counts.
pub fn check_determinism(opts: &ValidateOptions) -> CheckResult {
    timed(9, "determinism across runs and thread counts", || {
        let mut o = Outcome::new();
        let mut spec = ExperimentSpec::default_spec();
        spec.master_seed = opts.seed;
        spec.replications = 4;
        let inst = spec.instance.build(Path::new("."))?;
        let mut outputs = Vec::new();
        for (k, threads) in [1usize, 8, 8].into_iter().enumerate() {
            let dir = opts.work_dir.join(format!("determinism-{k}"));
            let out = sweep_instance(&inst, &spec, threads)?;
            persist(&out, &dir)?;
            outputs.push(dir_bytes(&dir)?);
            let _ = std::fs::remove_dir_all(&dir);
        }
        let files: Vec<&str> = outputs[0].iter().map(|f| f.0.as_str()).collect();
        o.note(format!("compared {}", files.join(", ")));
        o.require(outputs[0] == outputs[1], "parallelism 1 and 8 give identical files".into());
        o.require(outputs[1] == outputs[2], "repeated run gives identical files".into());
        Ok(o)
    })
}

/// Check 10: `q^c_T` normalization and sampled output-time frequencies.
pub fn check_output_distribution(opts: &ValidateOptions) -> CheckResult {
    timed(10, "output-time distribution", || {
        let mut o = Outcome::new();
        let draws = 100_000usize;
        let mut worst_sum = 0.0f64;
        let mut worst_z = 0.0f64;
        for (ci, c) in [0.5, 1.0 - 1e-6, 2.0].into_iter().enumerate() {
            for horizon in [1usize, 10, 100_000] {
                let q = q_distribution(c, horizon)?;
                worst_sum = worst_sum.max((q.iter().sum::<f64>() - 1.0).abs());
                // Long horizons are compared on ten equal-width bins.
                let bins = horizon.min(10);
                let width = horizon.div_ceil(bins);
                let mut p = vec![0.0; bins];
                for (t, &qt) in q.iter().enumerate() {
                    p[t / width] += qt;
                }
                let mut counts = vec![0usize; bins];
                let mut rng = stream_rng(opts.seed, ci as u64, horizon as u64);
                let sampler = Categorical::from_weights(&q);
                for _ in 0..draws {
                    counts[sampler.sample(&mut rng) / width] += 1;
                }
                for (pb, &cnt) in p.iter().zip(&counts) {
                    let sd = ((pb * (1.0 - pb)).max(0.0) / draws as f64).sqrt();
                    let diff = cnt as f64 / draws as f64 - pb;
                    let z = if sd > 0.0 {
                        diff.abs() / sd
                    } else if diff.abs() <= 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    worst_z = worst_z.max(z);
                }
            }
        }
        o.note(format!("largest |sum - 1| {worst_sum:.1e}, largest bin z {worst_z:.2}"));
        o.require(worst_sum <= 1e-12, "q sums to 1 within 1e-12".into());
        o.require(worst_z <= 3.0, "every bin within 3 sigma".into());
        Ok(o)
    })
}

type CheckFn = fn(&ValidateOptions) -> CheckResult;

const CHECKS: [CheckFn; 10] = [
    check_iid_closed_form,
    check_oracles,
    check_contraction,
    check_fixed_point,
    check_assumptions,
    check_single_node,
    check_speedup,
    check_sync_period,
    check_determinism,
    check_output_distribution,
];

/// Number of checks in the suite; ids run from 1 to this value.
pub const CHECK_COUNT: u32 = CHECKS.len() as u32;

pub fn run_all(opts: &ValidateOptions) -> ValidationReport {
    let ids: Vec<u32> = (1..=CHECK_COUNT).collect();
    run_selected(opts, &ids).expect("all ids are valid")
}

/// Runs the checks with the given ids, in the order given.
pub fn run_selected(opts: &ValidateOptions, ids: &[u32]) -> Result<ValidationReport> {
    if let Some(bad) = ids.iter().find(|&&id| id == 0 || id > CHECK_COUNT) {
        return Err(FedError::Config(format!("unknown check id {bad}; valid ids are 1..={CHECK_COUNT}")));
    }
    let checks = ids
        .iter()
        .map(|&id| {
            let r = CHECKS[id as usize - 1](opts);
            log::info!("{}", r.line());
            r
        })
        .collect();
    Ok(ValidationReport { seed: opts.seed, fault: opts.fault, checks })
}
