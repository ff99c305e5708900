//! `fedsam`: generate instances, compute oracles, run experiments and validate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedsam::algorithms::{theory_constants, AlgorithmInstance, AlgorithmKind, TheoryConstants};
use fedsam::harness::{
    apply_override, generate_parts, persist, sweep, ExperimentSpec, Grid, InstanceFiles, SweepOutput, SyncRule,
    DEFAULT_SPEC_JSON,
};
use fedsam::mdp::{
    bellman_residual, optimality_operator, projected_fixed_point_oracle, projected_residual, q_star_oracle,
    value_function_oracle, FeatureMatrix, Mdp, Policy,
};
use fedsam::validate::{run_all, run_selected, Fault, ValidateOptions};
use fedsam::FedError;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "fedsam", version, about = "Federated stochastic approximation under Markovian noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment spec (JSON). The bundled default spec is used when absent.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a spec entry by dotted key, e.g. `grid.step_size=[0.05]`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and validation.
    #[arg(long, global = true, value_name = "INT", value_parser = clap::value_parser!(u32).range(1..))]
    parallel: Option<u32>,
    /// Master seed; overrides the spec. Falls back to FEDSAM_SEED.
    #[arg(long, global = true, env = "FEDSAM_SEED", value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an MDP, policies, features and a ready-to-run spec from generator parameters.
    GenMdp,
    /// Compute an exact value table with its Bellman residual.
    Oracle(OracleArgs),
    /// Run one grid cell of the spec and persist the results.
    Run {
        /// Index into the spec's sorted grid cells.
        #[arg(long, default_value_t = 0)]
        cell: usize,
    },
    /// Run every grid cell, persist the results and report the speedup fit.
    Sweep,
    /// Run the validation suite and write a machine-readable report.
    Validate {
        /// Inject a deliberate bug to show that a check can fail.
        #[arg(long, value_name = "FAULT")]
        fault: Option<Fault>,
        /// Run only the given check id (1 to 10). Repeatable.
        #[arg(long = "check", value_name = "ID")]
        checks: Vec<u32>,
    },
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// MDP file. Without it the spec's instance is used.
    #[arg(long, value_name = "FILE")]
    mdp: Option<PathBuf>,
    /// Policy file (value and projected tables).
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
    /// Feature matrix file (projected table).
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    /// Lookahead of the projected table.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Which table to compute; defaults to the one matching the spec's algorithm.
    #[arg(long, value_enum)]
    table: Option<Table>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Table {
    /// `V^pi`.
    Value,
    /// `Q*`.
    QStar,
    /// Projected fixed point of the n-step Bellman operator.
    Projected,
}

enum Failure {
    Usage(String),
    Lib(FedError),
    Checks,
}

impl From<FedError> for Failure {
    fn from(e: FedError) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn exit_code(e: &FedError) -> u8 {
    match e {
        FedError::Config(_)
        | FedError::Parameter(_)
        | FedError::Io { .. }
        | FedError::Format { .. }
        | FedError::Shape(_)
        | FedError::Distribution(_)
        | FedError::Coverage { .. }
        | FedError::Precondition(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenMdp => gen_mdp(&cli.common),
        Command::Oracle(args) => oracle(&cli.common, args),
        Command::Run { cell } => run(&cli.common, Some(*cell)),
        Command::Sweep => run(&cli.common, None),
        Command::Validate { fault, checks } => validate(&cli.common, *fault, checks),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Checks) => ExitCode::from(1),
    }
}

/// Loads the spec with overrides applied, and the directory its relative paths resolve against.
fn load_spec(common: &Common) -> Result<(ExperimentSpec, PathBuf), FedError> {
    let (text, base) = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| FedError::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, base)
        }
        None => (DEFAULT_SPEC_JSON.to_string(), PathBuf::from(".")),
    };
    let mut value: Value = serde_json::from_str(&text).map_err(|e| FedError::Config(e.to_string()))?;
    for item in &common.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| FedError::Config(format!("override `{item}` is not key=value")))?;
        apply_override(&mut value, key.trim(), raw.trim())?;
    }
    Ok((ExperimentSpec::from_value(value)?, base))
}

fn threads(common: &Common) -> usize {
    match common.parallel {
        Some(p) => p as usize,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), FedError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| FedError::Config(format!("{}: {e}", path.display())))
}

fn print_constants(tc: &TheoryConstants) {
    println!("algorithm  {}", tc.kind);
    println!("gamma_c    {:.6}", tc.gamma_c);
    println!("A1 A2 B    {:.6} {:.6} {:.6}", tc.a1, tc.a2, tc.b);
    println!("mu_min     {:.6e}", tc.mu_min);
    println!("phi        {:.6e}", tc.phi);
    if let Some(imax) = tc.imax {
        println!("Imax       {imax:.6}");
    }
    println!("beta       {}", tc.beta);
}

fn gen_mdp(common: &Common) -> CmdResult {
    let (mut spec, _) = load_spec(common)?;
    if spec.instance.files.is_some() {
        return Err(Failure::Usage("gen-mdp needs generator parameters, but the spec names instance files".into()));
    }
    let out = common.out.clone().ok_or_else(|| Failure::Usage("gen-mdp requires --out DIR".into()))?;
    if let Some(seed) = common.seed {
        spec.instance.seed = seed;
    }
    let params = &spec.instance.generator;
    let parts = generate_parts(params, spec.instance.seed)?;
    let inst = AlgorithmInstance::new(
        spec.instance.kind,
        parts.mdp.clone(),
        parts.target.clone(),
        parts.behaviors.clone(),
        Some(parts.features.clone()),
        params.n,
    )?;
    let tc = theory_constants(&inst)?;

    fs::create_dir_all(&out).map_err(|e| FedError::Config(format!("{}: {e}", out.display())))?;
    parts.mdp.save(out.join("mdp.json"))?;
    write_json(&out.join("target.json"), &parts.target)?;
    let mut behavior_files = Vec::new();
    for (i, b) in parts.behaviors.iter().enumerate() {
        let name = PathBuf::from(format!("behavior_{i}.json"));
        write_json(&out.join(&name), b)?;
        behavior_files.push(name);
    }
    write_json(&out.join("features.json"), &parts.features)?;
    write_json(&out.join("constants.json"), &tc)?;
    spec.instance.files = Some(InstanceFiles {
        mdp: "mdp.json".into(),
        target: "target.json".into(),
        behaviors: behavior_files,
        features: Some("features.json".into()),
        n: params.n,
    });
    write_json(&out.join("spec.json"), &spec)?;

    println!("wrote instance to {}", out.display());
    print_constants(&tc);
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FedError> {
    let text = fs::read_to_string(path).map_err(|e| FedError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| FedError::Config(format!("{}: {e}", path.display())))
}

fn oracle(common: &Common, args: &OracleArgs) -> CmdResult {
    let (mdp, policy, features, n, default_table) = match &args.mdp {
        Some(path) => {
            let policy = args.policy.as_deref().map(read_json::<Policy>).transpose()?;
            let features = args.features.as_deref().map(read_json::<FeatureMatrix>).transpose()?;
            (Mdp::load(path)?, policy, features, args.n, Table::Value)
        }
        None => {
            let (mut spec, base) = load_spec(common)?;
            if let Some(seed) = common.seed {
                spec.instance.seed = seed;
            }
            let inst = spec.instance.build(&base)?;
            let table = match inst.kind() {
                AlgorithmKind::OnPolicyTdLfa => Table::Projected,
                AlgorithmKind::OffPolicyTdTabular => Table::Value,
                AlgorithmKind::QLearning => Table::QStar,
            };
            let features = inst.features().cloned();
            (inst.mdp().clone(), Some(inst.target().clone()), features, inst.n(), table)
        }
    };
    let table = args.table.unwrap_or(default_table);
    let need_policy = || policy.as_ref().ok_or_else(|| Failure::Usage("this table requires --policy".into()));
    let (name, values, residual) = match table {
        Table::Value => {
            let p = need_policy()?;
            let v = value_function_oracle(&mdp, p)?;
            let r = bellman_residual(&mdp, p, &v)?;
            ("value", v, r)
        }
        Table::QStar => {
            let q = q_star_oracle(&mdp)?;
            let r = optimality_operator(&mdp, &q).iter().zip(&q).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            ("q_star", q, r)
        }
        Table::Projected => {
            let p = need_policy()?;
            let f = features.as_ref().ok_or_else(|| Failure::Usage("the projected table requires --features".into()))?;
            let w = projected_fixed_point_oracle(&mdp, p, f, n)?;
            let r = projected_residual(&mdp, p, f, n, &w)?;
            ("projected", w, r)
        }
    };

    for (i, v) in values.iter().enumerate() {
        if table == Table::QStar {
            let na = mdp.n_actions();
            println!("{name}[{}, {}] = {v:.12}", i / na, i % na);
        } else {
            println!("{name}[{i}] = {v:.12}");
        }
    }
    println!("residual = {residual:.3e}");
    if let Some(out) = &common.out {
        fs::create_dir_all(out).map_err(|e| FedError::Config(format!("{}: {e}", out.display())))?;
        let doc = json!({
            "table": name,
            "n_states": mdp.n_states(),
            "n_actions": mdp.n_actions(),
            "n": n,
            "values": values,
            "residual": residual,
        });
        write_json(&out.join("oracle.json"), &doc)?;
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"))
}

fn print_summary(output: &SweepOutput) {
    println!("{:>6} {:>6} {:>9} {:>8} {:>12} {:>12} {:>9}", "N", "K", "alpha", "T", "mse", "se", "diverged");
    for c in &output.result.cells {
        let cell = &c.cell;
        println!(
            "{:>6} {:>6} {:>9} {:>8} {:>12} {:>12} {:>6}/{:<2}{}",
            cell.n_agents,
            cell.sync_period,
            cell.step_size,
            cell.horizon,
            fmt_opt(c.mse_mean),
            fmt_opt(c.mse_se),
            c.diverged,
            c.replications,
            if c.invalid { " invalid" } else { "" }
        );
    }
    for s in &output.result.speedup {
        println!(
            "speedup (K {}, alpha {}, T {}): slope {:.3} +/- {:.3}, MSE ratio N={}..{} {:.3}",
            s.sync_rule,
            s.step_size,
            s.horizon,
            s.slope,
            s.half_width,
            s.n_agents.first().unwrap_or(&0),
            s.n_agents.last().unwrap_or(&0),
            s.end_ratio
        );
    }
    for k in &output.result.k_curves {
        println!(
            "K curve (N {}, alpha {}, T {}): slope {:.3e} +/- {:.3e}, spearman {:.3}",
            k.n_agents, k.step_size, k.horizon, k.slope, k.slope_se, k.spearman
        );
    }
    for w in &output.metadata.warnings {
        println!("warning: {w}");
    }
}

fn run(common: &Common, cell_index: Option<usize>) -> CmdResult {
    let (mut spec, base) = load_spec(common)?;
    if let Some(seed) = common.seed {
        spec.master_seed = seed;
    }
    if let Some(idx) = cell_index {
        let cells = spec.cells();
        let cell = *cells
            .get(idx)
            .ok_or_else(|| Failure::Usage(format!("cell {idx} out of range; the grid has {} cells", cells.len())))?;
        spec.grid = Grid {
            n_agents: vec![cell.n_agents],
            sync_period: SyncRule::List(vec![cell.sync_period]),
            step_size: vec![cell.step_size],
            horizon: vec![cell.horizon],
        };
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    let output = sweep(&spec, &base, threads(common))?;
    persist(&output, &out)?;
    print_summary(&output);
    println!("results written to {}", out.display());
    Ok(())
}

fn validate(common: &Common, fault: Option<Fault>, checks: &[u32]) -> CmdResult {
    let mut opts = ValidateOptions { fault, ..ValidateOptions::default() };
    if let Some(seed) = common.seed {
        opts.seed = seed;
    }
    if common.parallel.is_some() {
        opts.threads = threads(common);
    }
    let report = if checks.is_empty() { run_all(&opts) } else { run_selected(&opts, checks)? };
    let _ = fs::remove_dir_all(&opts.work_dir);
    for c in &report.checks {
        println!("{}", c.line());
    }
    let passed = report.checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} checks passed (seed {})", report.checks.len(), report.seed);
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| FedError::Config(format!("{}: {e}", out.display())))?;
    write_json(&out.join("validation.json"), &report)?;
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}
