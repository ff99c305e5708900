//! Experiment specification, its JSON schema and dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::generate::{generate_instance, GeneratorParams};
use crate::algorithms::{AlgorithmInstance, AlgorithmKind};
use crate::engine::NormKind;
use crate::error::{FedError, Result};
use crate::mdp::{FeatureMatrix, Mdp, Policy};

/// Bundled default experiment.
pub const DEFAULT_SPEC_JSON: &str = include_str!("default_spec.json");

/// Paths of an instance stored on disk (as written by `gen-mdp`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFiles {
    pub mdp: PathBuf,
    pub target: PathBuf,
    #[serde(default)]
    pub behaviors: Vec<PathBuf>,
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default = "one")]
    pub n: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub kind: AlgorithmKind,
    /// Generator seed.
    #[serde(default)]
    pub seed: u64,
    /// Used when `files` is absent.
    #[serde(default)]
    pub generator: GeneratorParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<InstanceFiles>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FedError::format(path, e.to_string()))
}

impl InstanceSpec {
    /// Relative file paths are resolved against `base`.
    pub fn build(&self, base: &Path) -> Result<AlgorithmInstance> {
        match &self.files {
            None => generate_instance(self.kind, &self.generator, self.seed),
            Some(files) => {
                let mdp = Mdp::load(base.join(&files.mdp))?;
                let target: Policy = read_json(&base.join(&files.target))?;
                let behaviors = files
                    .behaviors
                    .iter()
                    .map(|p| read_json::<Policy>(&base.join(p)))
                    .collect::<Result<Vec<_>>>()?;
                let features = match &files.features {
                    Some(p) => Some(read_json::<FeatureMatrix>(&base.join(p))?),
                    None => None,
                };
                AlgorithmInstance::new(self.kind, mdp, target, behaviors, features, files.n)
            }
        }
    }
}

/// Synchronization periods: an explicit list or `K = max(1, T / N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SyncRule {
    List(Vec<usize>),
    Rule(SyncRuleName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncRuleName {
    TOverN,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n_agents: Vec<usize>,
    pub sync_period: SyncRule,
    pub step_size: Vec<f64>,
    pub horizon: Vec<usize>,
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub n_agents: usize,
    pub sync_period: usize,
    pub step_size: f64,
    pub horizon: usize,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "N={} K={} alpha={} T={}", self.n_agents, self.sync_period, self.step_size, self.horizon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub instance: InstanceSpec,
    pub grid: Grid,
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Output-time constant `c`; defaults to `1 - alpha phi / 2` per cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_c: Option<f64>,
    /// Error norm; defaults to the algorithm's own norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormKind>,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_checkpoints() -> usize {
    500
}

impl ExperimentSpec {
    pub fn from_value(value: Value) -> Result<Self> {
        let spec: Self = serde_path_to_error::deserialize(value)
            .map_err(|e| FedError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| FedError::Config(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FedError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn default_spec() -> Self {
        Self::from_json_str(DEFAULT_SPEC_JSON).expect("bundled spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FedError::Config(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be >= 1");
        }
        let g = &self.grid;
        if g.n_agents.is_empty() || g.step_size.is_empty() || g.horizon.is_empty() {
            return bad("grid axes must be non-empty");
        }
        if let SyncRule::List(ks) = &g.sync_period {
            if ks.is_empty() || ks.contains(&0) {
                return bad("grid.sync_period must be non-empty and positive");
            }
        }
        if g.n_agents.contains(&0) || g.horizon.contains(&0) {
            return bad("grid.n_agents and grid.horizon must be positive");
        }
        if g.step_size.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("grid.step_size entries must be finite and >= 0");
        }
        if let Some(c) = self.output_c {
            if !(c > 0.0 && c.is_finite()) {
                return bad("output_c must be positive");
            }
        }
        if self.checkpoints == 0 {
            return bad("checkpoints must be >= 1");
        }
        Ok(())
    }

    /// Grid points sorted by N, K, T and then alpha.
    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &n in &g.n_agents {
            for &horizon in &g.horizon {
                let ks = match &g.sync_period {
                    SyncRule::List(ks) => ks.clone(),
                    SyncRule::Rule(SyncRuleName::TOverN) => vec![(horizon / n).max(1)],
                };
                for k in ks {
                    for &step_size in &g.step_size {
                        out.push(Cell { n_agents: n, sync_period: k, step_size, horizon });
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            (a.n_agents, a.sync_period, a.horizon)
                .cmp(&(b.n_agents, b.sync_period, b.horizon))
                .then(a.step_size.total_cmp(&b.step_size))
        });
        out.dedup();
        out
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Sets `key` (dotted path) to `raw`, parsed as JSON when possible and as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    if key.is_empty() {
        return Err(FedError::Config("empty override key".into()));
    }
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            _ => {
                return Err(FedError::Config(format!(
                    "`{}` is not an object, cannot set `{key}`",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last key")
}

/// Parses `key=value` overrides onto a spec.
pub fn spec_with_overrides(base: &ExperimentSpec, overrides: &[String]) -> Result<ExperimentSpec> {
    let mut value = serde_json::to_value(base).expect("spec serializes");
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| FedError::Config(format!("override `{item}` is not key=value")))?;
        apply_override(&mut value, key.trim(), raw.trim())?;
    }
    ExperimentSpec::from_value(value)
}
