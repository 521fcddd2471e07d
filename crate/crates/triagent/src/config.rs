//! Harness configuration: one JSON file wiring reward/optimization
//! parameters, the loop, per-role backends and artifact paths. Unknown keys
//! are rejected and the seed is mandatory — no wall-clock seeding anywhere.

use crate::agent_io::Role;
use crate::model::{GrpoConfig, RewardConfig, TaskRecord};
use crate::orchestrator::{
    oracle_coordinator, oracle_tracker, rule_executor, Backend, BackendKind, LoopConfig,
    RemoteConfig,
};
use crate::sim::{ToyPolicy, World};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable that overrides the remote credential header; the
/// only setting not sourced from file or flags.
pub const REMOTE_AUTH_ENV: &str = "TRIAGENT_REMOTE_AUTH";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendDescriptor {
    /// Ground-truth-keyed scripted table built from the loaded task suite
    /// (coordinator or state tracker only).
    ScriptedOracle,
    /// The rule-based grounding executor.
    RuleExecutor,
    /// A trained toy policy loaded from JSON.
    Toy { path: PathBuf },
    /// HTTP chat endpoint.
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub coordinator: BackendDescriptor,
    pub executor: BackendDescriptor,
    pub state_tracker: BackendDescriptor,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig {
            coordinator: BackendDescriptor::ScriptedOracle,
            executor: BackendDescriptor::RuleExecutor,
            state_tracker: BackendDescriptor::ScriptedOracle,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default)]
    pub world: Option<PathBuf>,
    #[serde(default)]
    pub tasks: Option<PathBuf>,
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(rename = "loop", default)]
    pub loop_cfg: LoopConfig,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Mandatory: every run is seeded from here unless a flag overrides it.
    pub seed: u64,
}

fn default_parallelism() -> usize {
    1
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<HarnessConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: HarnessConfig = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.reward.validate()?;
        self.grpo.validate()?;
        self.loop_cfg.validate()?;
        if self.parallelism < 1 {
            return Err("parallelism must be >= 1".to_string());
        }
        for (name, path) in [
            ("world", &self.paths.world),
            ("tasks", &self.paths.tasks),
            ("templates", &self.paths.templates),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(format!("paths.{name} does not exist: {}", p.display()));
                }
            }
        }
        Ok(())
    }
}

/// Instantiates one backend for its role; the scripted oracles are keyed
/// off the loaded suite's ground-truth annotations.
pub fn build_backend(
    role: Role,
    descriptor: &BackendDescriptor,
    suite: &[TaskRecord],
) -> Result<Backend, String> {
    match descriptor {
        BackendDescriptor::ScriptedOracle => match role {
            Role::Coordinator => Ok(oracle_coordinator(suite)),
            Role::StateTracker => Ok(oracle_tracker(suite)),
            Role::Executor => {
                Err("scripted_oracle backends exist only for coordinator/state_tracker".to_string())
            }
        },
        BackendDescriptor::RuleExecutor => match role {
            Role::Executor => Ok(rule_executor()),
            other => Err(format!("rule_executor cannot serve role {other:?}")),
        },
        BackendDescriptor::Toy { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read toy policy {}: {e}", path.display()))?;
            let policy: ToyPolicy = serde_json::from_str(&text)
                .map_err(|e| format!("invalid toy policy {}: {e}", path.display()))?;
            if policy.role != role {
                return Err(format!(
                    "toy policy {} is for role {:?}, wanted {role:?}",
                    path.display(),
                    policy.role
                ));
            }
            Ok(Backend::new(role, BackendKind::Toy(policy)))
        }
        BackendDescriptor::Remote(cfg) => {
            let mut cfg = cfg.clone();
            if let Ok(auth) = std::env::var(REMOTE_AUTH_ENV) {
                cfg.headers.insert("authorization".to_string(), auth);
            }
            Ok(Backend::new(role, BackendKind::Remote(cfg)))
        }
    }
}

/// Loads a world JSON file (validated on deserialization).
pub fn load_world(path: &Path) -> Result<World, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read world {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid world {}: {e}", path.display()))
}

/// Loads a JSON Lines task suite in the internal schema.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskRecord>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read tasks {}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskRecord = serde_json::from_str(line)
            .map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?;
        out.push(task);
    }
    Ok(out)
}
