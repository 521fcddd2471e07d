//! The per-step collaborative loop: coordinator -> executor -> environment
//! -> state tracker, with pluggable policy backends and the two ablation
//! modes (no coordinator / no state tracker).

use crate::agent_io::{
    parse_executor_answer, parse_tagged, render_prompt, serialize_action, wrap_tagged,
    PromptTemplate, Role,
};
use crate::model::{
    Action, ActionType, AtomicInstruction, ExecutorOutput, GroundTruthStep, LoopMode, Observation,
    RewardConfig, StateSummary, StepLog, TaskRecord, Trajectory, TrajectoryStatus,
};
use crate::reward::total_reward;
use crate::sim::{apply_action, ToyPolicy, World, INITIAL_STATE_TEXT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{role:?} backend failed: {cause}")]
    Failure { role: Role, cause: String },
    #[error("remote request timed out")]
    Timeout,
    #[error("remote endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("malformed remote response: {0}")]
    MalformedResponse(String),
}

/// Loop configuration: step budget, ablation mode, history window for the
/// no-state-tracker ablation, and the fixed initial state sentence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub max_steps: usize,
    pub mode: LoopMode,
    pub history_window: usize,
    pub initial_state_text: String,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_steps: 30,
            mode: LoopMode::Full,
            history_window: 4,
            initial_state_text: INITIAL_STATE_TEXT.to_string(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps < 1 || self.history_window < 1 {
            return Err("loop config: max_steps and history_window must be >= 1".to_string());
        }
        Ok(())
    }
}

/// Remote chat endpoint descriptor. The request body carries role-tagged
/// messages, temperature and a generation cap; the reply's generated text
/// is read from `content` (or the nested chat-completion shape).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    512
}

/// Context-keyed lookup backend. Misses fall back to a per-screen entry,
/// then to a fixed default, then fail.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTable {
    pub entries: BTreeMap<String, String>,
    pub fallback: BTreeMap<String, String>,
    pub default: Option<String>,
}

#[derive(Debug)]
pub enum BackendKind {
    /// Lookup table keyed by the orchestrator's context key.
    Scripted(ScriptedTable),
    /// Rule-based grounding executor: resolves the instruction's quoted
    /// element label against the current screen.
    RuleExecutor,
    /// Toy softmax policy sampled with the episode RNG.
    Toy(ToyPolicy),
    /// HTTP chat endpoint.
    Remote(RemoteConfig),
}

/// A role-bound backend with a call counter (used by the staged pipelines
/// to assert which roles a stage touched).
#[derive(Debug)]
pub struct Backend {
    pub role: Role,
    pub kind: BackendKind,
    calls: AtomicU64,
}

impl Backend {
    pub fn new(role: Role, kind: BackendKind) -> Backend {
        Backend { role, kind, calls: AtomicU64::new(0) }
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// What the orchestrator hands a backend for one decision.
#[derive(Debug, Clone)]
pub struct BackendRequest<'a> {
    pub prompt: String,
    pub context_key: String,
    pub screen: Option<&'a Observation>,
    pub instruction: Option<&'a str>,
}

#[derive(Debug, Clone)]
pub struct BackendResponse {
    pub text: String,
    pub logp: Option<f64>,
}

/// Context key for a coordinator decision: the task, the screen and the
/// state (or history) text it conditions on.
pub fn coordinator_key(instruction: &str, screen_id: &str, state_or_history: &str) -> String {
    format!("{instruction}|{screen_id}|{state_or_history}")
}

/// Context key for a state-tracker decision.
pub fn tracker_key(instruction: &str, prev_state: &str) -> String {
    format!("{instruction}|{prev_state}")
}

/// Dispatches one backend call; remote calls retry up to their budget.
pub fn call_backend(
    backend: &Backend,
    req: &BackendRequest,
    rng: &mut ChaCha8Rng,
) -> Result<BackendResponse, BackendError> {
    backend.calls.fetch_add(1, Ordering::Relaxed);
    match &backend.kind {
        BackendKind::Scripted(table) => {
            let text = table
                .entries
                .get(&req.context_key)
                .or_else(|| {
                    req.screen.and_then(|s| {
                        table.fallback.get(&fallback_key(req, s.screen_id.as_str()))
                    })
                })
                .or(table.default.as_ref())
                .ok_or_else(|| BackendError::Failure {
                    role: backend.role,
                    cause: format!("no scripted entry for key '{}'", req.context_key),
                })?;
            Ok(BackendResponse { text: text.clone(), logp: None })
        }
        BackendKind::RuleExecutor => {
            let screen = req.screen.ok_or_else(|| BackendError::Failure {
                role: backend.role,
                cause: "rule executor needs a screen".to_string(),
            })?;
            let instruction = req.instruction.unwrap_or("");
            let action = ground_instruction(instruction, screen);
            let think = format!("Executing: {instruction}");
            Ok(BackendResponse { text: wrap_tagged(&think, &serialize_action(&action)), logp: None })
        }
        BackendKind::Toy(policy) => {
            let (payload, _, logp) = policy.sample(&req.context_key, rng).map_err(|e| {
                BackendError::Failure { role: backend.role, cause: e.to_string() }
            })?;
            Ok(BackendResponse { text: payload, logp: Some(logp) })
        }
        BackendKind::Remote(cfg) => call_remote(cfg, req, backend.role),
    }
}

fn fallback_key(req: &BackendRequest, screen_id: &str) -> String {
    // fallback keys pair the task prefix of the context key with the screen
    match req.context_key.split('|').next() {
        Some(task) => format!("{task}|{screen_id}"),
        None => screen_id.to_string(),
    }
}

fn call_remote(
    cfg: &RemoteConfig,
    req: &BackendRequest,
    role: Role,
) -> Result<BackendResponse, BackendError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_millis(cfg.timeout_ms))
        .build()
        .map_err(|e| BackendError::Unreachable(e.to_string()))?;
    let body = serde_json::json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": req.prompt}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    });
    let mut last_err = BackendError::Failure { role, cause: "no attempt made".to_string() };
    for _ in 0..=cfg.retries {
        let mut request = client.post(&cfg.endpoint).json(&body);
        for (k, v) in &cfg.headers {
            request = request.header(k, v);
        }
        match request.send() {
            Ok(resp) if resp.status().is_success() => {
                let value: serde_json::Value = match resp.json() {
                    Ok(v) => v,
                    Err(e) => {
                        last_err = BackendError::MalformedResponse(e.to_string());
                        continue;
                    }
                };
                let content = value
                    .get("content")
                    .and_then(|v| v.as_str())
                    .or_else(|| {
                        value
                            .pointer("/choices/0/message/content")
                            .and_then(|v| v.as_str())
                    });
                match content {
                    Some(text) => return Ok(BackendResponse { text: text.to_string(), logp: None }),
                    None => {
                        last_err =
                            BackendError::MalformedResponse("no content field".to_string());
                    }
                }
            }
            Ok(resp) => {
                last_err = BackendError::Unreachable(format!("status {}", resp.status()));
            }
            Err(e) if e.is_timeout() => last_err = BackendError::Timeout,
            Err(e) => last_err = BackendError::Unreachable(e.to_string()),
        }
    }
    Err(last_err)
}

/// Resolves an atomic instruction to a concrete action on the screen.
/// Unrecognized instructions degrade to a background click, which the
/// environment treats as a no-op.
pub fn ground_instruction(instruction: &str, screen: &Observation) -> Action {
    let lower = instruction.trim().to_lowercase();
    let quoted = |s: &str| -> Option<String> {
        let start = s.find('\'')?;
        let end = s[start + 1..].find('\'')?;
        Some(s[start + 1..start + 1 + end].to_string())
    };
    if lower.starts_with("tap") || lower.starts_with("click") {
        if let Some(label) = quoted(instruction) {
            if let Some(e) = screen.elements.iter().find(|e| e.label == label) {
                let (x, y) = e.bbox.center();
                return Action::click(x, y);
            }
        }
        return Action::click(0, 0);
    }
    if lower.starts_with("long-press") || lower.starts_with("long press") {
        if let Some(label) = quoted(instruction) {
            if let Some(e) = screen.elements.iter().find(|e| e.label == label) {
                let (x, y) = e.bbox.center();
                return Action::long_press(x, y);
            }
        }
        return Action::click(0, 0);
    }
    if lower.starts_with("type") {
        if let Some(text) = quoted(instruction) {
            return Action::type_text(text);
        }
        return Action::click(0, 0);
    }
    if lower.starts_with("scroll") {
        let dir = lower
            .split_whitespace()
            .nth(1)
            .and_then(crate::model::Direction::parse)
            .unwrap_or(crate::model::Direction::Down);
        return Action::scroll(dir);
    }
    match lower.as_str() {
        "press home" => Action::simple(ActionType::PressHome),
        "press back" => Action::simple(ActionType::PressBack),
        "press enter" => Action::simple(ActionType::Enter),
        "mark the task complete" => Action::simple(ActionType::Complete),
        "close the app" => Action::simple(ActionType::Close),
        _ => Action::click(0, 0),
    }
}

/// Newline-joined compact action history, oldest first, last `k` actions.
pub fn serialize_history(actions: &[Action], k: usize) -> String {
    if actions.is_empty() || k == 0 {
        return "(no actions yet)".to_string();
    }
    let start = actions.len().saturating_sub(k);
    actions[start..]
        .iter()
        .map(Action::describe)
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct Backends<'a> {
    pub coordinator: Option<&'a Backend>,
    pub executor: &'a Backend,
    pub state_tracker: Option<&'a Backend>,
}

/// Episode input: the world to act in, the starting screen, the high-level
/// instruction, and optional ground truth for per-step rewards.
pub struct EpisodeSpec<'a> {
    pub world: &'a World,
    pub start: String,
    pub instruction: String,
    pub task: Option<&'a TaskRecord>,
    pub seed: u64,
}

impl<'a> EpisodeSpec<'a> {
    pub fn from_task(world: &'a World, task: &'a TaskRecord, seed: u64) -> EpisodeSpec<'a> {
        EpisodeSpec {
            world,
            start: task.steps[0].screen_id.clone(),
            instruction: task.instruction.clone(),
            task: Some(task),
            seed,
        }
    }
}

fn gt_for_step(task: Option<&TaskRecord>, t: usize) -> Option<&GroundTruthStep> {
    task.and_then(|task| task.steps.get(t)).map(|s| &s.gt)
}

/// Runs one episode of the loop. Terminates when the executor emits a
/// terminal action, at `max_steps`, or with `EnvError` after a backend
/// exhausts its retries.
pub fn run_episode(
    spec: &EpisodeSpec,
    backends: &Backends,
    loop_cfg: &LoopConfig,
    reward_cfg: &RewardConfig,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let q = spec.instruction.as_str();
    let task_id = spec
        .task
        .map(|t| t.task_id.clone())
        .unwrap_or_else(|| format!("live-{}", spec.start));

    let mut steps: Vec<StepLog> = Vec::new();
    let mut actions: Vec<Action> = Vec::new();
    let mut state_text = loop_cfg.initial_state_text.clone();
    let mut cursor = spec.start.clone();
    let mut status = TrajectoryStatus::Truncated;

    let coordinator_template = PromptTemplate::builtin(Role::Coordinator);
    let executor_template = PromptTemplate::builtin(Role::Executor);
    let tracker_template = PromptTemplate::builtin(Role::StateTracker);

    for t in 0..loop_cfg.max_steps {
        let screen = match spec.world.observation(&cursor) {
            Ok(s) => s.clone(),
            Err(_) => {
                status = TrajectoryStatus::EnvError;
                break;
            }
        };

        // coordinator: atomic instruction (or the raw task in the ablation)
        let (instruction_text, coord_context) = match loop_cfg.mode {
            LoopMode::NoCoordinator => (q.to_string(), String::new()),
            LoopMode::Full | LoopMode::NoStateTracker => {
                let context = if loop_cfg.mode == LoopMode::NoStateTracker {
                    serialize_history(&actions, loop_cfg.history_window)
                } else {
                    state_text.clone()
                };
                let backend = match backends.coordinator {
                    Some(b) => b,
                    None => {
                        status = TrajectoryStatus::EnvError;
                        break;
                    }
                };
                let mut bindings = BTreeMap::new();
                bindings.insert("high_level_instruction", q);
                bindings.insert("current_state", context.as_str());
                let prompt = render_prompt(&coordinator_template, &bindings)
                    .expect("builtin coordinator template renders");
                let req = BackendRequest {
                    prompt,
                    context_key: coordinator_key(q, &screen.screen_id, &context),
                    screen: Some(&screen),
                    instruction: None,
                };
                match call_backend(backend, &req, &mut rng) {
                    Ok(resp) => {
                        // coordinator answers are free text; prefer the
                        // answer body when the envelope parses
                        let text = match parse_tagged(&resp.text) {
                            Ok((_, answer)) => answer,
                            Err(_) => resp.text.trim().to_string(),
                        };
                        (text, context)
                    }
                    Err(e) => {
                        log::warn!("coordinator failed at step {t}: {e}");
                        status = TrajectoryStatus::EnvError;
                        break;
                    }
                }
            }
        };
        let _ = coord_context;

        // executor
        let mut bindings = BTreeMap::new();
        bindings.insert("instruction", instruction_text.as_str());
        let prompt =
            render_prompt(&executor_template, &bindings).expect("builtin executor template renders");
        let req = BackendRequest {
            prompt,
            context_key: format!("{q}|{}|{instruction_text}", screen.screen_id),
            screen: Some(&screen),
            instruction: Some(instruction_text.as_str()),
        };
        let executor_raw = match call_backend(backends.executor, &req, &mut rng) {
            Ok(resp) => resp.text,
            Err(e) => {
                log::warn!("executor failed at step {t}: {e}");
                status = TrajectoryStatus::EnvError;
                break;
            }
        };
        let executor_output = parse_executor_output(&executor_raw, Some(&screen));

        // environment: unparseable output is a no-op
        let applied = match &executor_output.action {
            Some(a) => apply_action(spec.world, &cursor, a),
            None => Ok((cursor.clone(), "no-op (parse failure)".to_string())),
        };
        let next_screen = match applied {
            Ok((next, _)) => next,
            Err(_) => {
                status = TrajectoryStatus::EnvError;
                break;
            }
        };

        // state tracker
        let next_state_text = match loop_cfg.mode {
            LoopMode::NoStateTracker => "(state tracking disabled)".to_string(),
            LoopMode::Full | LoopMode::NoCoordinator => match backends.state_tracker {
                Some(backend) => {
                    let mut bindings = BTreeMap::new();
                    bindings.insert("high_level_instruction", q);
                    bindings.insert("executor_output", executor_raw.as_str());
                    bindings.insert("current_state", state_text.as_str());
                    let prompt = render_prompt(&tracker_template, &bindings)
                        .expect("builtin tracker template renders");
                    let req = BackendRequest {
                        prompt,
                        context_key: tracker_key(q, &state_text),
                        screen: Some(&screen),
                        instruction: None,
                    };
                    match call_backend(backend, &req, &mut rng) {
                        Ok(resp) => match parse_tagged(&resp.text) {
                            Ok((_, answer)) => answer,
                            Err(_) => resp.text.trim().to_string(),
                        },
                        Err(e) => {
                            log::warn!("state tracker failed at step {t}: {e}");
                            status = TrajectoryStatus::EnvError;
                            break;
                        }
                    }
                }
                None => state_text.clone(),
            },
        };

        let reward = gt_for_step(spec.task, t)
            .map(|gt| total_reward(&executor_raw, executor_output.action.as_ref(), gt, reward_cfg));

        let terminal = executor_output
            .action
            .as_ref()
            .map(|a| matches!(a.kind, ActionType::Complete | ActionType::Close))
            .unwrap_or(false);
        if let Some(a) = &executor_output.action {
            actions.push(a.clone());
        }

        steps.push(StepLog {
            step_index: t,
            observation_ref: screen.screen_id.clone(),
            prev_state: StateSummary { text: state_text.clone(), step_index: t },
            instruction: AtomicInstruction { text: instruction_text, step_index: t },
            executor: executor_output,
            next_state: StateSummary { text: next_state_text.clone(), step_index: t + 1 },
            reward,
        });

        state_text = next_state_text;
        cursor = next_screen;

        if terminal {
            status = TrajectoryStatus::CompletedByAgent;
            break;
        }
    }

    Trajectory { task_id, steps, status }
}

/// Parses raw executor text into the logged output record; parse failures
/// keep the raw text and mark `parse_ok = false`.
pub fn parse_executor_output(raw: &str, screen: Option<&Observation>) -> ExecutorOutput {
    match parse_tagged(raw) {
        Ok((think, answer)) => match parse_executor_answer(&answer, screen) {
            Ok(action) => ExecutorOutput {
                raw: raw.to_string(),
                think: Some(think),
                action: Some(action),
                parse_ok: true,
            },
            Err(e) => {
                log::debug!("executor answer parse failed: {e}");
                ExecutorOutput { raw: raw.to_string(), think: Some(think), action: None, parse_ok: false }
            }
        },
        Err(_) => ExecutorOutput { raw: raw.to_string(), think: None, action: None, parse_ok: false },
    }
}

/// Builds the oracle scripted coordinator for a task suite: keyed on
/// (task, screen, ground-truth state) with a first-visit per-screen
/// fallback.
pub fn oracle_coordinator(suite: &[TaskRecord]) -> Backend {
    let mut table = ScriptedTable::default();
    for task in suite {
        for step in &task.steps {
            let (Some(state), Some(instruction)) = (&step.gt.gt_state, &step.gt.gt_instruction)
            else {
                continue;
            };
            let key = coordinator_key(&task.instruction, &step.screen_id, state);
            let value = wrap_tagged("Following the plan.", instruction);
            table.entries.entry(key).or_insert(value.clone());
            table
                .fallback
                .entry(format!("{}|{}", task.instruction, step.screen_id))
                .or_insert(value);
        }
    }
    Backend::new(Role::Coordinator, BackendKind::Scripted(table))
}

/// Oracle scripted state tracker: maps each ground-truth state to the next.
pub fn oracle_tracker(suite: &[TaskRecord]) -> Backend {
    let mut table = ScriptedTable::default();
    for task in suite {
        for (t, step) in task.steps.iter().enumerate() {
            let Some(state) = &step.gt.gt_state else { continue };
            let next = task
                .steps
                .get(t + 1)
                .and_then(|s| s.gt.gt_state.clone())
                .unwrap_or_else(|| format!("For '{}': all steps done.", task.instruction));
            table.entries.insert(
                tracker_key(&task.instruction, state),
                wrap_tagged("Updating progress.", &next),
            );
        }
    }
    Backend::new(Role::StateTracker, BackendKind::Scripted(table))
}

/// The rule-based grounding executor backend.
pub fn rule_executor() -> Backend {
    Backend::new(Role::Executor, BackendKind::RuleExecutor)
}
