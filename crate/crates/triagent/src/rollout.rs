//! Two-stage rollout and training pipelines over toy policies.
//!
//! Stage one trains the coordinator: it samples atomic instructions against
//! ground-truth states, a frozen executor grounds them, and the execution
//! reward scores the result. Stage two trains the state tracker: it samples
//! state summaries, which a frozen coordinator + executor chain turns into
//! actions; the format reward applies to the summary text itself.

use crate::agent_io::{parse_tagged, serialize_action, wrap_tagged, Role};
use crate::grpo::{Candidate, CandidateGroup, GrpoError};
use crate::model::{GrpoConfig, RewardConfig, TaskRecord};
use crate::orchestrator::{
    call_backend, coordinator_key, rule_executor, tracker_key, Backend, BackendKind,
    BackendRequest, ScriptedTable,
};
use crate::reward::total_reward;
use crate::sim::{gt_action, SimError, ToyGroup, ToyPolicy, World};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("task {task} step {step} lacks ground-truth {field}")]
    MissingAnnotation { task: String, step: usize, field: &'static str },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("frozen backend failed: {0}")]
    Backend(String),
    #[error("batch file has no header line")]
    MissingHeader,
    #[error("unsupported batch schema '{0}'")]
    UnsupportedSchema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    One,
    Two,
}

/// One decision context of a stage: a (task, step) pair plus the policy
/// context key its candidates are sampled under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageContext {
    pub task_index: usize,
    pub step_index: usize,
    pub key: String,
    pub screen_id: String,
    /// Stage two only: the synthesized previous executor output the tracker
    /// conditions on.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub executor_output: Option<String>,
}

/// One scored candidate group, the serialization unit of `emit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageBatch {
    pub stage: Stage,
    pub task_id: String,
    pub step_index: usize,
    pub context_key: String,
    pub group: CandidateGroup,
    pub reward_cfg: RewardConfig,
    pub grpo_cfg: GrpoConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { iterations: 200, learning_rate: 1.0, seed: 11 }
    }
}

/// The frozen roles a stage scores against. Stage one uses only the
/// executor; stage two chains the strict coordinator into the executor.
/// Call counters witness that isolation.
pub struct FrozenBackends {
    pub coordinator: Backend,
    pub executor: Backend,
}

/// A scripted coordinator keyed *only* on exact ground-truth states; any
/// other state yields a harmless "Wait", which the executor grounds as a
/// background click. This is what makes corrupt state summaries score low.
pub fn strict_coordinator(suite: &[TaskRecord]) -> Backend {
    let mut table = ScriptedTable {
        default: Some(wrap_tagged("No recognizable state; holding.", "Wait")),
        ..ScriptedTable::default()
    };
    for task in suite {
        for step in &task.steps {
            let (Some(state), Some(instruction)) = (&step.gt.gt_state, &step.gt.gt_instruction)
            else {
                continue;
            };
            table.entries.insert(
                coordinator_key(&task.instruction, &step.screen_id, state),
                wrap_tagged("Following the plan.", instruction),
            );
        }
    }
    Backend::new(Role::Coordinator, BackendKind::Scripted(table))
}

pub fn frozen_backends(suite: &[TaskRecord]) -> FrozenBackends {
    FrozenBackends { coordinator: strict_coordinator(suite), executor: rule_executor() }
}

const DEFAULT_ARMS: usize = 8;

/// A stage's full sampling problem: the candidate policy, its decision
/// contexts, and the (precomputed) reward of every arm in every context.
pub struct StagedRollout<'a> {
    pub stage: Stage,
    pub world: &'a World,
    pub suite: &'a [TaskRecord],
    pub policy: ToyPolicy,
    pub frozen: FrozenBackends,
    pub reward_cfg: RewardConfig,
    pub contexts: Vec<StageContext>,
    arm_rewards: BTreeMap<String, Vec<f64>>,
}

fn require<'t, T>(
    value: Option<&'t T>,
    task: &TaskRecord,
    step: usize,
    field: &'static str,
) -> Result<&'t T, RolloutError> {
    value.ok_or(RolloutError::MissingAnnotation { task: task.task_id.clone(), step, field })
}

impl<'a> StagedRollout<'a> {
    /// Builds the stage: contexts, a uniform-logit policy with `arms`
    /// candidates per context, and every arm's reward under the frozen
    /// chain.
    pub fn new(
        stage: Stage,
        world: &'a World,
        suite: &'a [TaskRecord],
        arms: usize,
        reward_cfg: RewardConfig,
    ) -> Result<StagedRollout<'a>, RolloutError> {
        let arms = arms.max(2);
        let frozen = frozen_backends(suite);
        let role = match stage {
            Stage::One => Role::Coordinator,
            Stage::Two => Role::StateTracker,
        };
        let mut policy = ToyPolicy::new(role, 1.0);
        let mut contexts = Vec::new();

        for (task_index, task) in suite.iter().enumerate() {
            let first = match stage {
                Stage::One => 0,
                Stage::Two => 1,
            };
            for (t, step) in task.steps.iter().enumerate().skip(first) {
                let state = require(step.gt.gt_state.as_ref(), task, t, "gt_state")?;
                let instruction =
                    require(step.gt.gt_instruction.as_ref(), task, t, "gt_instruction")?;
                let screen = world.observation(&step.screen_id)?;
                match stage {
                    Stage::One => {
                        let key = coordinator_key(&task.instruction, &step.screen_id, state);
                        let mut payloads =
                            vec![wrap_tagged("Following the plan.", instruction)];
                        // distractors: taps on the other screen elements
                        let mut slot = 0;
                        while payloads.len() < arms {
                            let label = &screen.elements[slot % screen.elements.len()].label;
                            let text = format!("Tap the '{label}' button");
                            slot += 1;
                            if &text == instruction {
                                continue;
                            }
                            payloads.push(wrap_tagged("Trying something visible.", &text));
                        }
                        policy.add_context(key.clone(), payloads);
                        contexts.push(StageContext {
                            task_index,
                            step_index: t,
                            key,
                            screen_id: step.screen_id.clone(),
                            executor_output: None,
                        });
                    }
                    Stage::Two => {
                        let prev = &task.steps[t - 1];
                        let prev_state = require(prev.gt.gt_state.as_ref(), task, t - 1, "gt_state")?;
                        let prev_action = gt_action(world, prev)?;
                        let prev_output = wrap_tagged(
                            &format!(
                                "Executing: {}",
                                prev.gt.gt_instruction.as_deref().unwrap_or("(step)")
                            ),
                            &serialize_action(&prev_action),
                        );
                        let key = tracker_key(&task.instruction, prev_state);
                        let mut payloads = vec![wrap_tagged("Updating progress.", state)];
                        // one well-formed-but-untagged copy, then corrupted
                        // summaries the frozen coordinator cannot key on
                        payloads.push(state.clone());
                        let mut i = 2;
                        while payloads.len() < arms {
                            payloads.push(wrap_tagged(
                                "Updating progress.",
                                &format!("{state} (unverified note {i})"),
                            ));
                            i += 1;
                        }
                        policy.add_context(key.clone(), payloads);
                        contexts.push(StageContext {
                            task_index,
                            step_index: t,
                            key,
                            screen_id: step.screen_id.clone(),
                            executor_output: Some(prev_output),
                        });
                    }
                }
            }
        }

        let mut rollout = StagedRollout {
            stage,
            world,
            suite,
            policy,
            frozen,
            reward_cfg,
            contexts,
            arm_rewards: BTreeMap::new(),
        };
        rollout.score_arms()?;
        Ok(rollout)
    }

    fn score_arms(&mut self) -> Result<(), RolloutError> {
        // scripted / rule backends are deterministic; the rng is never used
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rewards = BTreeMap::new();
        for ctx in &self.contexts {
            let task = &self.suite[ctx.task_index];
            let arms = self.policy.contexts[&ctx.key].payloads.clone();
            let mut per_arm = Vec::with_capacity(arms.len());
            for payload in &arms {
                per_arm.push(self.score(ctx, task, payload, &mut rng)?);
            }
            rewards.insert(ctx.key.clone(), per_arm);
        }
        self.arm_rewards = rewards;
        Ok(())
    }

    /// Scores one candidate payload for a context through the frozen chain.
    fn score(
        &self,
        ctx: &StageContext,
        task: &TaskRecord,
        payload: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, RolloutError> {
        let step = &task.steps[ctx.step_index];
        let screen = self.world.observation(&step.screen_id)?;
        // the candidate's answer body; lenient so malformed payloads still
        // reach the executor and earn whatever execution reward they can
        let answer = match parse_tagged(payload) {
            Ok((_, answer)) => answer,
            Err(_) => payload.trim().to_string(),
        };
        let instruction = match self.stage {
            Stage::One => answer,
            Stage::Two => {
                // frozen coordinator reads the sampled state summary
                let req = BackendRequest {
                    prompt: String::new(),
                    context_key: coordinator_key(&task.instruction, &step.screen_id, &answer),
                    screen: Some(screen),
                    instruction: None,
                };
                let resp = call_backend(&self.frozen.coordinator, &req, rng)
                    .map_err(|e| RolloutError::Backend(e.to_string()))?;
                match parse_tagged(&resp.text) {
                    Ok((_, a)) => a,
                    Err(_) => resp.text.trim().to_string(),
                }
            }
        };
        let req = BackendRequest {
            prompt: String::new(),
            context_key: String::new(),
            screen: Some(screen),
            instruction: Some(&instruction),
        };
        let resp = call_backend(&self.frozen.executor, &req, rng)
            .map_err(|e| RolloutError::Backend(e.to_string()))?;
        let parsed = crate::orchestrator::parse_executor_output(&resp.text, Some(screen));
        // format component applies to the trainee's own payload
        Ok(total_reward(payload, parsed.action.as_ref(), &step.gt, &self.reward_cfg).total)
    }

    /// Expected per-candidate reward when every arm is equally likely; the
    /// analytic starting point of the training curve.
    pub fn uniform_expected_reward(&self) -> f64 {
        let sum: f64 = self
            .arm_rewards
            .values()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .sum();
        sum / self.arm_rewards.len() as f64
    }

    /// Expected per-candidate reward under the current policy.
    pub fn expected_reward(&self) -> f64 {
        let mut total = 0.0;
        for ctx in &self.contexts {
            let probs = self.policy.probabilities(&ctx.key).expect("context exists");
            let rewards = &self.arm_rewards[&ctx.key];
            total += probs.iter().zip(rewards).map(|(p, r)| p * r).sum::<f64>();
        }
        total / self.contexts.len() as f64
    }

    /// Samples one candidate group per context under the current policy.
    pub fn collect(
        &self,
        grpo_cfg: &GrpoConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(StageBatch, ToyGroup)>, RolloutError> {
        let mut out = Vec::with_capacity(self.contexts.len());
        for ctx in &self.contexts {
            let rewards = &self.arm_rewards[&ctx.key];
            let mut candidates = Vec::with_capacity(grpo_cfg.group_size);
            let mut arm_indices = Vec::with_capacity(grpo_cfg.group_size);
            for _ in 0..grpo_cfg.group_size {
                let (payload, arm, logp) = self.policy.sample(&ctx.key, rng)?;
                candidates.push(Candidate {
                    payload,
                    reward: rewards[arm],
                    logp_new: Some(logp),
                    logp_old: Some(logp),
                    logp_ref: Some(logp),
                });
                arm_indices.push(arm);
            }
            let mut group = CandidateGroup::new(candidates);
            group.standardize(grpo_cfg.std_floor)?;
            let batch = StageBatch {
                stage: self.stage,
                task_id: self.suite[ctx.task_index].task_id.clone(),
                step_index: ctx.step_index,
                context_key: ctx.key.clone(),
                group: group.clone(),
                reward_cfg: self.reward_cfg,
                grpo_cfg: *grpo_cfg,
            };
            out.push((batch, ToyGroup { context: ctx.key.clone(), arm_indices, group }));
        }
        Ok(out)
    }

    /// Trains the stage's policy in place: each iteration samples one group
    /// per context and applies one on-policy update per group. Returns the
    /// expected-reward curve, index 0 being the untrained policy.
    pub fn train(
        &mut self,
        grpo_cfg: &GrpoConfig,
        params: &TrainParams,
    ) -> Result<Vec<f64>, RolloutError> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut curve = Vec::with_capacity(params.iterations + 1);
        curve.push(self.expected_reward());
        for _ in 0..params.iterations {
            for ctx_index in 0..self.contexts.len() {
                let ctx = &self.contexts[ctx_index];
                let rewards = &self.arm_rewards[&ctx.key];
                let mut candidates = Vec::with_capacity(grpo_cfg.group_size);
                let mut arm_indices = Vec::with_capacity(grpo_cfg.group_size);
                for _ in 0..grpo_cfg.group_size {
                    let (payload, arm, logp) = self.policy.sample(&ctx.key, &mut rng)?;
                    candidates.push(Candidate {
                        payload,
                        reward: rewards[arm],
                        logp_new: Some(logp),
                        logp_old: Some(logp),
                        logp_ref: Some(logp),
                    });
                    arm_indices.push(arm);
                }
                let mut group = CandidateGroup::new(candidates);
                group.standardize(grpo_cfg.std_floor)?;
                let toy_group =
                    ToyGroup { context: ctx.key.clone(), arm_indices, group };
                self.policy.update(&[toy_group], grpo_cfg, params.learning_rate)?;
            }
            curve.push(self.expected_reward());
        }
        Ok(curve)
    }
}

/// Convenience constructor with the default candidate count.
pub fn staged_rollout<'a>(
    stage: Stage,
    world: &'a World,
    suite: &'a [TaskRecord],
    reward_cfg: RewardConfig,
) -> Result<StagedRollout<'a>, RolloutError> {
    StagedRollout::new(stage, world, suite, DEFAULT_ARMS, reward_cfg)
}

const BATCH_SCHEMA: &str = "stage-batch";
const BATCH_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BatchHeader {
    schema: String,
    version: u32,
}

/// Writes batches as JSON lines under a versioned header line. Returns the
/// number of batch records written (header excluded).
pub fn emit_batches<W: Write>(mut w: W, batches: &[StageBatch]) -> Result<usize, RolloutError> {
    let header = BatchHeader { schema: BATCH_SCHEMA.to_string(), version: BATCH_VERSION };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for b in batches {
        serde_json::to_writer(&mut w, b)?;
        w.write_all(b"\n")?;
    }
    Ok(batches.len())
}

/// Reads batches back; rejects missing headers and unknown schemas.
pub fn read_batches<R: BufRead>(r: R) -> Result<Vec<StageBatch>, RolloutError> {
    let mut lines = r.lines();
    let header_line = lines.next().ok_or(RolloutError::MissingHeader)??;
    let header: BatchHeader =
        serde_json::from_str(&header_line).map_err(|_| RolloutError::MissingHeader)?;
    if header.schema != BATCH_SCHEMA || header.version != BATCH_VERSION {
        return Err(RolloutError::UnsupportedSchema(format!(
            "{} v{}",
            header.schema, header.version
        )));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
