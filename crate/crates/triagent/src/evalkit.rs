//! Benchmark ingestion, step-wise Type/GR/SR scoring, aggregate reports and
//! the temporal-order probe with its scripted judge family.

use crate::model::{
    Action, ActionType, BBox, Direction, GroundTruthStep, RewardConfig, TaskRecord, TaskStep,
    Trajectory,
};
use crate::reward::reward_param;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no verdicts to aggregate")]
    EmptyInput,
    #[error("no trajectory is long enough for interval {0}")]
    InsufficientLength(usize),
    #[error("schema descriptor references absent field '{0}'")]
    UnknownSchemaField(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-step verdict. `gr_ok` is defined only when the ground-truth action is
/// point-bearing; `sr_ok` implies `type_ok`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepVerdict {
    pub type_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gr_ok: Option<bool>,
    pub sr_ok: bool,
}

/// Scores one predicted action (or parse failure) against ground truth.
/// Success requires both the action type and its parameters to be correct,
/// with the same parameter rule the reward engine uses.
pub fn eval_step(pred: Option<&Action>, gt: &GroundTruthStep, cfg: &RewardConfig) -> StepVerdict {
    let type_ok = pred.map(|a| a.kind == gt.gt_type).unwrap_or(false);
    let gr_ok = if gt.gt_type.is_point_bearing() {
        Some(match (pred.and_then(|a| a.point), gt.gt_bbox) {
            (Some(p), Some(b)) => b.contains(p),
            _ => false,
        })
    } else {
        None
    };
    let sr_ok = type_ok && pred.map(|a| reward_param(a, gt, cfg) == 1).unwrap_or(false);
    StepVerdict { type_ok, gr_ok, sr_ok }
}

/// Counts and percentages for one scope (a task or the whole suite). The
/// grounding denominator counts only point-bearing ground-truth steps;
/// `gr_percent` is null when that denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Rollup {
    pub n_steps: usize,
    pub type_correct: usize,
    pub type_percent: f64,
    pub gr_correct: usize,
    pub gr_defined: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gr_percent: Option<f64>,
    pub sr_correct: usize,
    pub sr_percent: f64,
}

impl Rollup {
    fn add(&mut self, v: &StepVerdict) {
        self.n_steps += 1;
        self.type_correct += usize::from(v.type_ok);
        if let Some(gr) = v.gr_ok {
            self.gr_defined += 1;
            self.gr_correct += usize::from(gr);
        }
        self.sr_correct += usize::from(v.sr_ok);
    }

    fn finish(&mut self) {
        self.type_percent = 100.0 * self.type_correct as f64 / self.n_steps as f64;
        self.sr_percent = 100.0 * self.sr_correct as f64 / self.n_steps as f64;
        self.gr_percent = if self.gr_defined == 0 {
            None
        } else {
            Some(100.0 * self.gr_correct as f64 / self.gr_defined as f64)
        };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: Rollup,
    pub per_task: BTreeMap<String, Rollup>,
    /// Denominator policy, echoed so downstream readers need not guess.
    pub note: String,
}

impl Report {
    /// Plain-text table rendering.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let fmt_gr = |r: &Rollup| {
            r.gr_percent.map(|p| format!("{p:.2}")).unwrap_or_else(|| "null".to_string())
        };
        out.push_str("task            steps   Type     GR      SR\n");
        for (task_id, r) in &self.per_task {
            out.push_str(&format!(
                "{task_id:<15} {:>5} {:>7.2} {:>7} {:>7.2}\n",
                r.n_steps,
                r.type_percent,
                fmt_gr(r),
                r.sr_percent
            ));
        }
        let s = &self.suite;
        out.push_str(&format!(
            "{:<15} {:>5} {:>7.2} {:>7} {:>7.2}\n",
            "suite",
            s.n_steps,
            s.type_percent,
            fmt_gr(s),
            s.sr_percent
        ));
        out
    }
}

/// Folds per-task verdicts into a report. Pure counting, so the result is
/// invariant under any reordering of tasks or steps.
pub fn aggregate(verdicts: &BTreeMap<String, Vec<StepVerdict>>) -> Result<Report, EvalError> {
    if verdicts.values().all(|v| v.is_empty()) {
        return Err(EvalError::EmptyInput);
    }
    let mut suite = Rollup::default();
    let mut per_task = BTreeMap::new();
    for (task_id, steps) in verdicts {
        let mut rollup = Rollup::default();
        for v in steps {
            rollup.add(v);
            suite.add(v);
        }
        rollup.finish();
        per_task.insert(task_id.clone(), rollup);
    }
    suite.finish();
    Ok(Report {
        suite,
        per_task,
        note: "GR denominator counts point-bearing ground-truth steps only".to_string(),
    })
}

/// Scores a predicted trajectory step-by-step against its task's ground
/// truth; extra predicted steps beyond the ground truth are ignored and
/// missing ones count as all-false.
pub fn eval_trajectory(traj: &Trajectory, task: &TaskRecord, cfg: &RewardConfig) -> Vec<StepVerdict> {
    task.steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            let pred = traj.steps.get(t).and_then(|s| s.executor.action.as_ref());
            eval_step(pred, &step.gt, cfg)
        })
        .collect()
}

/// Maps external benchmark field names onto the internal task schema.
/// Top-level and `action` fields are mandatory in every record; the optional
/// mappings yield absent values when missing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaDescriptor {
    pub instruction: String,
    pub steps: String,
    pub screen: String,
    pub action: String,
    #[serde(default)]
    pub step_instruction: Option<String>,
    #[serde(default)]
    pub state: Option<String>,
    #[serde(default)]
    pub bbox: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub direction: Option<String>,
}

impl Default for SchemaDescriptor {
    fn default() -> Self {
        SchemaDescriptor {
            instruction: "description".to_string(),
            steps: "steps".to_string(),
            screen: "screen".to_string(),
            action: "action".to_string(),
            step_instruction: Some("low_level_instruction".to_string()),
            state: Some("context".to_string()),
            bbox: Some("bbox".to_string()),
            text: Some("text".to_string()),
            direction: Some("direction".to_string()),
        }
    }
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub tasks: Vec<TaskRecord>,
    pub skipped: usize,
}

fn required<'v>(
    obj: &'v serde_json::Value,
    field: &str,
) -> Result<&'v serde_json::Value, EvalError> {
    obj.get(field).ok_or_else(|| EvalError::UnknownSchemaField(field.to_string()))
}

fn optional_str(obj: &serde_json::Value, field: &Option<String>) -> Option<String> {
    field
        .as_ref()
        .and_then(|f| obj.get(f))
        .and_then(|v| v.as_str())
        .map(str::to_string)
}

fn parse_bbox(v: &serde_json::Value) -> Option<BBox> {
    let a = v.as_array()?;
    match (a.first()?.as_i64(), a.get(1)?.as_i64(), a.get(2)?.as_i64(), a.get(3)?.as_i64()) {
        (Some(l), Some(t), Some(r), Some(b)) => Some(BBox::new(l, t, r, b)),
        _ => None,
    }
}

/// Reads one benchmark record (a JSON object) into a task via the schema
/// descriptor.
fn ingest_record(
    value: &serde_json::Value,
    schema: &SchemaDescriptor,
    line_no: usize,
) -> Result<TaskRecord, EvalError> {
    let instruction = required(value, &schema.instruction)?
        .as_str()
        .ok_or_else(|| EvalError::UnknownSchemaField(schema.instruction.clone()))?
        .to_string();
    let raw_steps = required(value, &schema.steps)?
        .as_array()
        .ok_or_else(|| EvalError::UnknownSchemaField(schema.steps.clone()))?;
    let mut steps = Vec::with_capacity(raw_steps.len());
    for raw in raw_steps {
        let screen_id = required(raw, &schema.screen)?
            .as_str()
            .ok_or_else(|| EvalError::UnknownSchemaField(schema.screen.clone()))?
            .to_string();
        let action_name = required(raw, &schema.action)?.clone();
        let gt_type: ActionType = serde_json::from_value(action_name)?;
        let gt_bbox = schema.bbox.as_ref().and_then(|f| raw.get(f)).and_then(parse_bbox);
        let gt_direction = schema
            .direction
            .as_ref()
            .and_then(|f| raw.get(f))
            .and_then(|v| v.as_str())
            .and_then(Direction::parse);
        steps.push(TaskStep {
            screen_id,
            gt: GroundTruthStep {
                gt_type,
                gt_bbox,
                gt_text: optional_str(raw, &schema.text),
                gt_direction,
                gt_state: optional_str(raw, &schema.state),
                gt_instruction: optional_str(raw, &schema.step_instruction),
            },
        });
    }
    let task_id = value
        .get("task_id")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| format!("record-{line_no}"));
    Ok(TaskRecord { task_id, instruction, steps, metadata: BTreeMap::new() })
}

/// Ingests a JSON Lines benchmark file. Records whose structure violates
/// the task invariants are skipped (with a logged reason) and counted;
/// records missing a mapped mandatory field are hard errors.
pub fn ingest_benchmark<R: BufRead>(
    reader: R,
    schema: &SchemaDescriptor,
) -> Result<IngestOutcome, EvalError> {
    let mut tasks = Vec::new();
    let mut skipped = 0;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)?;
        let task = ingest_record(&value, schema, line_no)?;
        let violations = crate::model::validate_task(&task);
        if violations.is_empty() {
            tasks.push(task);
        } else {
            log::warn!("skipping record {line_no} ({}): {}", task.task_id, violations.join("; "));
            skipped += 1;
        }
    }
    Ok(IngestOutcome { tasks, skipped })
}

/// The scripted judge family for the temporal-order probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Judge {
    /// Always answers correctly.
    PerfectMemory,
    /// Correct iff both screens fall inside the recency window of the last
    /// `window` distinct screens and the two screens differ; otherwise
    /// answers uniformly at random.
    Window { window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub interval: usize,
    pub n_pairs: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub points: Vec<ProbePoint>,
}

impl ProbeResult {
    pub fn accuracy_at(&self, interval: usize) -> Option<f64> {
        self.points.iter().find(|p| p.interval == interval).map(|p| p.accuracy)
    }

    /// CSV rendering: `interval,n_pairs,accuracy`.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("interval,n_pairs,accuracy\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.interval, p.n_pairs, p.accuracy));
        }
        out
    }
}

/// The distinct screens among the last `window` distinct values of
/// `seq[..=end]`, most recent first.
fn recency_window(seq: &[String], end: usize, window: usize) -> Vec<&String> {
    let mut out: Vec<&String> = Vec::new();
    for s in seq[..=end].iter().rev() {
        if !out.contains(&s) {
            out.push(s);
            if out.len() == window {
                break;
            }
        }
    }
    out
}

fn judge_pair(
    judge: Judge,
    seq: &[String],
    earlier: usize,
    later: usize,
    rng: &mut ChaCha8Rng,
) -> bool {
    match judge {
        Judge::PerfectMemory => true,
        Judge::Window { window } => {
            let in_window = recency_window(seq, later, window).contains(&&seq[earlier]);
            let distinct = seq[earlier] != seq[later];
            if in_window && distinct {
                true
            } else {
                rng.gen_bool(0.5)
            }
        }
    }
}

/// Samples screen pairs `(s^t, s^{t+d})` per interval `d`, shows them to the
/// judge in randomized order and records ordering accuracy.
pub fn temporal_probe(
    sequences: &[Vec<String>],
    judge: Judge,
    max_interval: usize,
    pairs_per_interval: usize,
    seed: u64,
) -> Result<ProbeResult, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(max_interval);
    for interval in 1..=max_interval {
        let eligible: Vec<(usize, usize)> = sequences
            .iter()
            .enumerate()
            .flat_map(|(i, seq)| {
                (0..seq.len().saturating_sub(interval)).map(move |t| (i, t))
            })
            .collect();
        if eligible.is_empty() {
            return Err(EvalError::InsufficientLength(interval));
        }
        let mut correct = 0;
        for _ in 0..pairs_per_interval {
            let (i, t) = eligible[rng.gen_range(0..eligible.len())];
            // presentation order randomized; the scripted judges are
            // order-symmetric but the coin keeps the protocol honest
            let _flipped: bool = rng.gen();
            if judge_pair(judge, &sequences[i], t, t + interval, &mut rng) {
                correct += 1;
            }
        }
        points.push(ProbePoint {
            interval,
            n_pairs: pairs_per_interval,
            accuracy: correct as f64 / pairs_per_interval as f64,
        });
    }
    Ok(ProbeResult { points })
}

/// Screen-id sequence of a trajectory, one entry per step.
pub fn trajectory_screens(traj: &Trajectory) -> Vec<String> {
    traj.steps.iter().map(|s| s.observation_ref.clone()).collect()
}

/// Screen-id sequence of a task's ground-truth path.
pub fn task_screens(task: &TaskRecord) -> Vec<String> {
    task.steps.iter().map(|s| s.screen_id.clone()).collect()
}
