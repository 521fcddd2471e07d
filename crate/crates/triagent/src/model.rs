//! Shared domain types: actions, observations, tasks, trajectories and
//! the reward / optimization configuration.
//!
//! Everything here is immutable value data with serde round-trips; the only
//! behavior is validation and bbox geometry.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Atomic GUI operation kinds understood by the executor.
///
/// `LongPress` is not part of the executor's answer enum but is scored by
/// the parameter reward, so it exists as a first-class kind; benchmark data
/// decides whether it ever appears.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Complete,
    Close,
    PressHome,
    Click,
    PressBack,
    TypeText,
    Select,
    Scroll,
    Enter,
    LongPress,
}

impl ActionType {
    /// True for kinds that carry a screen point.
    pub fn is_point_bearing(self) -> bool {
        matches!(self, ActionType::Click | ActionType::LongPress | ActionType::Select)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Direction> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Some(Direction::Up),
            "down" => Some(Direction::Down),
            "left" => Some(Direction::Left),
            "right" => Some(Direction::Right),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

/// One executor action: a kind plus whichever parameter that kind takes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionType,
    /// Integer pixel coordinates; present iff the kind is point-bearing.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub point: Option<(i64, i64)>,
    /// Present iff kind = TypeText.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub input_text: Option<String>,
    /// Present iff kind = Scroll.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direction: Option<Direction>,
}

impl Action {
    pub fn simple(kind: ActionType) -> Action {
        Action { kind, point: None, input_text: None, direction: None }
    }

    pub fn click(x: i64, y: i64) -> Action {
        Action { kind: ActionType::Click, point: Some((x, y)), input_text: None, direction: None }
    }

    pub fn long_press(x: i64, y: i64) -> Action {
        Action { kind: ActionType::LongPress, point: Some((x, y)), input_text: None, direction: None }
    }

    pub fn select(x: i64, y: i64) -> Action {
        Action { kind: ActionType::Select, point: Some((x, y)), input_text: None, direction: None }
    }

    pub fn type_text(text: impl Into<String>) -> Action {
        Action {
            kind: ActionType::TypeText,
            point: None,
            input_text: Some(text.into()),
            direction: None,
        }
    }

    pub fn scroll(direction: Direction) -> Action {
        Action { kind: ActionType::Scroll, point: None, input_text: None, direction: Some(direction) }
    }

    /// Compact one-line rendering used for action histories, e.g. `Click(520,1130)`.
    pub fn describe(&self) -> String {
        match self.kind {
            ActionType::Click => {
                let (x, y) = self.point.unwrap_or((0, 0));
                format!("Click({x},{y})")
            }
            ActionType::LongPress => {
                let (x, y) = self.point.unwrap_or((0, 0));
                format!("LongPress({x},{y})")
            }
            ActionType::Select => {
                let (x, y) = self.point.unwrap_or((0, 0));
                format!("Select({x},{y})")
            }
            ActionType::TypeText => {
                format!("Type({})", self.input_text.as_deref().unwrap_or(""))
            }
            ActionType::Scroll => {
                format!("Scroll({})", self.direction.map(Direction::as_str).unwrap_or("?"))
            }
            ActionType::PressHome => "PressHome".to_string(),
            ActionType::PressBack => "PressBack".to_string(),
            ActionType::Enter => "Enter".to_string(),
            ActionType::Complete => "Complete".to_string(),
            ActionType::Close => "Close".to_string(),
        }
    }

    /// Structural validity of the kind/parameter pairing.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind.is_point_bearing() != self.point.is_some() {
            out.push(format!("{:?}: point presence mismatch", self.kind));
        }
        if (self.kind == ActionType::TypeText) != self.input_text.is_some() {
            out.push(format!("{:?}: input_text presence mismatch", self.kind));
        }
        if (self.kind == ActionType::Scroll) != self.direction.is_some() {
            out.push(format!("{:?}: direction presence mismatch", self.kind));
        }
        out
    }
}

/// Axis-aligned bounding box in integer pixels. Containment is inclusive on
/// all four edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub left: i64,
    pub top: i64,
    pub right: i64,
    pub bottom: i64,
}

impl BBox {
    pub fn new(left: i64, top: i64, right: i64, bottom: i64) -> BBox {
        BBox { left, top, right, bottom }
    }

    pub fn is_valid(&self) -> bool {
        self.left < self.right && self.top < self.bottom
    }

    pub fn center(&self) -> (i64, i64) {
        ((self.left + self.right) / 2, (self.top + self.bottom) / 2)
    }

    pub fn contains(&self, point: (i64, i64)) -> bool {
        bbox_contains(self, point)
    }
}

/// Edge-inclusive containment test for a click point against a box.
pub fn bbox_contains(b: &BBox, p: (i64, i64)) -> bool {
    b.left <= p.0 && p.0 <= b.right && b.top <= p.1 && p.1 <= b.bottom
}

/// One interactive element on a screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenElement {
    pub element_id: String,
    pub label: String,
    pub bbox: BBox,
}

/// A structured screen state: identifier, size, elements and an opaque
/// screenshot reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub screen_id: String,
    pub width: i64,
    pub height: i64,
    pub elements: Vec<ScreenElement>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub is_terminal: bool,
}

impl Observation {
    /// First element (in declaration order) whose bbox contains the point.
    pub fn hit_test(&self, point: (i64, i64)) -> Option<&ScreenElement> {
        self.elements.iter().find(|e| e.bbox.contains(point))
    }

    pub fn element(&self, element_id: &str) -> Option<&ScreenElement> {
        self.elements.iter().find(|e| e.element_id == element_id)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let screen_box = BBox::new(0, 0, self.width, self.height);
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.elements {
            if !e.bbox.is_valid() {
                out.push(format!("screen {}: element {} has degenerate bbox", self.screen_id, e.element_id));
            }
            if e.bbox.left < 0
                || e.bbox.top < 0
                || e.bbox.right > screen_box.right
                || e.bbox.bottom > screen_box.bottom
            {
                out.push(format!("screen {}: element {} outside screen", self.screen_id, e.element_id));
            }
            if !seen.insert(e.element_id.clone()) {
                out.push(format!("screen {}: duplicate element_id {}", self.screen_id, e.element_id));
            }
        }
        out
    }
}

/// Per-step ground truth: the annotated action plus optional state and
/// instruction annotations used for staged training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroundTruthStep {
    pub gt_type: ActionType,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gt_bbox: Option<BBox>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gt_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gt_direction: Option<Direction>,
    /// Annotated task state *entering* this step.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gt_state: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gt_instruction: Option<String>,
}

impl Default for ActionType {
    fn default() -> Self {
        ActionType::Complete
    }
}

impl GroundTruthStep {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.gt_type.is_point_bearing() && self.gt_bbox.is_none() {
            out.push(format!("{:?} without bbox", self.gt_type));
        }
        if !self.gt_type.is_point_bearing() && self.gt_bbox.is_some() {
            out.push(format!("{:?} with unexpected bbox", self.gt_type));
        }
        if (self.gt_type == ActionType::TypeText) != self.gt_text.is_some() {
            out.push(format!("{:?}: gt_text presence mismatch", self.gt_type));
        }
        if (self.gt_type == ActionType::Scroll) != self.gt_direction.is_some() {
            out.push(format!("{:?}: gt_direction presence mismatch", self.gt_type));
        }
        if let Some(b) = &self.gt_bbox {
            if !b.is_valid() {
                out.push("degenerate gt_bbox".to_string());
            }
        }
        out
    }
}

/// One step of a task: a screen reference plus its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStep {
    pub screen_id: String,
    pub gt: GroundTruthStep,
}

/// A benchmark task: high-level instruction plus per-step ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub instruction: String,
    pub steps: Vec<TaskStep>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Validates a task against the structural invariants; violations are data,
/// not failures, and each names the offending step and field.
pub fn validate_task(task: &TaskRecord) -> Vec<String> {
    let mut out = Vec::new();
    if task.steps.is_empty() {
        out.push("steps empty".to_string());
        return out;
    }
    for (i, step) in task.steps.iter().enumerate() {
        for v in step.gt.violations() {
            out.push(format!("step {i}: {v}"));
        }
    }
    out
}

/// Natural-language task state; index 0 denotes the initial state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSummary {
    pub text: String,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicInstruction {
    pub text: String,
    pub step_index: usize,
}

/// The executor's raw output plus whatever could be parsed out of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutorOutput {
    pub raw: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub think: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub action: Option<Action>,
    pub parse_ok: bool,
}

/// One full loop iteration: state in, instruction, executor output, state out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step_index: usize,
    pub observation_ref: String,
    pub prev_state: StateSummary,
    pub instruction: AtomicInstruction,
    pub executor: ExecutorOutput,
    pub next_state: StateSummary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reward: Option<crate::reward::RewardBreakdown>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    CompletedByAgent,
    Truncated,
    EnvError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<StepLog>,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, step) in self.steps.iter().enumerate() {
            if step.step_index != i {
                out.push(format!("step {i}: non-consecutive index {}", step.step_index));
            }
            if step.prev_state.step_index != step.step_index {
                out.push(format!("step {i}: prev_state index mismatch"));
            }
            if step.next_state.step_index != step.step_index + 1 {
                out.push(format!("step {i}: next_state index mismatch"));
            }
        }
        let last_terminal = self
            .steps
            .last()
            .and_then(|s| s.executor.action.as_ref())
            .map(|a| matches!(a.kind, ActionType::Complete | ActionType::Close))
            .unwrap_or(false);
        if (self.status == TrajectoryStatus::CompletedByAgent) != last_terminal {
            out.push("status inconsistent with final action".to_string());
        }
        out
    }
}

/// Which roles participate in the loop. The ablations replace the
/// coordinator with the raw task instruction, or the tracked state with a
/// windowed action history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    Full,
    NoCoordinator,
    NoStateTracker,
}

/// Weights for the execution-feedback reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub f1_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { alpha1: 0.1, alpha2: 0.9, gamma1: 0.2, gamma2: 0.8, f1_threshold: 0.5 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.alpha1 >= 0.0
            && self.alpha2 >= 0.0
            && self.gamma1 >= 0.0
            && self.gamma2 >= 0.0
            && (self.alpha1 + self.alpha2 - 1.0).abs() < 1e-12
            && (self.gamma1 + self.gamma2 - 1.0).abs() < 1e-12
            && self.f1_threshold > 0.0
            && self.f1_threshold < 1.0;
        if ok {
            Ok(())
        } else {
            Err("reward config: weights must be non-negative, alpha/gamma pairs must sum to 1, f1_threshold in (0,1)".to_string())
        }
    }
}

/// Group-relative optimization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub group_size: usize,
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig { clip_epsilon: 0.2, kl_beta: 0.0, group_size: 4, std_floor: 1e-8 }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.clip_epsilon > 0.0
            && self.clip_epsilon < 1.0
            && self.group_size >= 1
            && self.std_floor > 0.0
            && self.kl_beta >= 0.0;
        if ok {
            Ok(())
        } else {
            Err("grpo config: clip_epsilon in (0,1), group_size >= 1, std_floor > 0, kl_beta >= 0".to_string())
        }
    }
}
