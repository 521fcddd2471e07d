//! Long-horizon task generation over a screen-graph world.
//!
//! Tasks are built from replayable action paths: navigation clicks from the
//! oracle solver, in-place search/scroll steps for length, and for confuser
//! tasks a mid-task home detour that revisits the home screen at
//! non-adjacent timesteps.

use super::world::{apply_action, oracle_solve, screen_name, SimError, World};
use crate::model::{
    Action, ActionType, Direction, GroundTruthStep, TaskRecord, TaskStep,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// The neutral initial state summary every episode starts from.
pub const INITIAL_STATE_TEXT: &str = "Task started; nothing done yet.";

/// In-place steps appended per task are capped so that task length stays
/// tied to world depth; requests beyond depth + padding are unsatisfiable.
pub const MAX_PADDING: usize = 6;

const TYPE_PHRASES: &[&str] =
    &["meeting notes", "project plan", "quarterly report", "sign in", "business meeting"];

#[derive(Debug, Clone, Copy)]
pub struct SuiteParams {
    pub n_tasks: usize,
    pub min_len: usize,
    pub confuser_rate: f64,
    pub seed: u64,
}

struct PathStep {
    screen_id: String,
    action: Action,
    gt_bbox: Option<crate::model::BBox>,
    instruction: String,
}

fn instruction_for(world: &World, screen_id: &str, action: &Action) -> (String, Option<crate::model::BBox>) {
    match action.kind {
        ActionType::Click | ActionType::Select => {
            let screen = world.screens.get(screen_id).unwrap();
            let elem = screen.hit_test(action.point.unwrap()).unwrap();
            (format!("Tap the '{}' button", elem.label), Some(elem.bbox))
        }
        ActionType::TypeText => {
            let screen = world.screens.get(screen_id).unwrap();
            let field = screen
                .elements
                .iter()
                .find(|e| e.label.ends_with("Search"))
                .map(|e| e.label.clone())
                .unwrap_or_else(|| "Search".to_string());
            (
                format!(
                    "Type '{}' into the '{}' field",
                    action.input_text.as_deref().unwrap_or(""),
                    field
                ),
                None,
            )
        }
        ActionType::Scroll => (
            format!("Scroll {}", action.direction.map(Direction::as_str).unwrap_or("down")),
            None,
        ),
        ActionType::PressHome => ("Press home".to_string(), None),
        ActionType::PressBack => ("Press back".to_string(), None),
        ActionType::Enter => ("Press enter".to_string(), None),
        ActionType::Complete => ("Mark the task complete".to_string(), None),
        ActionType::Close => ("Close the app".to_string(), None),
        ActionType::LongPress => {
            let screen = world.screens.get(screen_id).unwrap();
            let elem = screen.hit_test(action.point.unwrap()).unwrap();
            (format!("Long-press the '{}' item", elem.label), Some(elem.bbox))
        }
    }
}

fn push_path(world: &World, steps: &mut Vec<PathStep>, cursor: &mut String, actions: Vec<Action>) {
    for action in actions {
        let (instruction, gt_bbox) = instruction_for(world, cursor, &action);
        steps.push(PathStep { screen_id: cursor.clone(), action: action.clone(), gt_bbox, instruction });
        let (next, _) = apply_action(world, cursor, &action).unwrap();
        *cursor = next;
    }
}

fn padding_action(world: &World, screen_id: &str, k: usize, rng: &mut ChaCha8Rng) -> Action {
    if k % 2 == 0 {
        let phrase = TYPE_PHRASES[rng.gen_range(0..TYPE_PHRASES.len())];
        Action::type_text(phrase)
    } else {
        let _ = world;
        let _ = screen_id;
        Action::scroll(Direction::Down)
    }
}

fn screen_index(id: &str) -> usize {
    id.trim_start_matches('s').parse().unwrap_or(0)
}

/// All screens reachable from home, with their BFS depth, excluding home.
fn depths(world: &World) -> BTreeMap<String, usize> {
    let mut dist = BTreeMap::new();
    dist.insert(world.home_screen.clone(), 0usize);
    let mut queue = std::collections::VecDeque::from([world.home_screen.clone()]);
    while let Some(cur) = queue.pop_front() {
        let d = dist[&cur];
        for (_, to) in world.edges(&cur) {
            if !dist.contains_key(&to) {
                dist.insert(to.clone(), d + 1);
                queue.push_back(to);
            }
        }
    }
    dist.remove(&world.home_screen);
    dist
}

/// Generates a deterministic suite of replayable tasks. A `confuser_rate`
/// fraction revisit the home screen at non-adjacent steps; ground-truth
/// state and instruction annotations are synthesized per step.
pub fn generate_task_suite(
    world: &World,
    params: &SuiteParams,
) -> Result<Vec<TaskRecord>, SimError> {
    if params.min_len < 2 {
        return Err(SimError::InvalidSpec("min_len must be at least 2".to_string()));
    }
    let depth_map = depths(world);
    let max_depth = depth_map.values().copied().max().unwrap_or(0);
    // longest confuser: two deepest legs + detour + padding + terminal
    let max_len = 2 * max_depth + 1 + MAX_PADDING + 1;
    if params.min_len > max_len {
        return Err(SimError::Unsatisfiable(params.min_len));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_confusers = (params.confuser_rate * params.n_tasks as f64).ceil() as usize;
    let mut tasks = Vec::with_capacity(params.n_tasks);

    let deep_screens: Vec<String> = {
        let mut v: Vec<(usize, String)> =
            depth_map.iter().map(|(s, d)| (*d, s.clone())).collect();
        v.sort();
        v.reverse();
        v.into_iter().map(|(_, s)| s).collect()
    };

    for j in 0..params.n_tasks {
        let confuser = j < n_confusers.min(params.n_tasks);
        let target_len = params.min_len + rng.gen_range(0..=2).min(MAX_PADDING);
        let mut steps: Vec<PathStep> = Vec::new();
        let mut cursor = world.home_screen.clone();

        let (goal_a, goal_b);
        if confuser {
            // two distinct destinations at depth >= 2 when available
            let eligible: Vec<&String> = deep_screens
                .iter()
                .filter(|s| depth_map[*s] >= 2.min(max_depth))
                .collect();
            let a = eligible[rng.gen_range(0..eligible.len())].clone();
            let b = loop {
                let b = eligible[rng.gen_range(0..eligible.len())].clone();
                if b != a {
                    break b;
                }
            };
            goal_a = a.clone();
            goal_b = b.clone();
            let leg1 = oracle_solve(world, &cursor, |s| s == a)?;
            push_path(world, &mut steps, &mut cursor, leg1);
            let pad = padding_action(world, &cursor, 0, &mut rng);
            push_path(world, &mut steps, &mut cursor, vec![pad]);
            push_path(world, &mut steps, &mut cursor, vec![Action::simple(ActionType::PressHome)]);
            let leg2 = oracle_solve(world, &cursor, |s| s == b)?;
            push_path(world, &mut steps, &mut cursor, leg2);
        } else {
            let goal = deep_screens[rng.gen_range(0..deep_screens.len().min(4))].clone();
            goal_a = goal.clone();
            goal_b = goal.clone();
            let leg = oracle_solve(world, &cursor, |s| s == goal)?;
            push_path(world, &mut steps, &mut cursor, leg);
        }

        // pad in place up to target length (terminal step takes one slot)
        let mut k = 1;
        while steps.len() + 1 < target_len && k <= MAX_PADDING {
            let pad = padding_action(world, &cursor, k, &mut rng);
            push_path(world, &mut steps, &mut cursor, vec![pad]);
            k += 1;
        }
        push_path(world, &mut steps, &mut cursor, vec![Action::simple(ActionType::Complete)]);

        let a_name = screen_name(screen_index(&goal_a));
        let b_name = screen_name(screen_index(&goal_b));
        let instruction = if confuser {
            format!("Finish the draft in {a_name} and then review {b_name} (task {j:03})")
        } else {
            format!("Open {a_name} and file the report (task {j:03})")
        };

        let n_steps = steps.len();
        let mut gt_steps = Vec::with_capacity(n_steps);
        let mut prev_desc: Option<String> = None;
        for (t, ps) in steps.iter().enumerate() {
            let gt_state = if t == 0 {
                INITIAL_STATE_TEXT.to_string()
            } else {
                format!(
                    "For '{instruction}': completed {t} of {n_steps} steps; last action {}; now on {}.",
                    prev_desc.as_deref().unwrap_or("none"),
                    screen_name(screen_index(&ps.screen_id)),
                )
            };
            let gt = GroundTruthStep {
                gt_type: ps.action.kind,
                gt_bbox: ps.gt_bbox,
                gt_text: ps.action.input_text.clone(),
                gt_direction: ps.action.direction,
                gt_state: Some(gt_state),
                gt_instruction: Some(ps.instruction.clone()),
            };
            prev_desc = Some(ps.action.describe());
            gt_steps.push(TaskStep { screen_id: ps.screen_id.clone(), gt });
        }

        let mut metadata = BTreeMap::new();
        metadata.insert("confuser".to_string(), confuser.to_string());
        tasks.push(TaskRecord {
            task_id: format!("t{j:03}"),
            instruction,
            steps: gt_steps,
            metadata,
        });
    }
    Ok(tasks)
}

/// Replays a task's own ground-truth actions through the world; returns the
/// visited screen sequence (one per step, pre-action).
#[cfg(test)]
pub(crate) fn replay_screens(world: &World, task: &TaskRecord) -> Result<Vec<String>, SimError> {
    let mut cursor = task.steps[0].screen_id.clone();
    let mut visited = Vec::new();
    for step in &task.steps {
        assert_eq!(step.screen_id, cursor, "task {} diverges from world", task.task_id);
        visited.push(cursor.clone());
        let action = gt_action(world, step)?;
        let (next, _) = apply_action(world, &cursor, &action)?;
        cursor = next;
    }
    Ok(visited)
}

/// Reconstructs the concrete ground-truth action for a step (click points
/// resolve to the element center).
pub fn gt_action(world: &World, step: &TaskStep) -> Result<Action, SimError> {
    let mut action = Action::simple(step.gt.gt_type);
    if step.gt.gt_type.is_point_bearing() {
        let b = step.gt.gt_bbox.ok_or_else(|| {
            SimError::InvalidSpec(format!("step on {} lacks gt_bbox", step.screen_id))
        })?;
        action.point = Some(b.center());
    }
    action.input_text = step.gt.gt_text.clone();
    action.direction = step.gt.gt_direction;
    let _ = world;
    Ok(action)
}
