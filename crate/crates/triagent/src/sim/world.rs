//! Screen-graph world: states are structured screens, transitions are keyed
//! by the element or gesture that triggers them.

use crate::model::{Action, ActionType, BBox, Direction, Observation, ScreenElement};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("unknown screen '{0}'")]
    UnknownScreen(String),
    #[error("goal unreachable from '{0}'")]
    Unreachable(String),
    #[error("unknown policy context '{0}'")]
    UnknownContext(String),
    #[error("no task of the requested length exists (min_len {0})")]
    Unsatisfiable(usize),
}

/// How an action resolves to a transition. Keys are exact-match; a click
/// matches an element key iff its point hit-tests to that element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionKey {
    Click { element_id: String },
    TypeInto { element_id: String },
    Scroll { direction: Direction },
    PressHome,
    PressBack,
    Enter,
    Select { element_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TransitionRule {
    from: String,
    key: TransitionKey,
    to: String,
}

/// Deterministic GUI environment: screens, keyed transitions, a designated
/// home screen. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldRepr", into = "WorldRepr")]
pub struct World {
    pub screens: BTreeMap<String, Observation>,
    pub transitions: BTreeMap<(String, TransitionKey), String>,
    pub home_screen: String,
    pub seed: u64,
}

/// Serialized form: JSON maps cannot key on (screen, transition) pairs, so
/// transitions flatten to a rule list.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorldRepr {
    screens: BTreeMap<String, Observation>,
    transitions: Vec<TransitionRule>,
    home_screen: String,
    seed: u64,
}

impl From<World> for WorldRepr {
    fn from(w: World) -> WorldRepr {
        WorldRepr {
            screens: w.screens,
            transitions: w
                .transitions
                .into_iter()
                .map(|((from, key), to)| TransitionRule { from, key, to })
                .collect(),
            home_screen: w.home_screen,
            seed: w.seed,
        }
    }
}

impl TryFrom<WorldRepr> for World {
    type Error = String;

    fn try_from(r: WorldRepr) -> Result<World, String> {
        let mut transitions = BTreeMap::new();
        for rule in r.transitions {
            transitions.insert((rule.from, rule.key), rule.to);
        }
        let world =
            World { screens: r.screens, transitions, home_screen: r.home_screen, seed: r.seed };
        world.validate().map_err(|e| e.to_string())?;
        Ok(world)
    }
}

impl World {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.screens.contains_key(&self.home_screen) {
            return Err(SimError::InvalidSpec(format!(
                "home screen '{}' does not exist",
                self.home_screen
            )));
        }
        for ((from, key), to) in &self.transitions {
            let screen = self
                .screens
                .get(from)
                .ok_or_else(|| SimError::InvalidSpec(format!("transition from unknown screen '{from}'")))?;
            if !self.screens.contains_key(to) {
                return Err(SimError::InvalidSpec(format!(
                    "dangling transition {from} -> {to}"
                )));
            }
            match key {
                TransitionKey::Click { element_id }
                | TransitionKey::TypeInto { element_id }
                | TransitionKey::Select { element_id } => {
                    if screen.element(element_id).is_none() {
                        return Err(SimError::InvalidSpec(format!(
                            "transition on '{from}' references missing element '{element_id}'"
                        )));
                    }
                }
                _ => {}
            }
            // back transitions must undo some forward edge into `from`
            if *key == TransitionKey::PressBack {
                let has_forward = self.transitions.iter().any(|((p, k), c)| {
                    p == to
                        && c == from
                        && matches!(
                            k,
                            TransitionKey::Click { .. } | TransitionKey::Select { .. }
                        )
                });
                if !has_forward {
                    return Err(SimError::InvalidSpec(format!(
                        "back transition {from} -> {to} has no matching forward edge"
                    )));
                }
            }
        }
        for obs in self.screens.values() {
            let violations = obs.violations();
            if !violations.is_empty() {
                return Err(SimError::InvalidSpec(violations.join("; ")));
            }
        }
        Ok(())
    }

    pub fn observation(&self, screen_id: &str) -> Result<&Observation, SimError> {
        self.screens
            .get(screen_id)
            .ok_or_else(|| SimError::UnknownScreen(screen_id.to_string()))
    }

    /// Outgoing edges of a screen in deterministic (key-sorted) order,
    /// including the implicit home gesture.
    pub fn edges(&self, screen_id: &str) -> Vec<(TransitionKey, String)> {
        let mut out: Vec<(TransitionKey, String)> = self
            .transitions
            .range((screen_id.to_string(), first_key())..)
            .take_while(|((s, _), _)| s == screen_id)
            .map(|((_, k), to)| (k.clone(), to.clone()))
            .collect();
        if !out.iter().any(|(k, _)| *k == TransitionKey::PressHome) {
            out.push((TransitionKey::PressHome, self.home_screen.clone()));
        }
        out.sort();
        out
    }

    /// Realizes a transition key as a concrete action on the given screen.
    pub fn key_to_action(&self, screen_id: &str, key: &TransitionKey) -> Option<Action> {
        let screen = self.screens.get(screen_id)?;
        match key {
            TransitionKey::Click { element_id } => {
                let e = screen.element(element_id)?;
                let (x, y) = e.bbox.center();
                Some(Action::click(x, y))
            }
            TransitionKey::Select { element_id } => {
                let e = screen.element(element_id)?;
                let (x, y) = e.bbox.center();
                Some(Action::select(x, y))
            }
            TransitionKey::TypeInto { element_id } => {
                let e = screen.element(element_id)?;
                Some(Action::type_text(e.label.clone()))
            }
            TransitionKey::Scroll { direction } => Some(Action::scroll(*direction)),
            TransitionKey::PressHome => Some(Action::simple(ActionType::PressHome)),
            TransitionKey::PressBack => Some(Action::simple(ActionType::PressBack)),
            TransitionKey::Enter => Some(Action::simple(ActionType::Enter)),
        }
    }
}

fn first_key() -> TransitionKey {
    TransitionKey::Click { element_id: String::new() }
}

/// Applies an action on a screen. Unmatched actions are no-ops that stay on
/// the same screen; terminal actions end the episode without transition.
pub fn apply_action(
    world: &World,
    screen_id: &str,
    action: &Action,
) -> Result<(String, String), SimError> {
    let screen = world.observation(screen_id)?;
    let resolved: Option<TransitionKey> = match action.kind {
        ActionType::Complete | ActionType::Close => {
            return Ok((screen_id.to_string(), "episode-end".to_string()));
        }
        ActionType::PressHome => {
            return Ok((world.home_screen.clone(), "press-home".to_string()));
        }
        ActionType::Click => action
            .point
            .and_then(|p| screen.hit_test(p))
            .map(|e| TransitionKey::Click { element_id: e.element_id.clone() }),
        ActionType::Select => action
            .point
            .and_then(|p| screen.hit_test(p))
            .map(|e| TransitionKey::Select { element_id: e.element_id.clone() }),
        ActionType::TypeText => world
            .transitions
            .range((screen_id.to_string(), first_key())..)
            .take_while(|((s, _), _)| s == screen_id)
            .find(|((_, k), _)| matches!(k, TransitionKey::TypeInto { .. }))
            .map(|((_, k), _)| k.clone()),
        ActionType::Scroll => action.direction.map(|d| TransitionKey::Scroll { direction: d }),
        ActionType::PressBack => Some(TransitionKey::PressBack),
        ActionType::Enter => Some(TransitionKey::Enter),
        ActionType::LongPress => None,
    };
    if let Some(key) = resolved {
        if let Some(to) = world.transitions.get(&(screen_id.to_string(), key.clone())) {
            return Ok((to.clone(), format!("{key:?}")));
        }
    }
    Ok((screen_id.to_string(), "no-op".to_string()))
}

/// Breadth-first shortest action sequence from `start` to the first screen
/// satisfying `goal`. Ties break by (screen_id, key) order.
pub fn oracle_solve<F: Fn(&str) -> bool>(
    world: &World,
    start: &str,
    goal: F,
) -> Result<Vec<Action>, SimError> {
    world.observation(start)?;
    if goal(start) {
        return Ok(Vec::new());
    }
    let mut prev: BTreeMap<String, (String, TransitionKey)> = BTreeMap::new();
    let mut queue = VecDeque::new();
    let mut seen = BTreeSet::new();
    queue.push_back(start.to_string());
    seen.insert(start.to_string());
    while let Some(cur) = queue.pop_front() {
        for (key, to) in world.edges(&cur) {
            if seen.insert(to.clone()) {
                prev.insert(to.clone(), (cur.clone(), key));
                if goal(&to) {
                    let mut path = Vec::new();
                    let mut node = to;
                    while node != start {
                        let (parent, key) = prev.get(&node).unwrap().clone();
                        path.push(world.key_to_action(&parent, &key).unwrap());
                        node = parent;
                    }
                    path.reverse();
                    return Ok(path);
                }
                queue.push_back(to);
            }
        }
    }
    Err(SimError::Unreachable(start.to_string()))
}

/// Generation parameters for [`build_world`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WorldParams {
    pub seed: u64,
    pub screens: usize,
    /// Maximum navigation children per screen.
    pub branching: usize,
    /// Decorative (transition-free) elements per screen.
    pub decor_elements: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams { seed: 7, screens: 12, branching: 3, decor_elements: 1 }
    }
}

const SCREEN_NAMES: &[&str] = &[
    "Home", "Mail", "Calendar", "Meet", "Notes", "Files", "Music", "Photos", "Chat", "Clock",
    "Maps", "Store", "Wallet", "Tasks", "Weather", "News", "Camera", "Drive", "Forum", "Bank",
];

pub(crate) fn screen_name(index: usize) -> String {
    let base = SCREEN_NAMES[index % SCREEN_NAMES.len()];
    if index < SCREEN_NAMES.len() {
        base.to_string()
    } else {
        format!("{base} {}", index / SCREEN_NAMES.len() + 1)
    }
}

const SCREEN_W: i64 = 1080;
const SCREEN_H: i64 = 2400;

fn element_bbox(slot: usize) -> BBox {
    let top = 200 + 220 * slot as i64;
    BBox::new(40, top, 1040, top + 160)
}

/// Builds a deterministic world: a deep navigation spine off the home
/// screen, side branches, per-screen search fields and scroll loops, back
/// edges, and one cross edge that puts a screen on two distinct shortest
/// paths.
pub fn build_world(params: &WorldParams) -> Result<World, SimError> {
    if params.screens < 4 {
        return Err(SimError::InvalidSpec("need at least 4 screens".to_string()));
    }
    if params.branching < 2 {
        return Err(SimError::InvalidSpec("branching must be at least 2".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.screens;
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
    let home = ids[0].clone();

    // parent[i] for i > 0; spine is roughly the first half of the screens
    let spine_len = (n / 2).max(3).min(n - 2);
    let mut parent: Vec<usize> = vec![0; n];
    let mut out_degree: Vec<usize> = vec![0; n];
    for i in 1..=spine_len {
        parent[i] = i - 1;
        out_degree[i - 1] += 1;
    }
    // one branch child directly under home for the cross edge below
    let branch_root = spine_len + 1;
    parent[branch_root] = 0;
    out_degree[0] += 1;
    for i in (spine_len + 2)..n {
        let candidates: Vec<usize> = (0..i)
            .filter(|&p| out_degree[p] < params.branching)
            .collect();
        let p = candidates[rng.gen_range(0..candidates.len())];
        parent[i] = p;
        out_degree[p] += 1;
    }

    let mut screens: BTreeMap<String, Observation> = BTreeMap::new();
    let mut transitions: BTreeMap<(String, TransitionKey), String> = BTreeMap::new();
    let mut elements: Vec<Vec<ScreenElement>> = vec![Vec::new(); n];

    // navigation elements on each parent, one per child
    for i in 1..n {
        let p = parent[i];
        let slot = elements[p].len();
        let element_id = format!("e{slot}");
        elements[p].push(ScreenElement {
            element_id: element_id.clone(),
            label: format!("Open {}", screen_name(i)),
            bbox: element_bbox(slot),
        });
        transitions.insert((ids[p].clone(), TransitionKey::Click { element_id }), ids[i].clone());
        transitions.insert((ids[i].clone(), TransitionKey::PressBack), ids[p].clone());
    }

    // cross edge: branch_root also opens the depth-2 spine screen, so that
    // screen sits on two distinct shortest paths from home
    let hub = 2.min(spine_len);
    {
        let slot = elements[branch_root].len();
        let element_id = format!("e{slot}");
        elements[branch_root].push(ScreenElement {
            element_id: element_id.clone(),
            label: format!("Open {}", screen_name(hub)),
            bbox: element_bbox(slot),
        });
        transitions.insert(
            (ids[branch_root].clone(), TransitionKey::Click { element_id }),
            ids[hub].clone(),
        );
    }

    // every screen: a search field (self transition) and a scroll loop
    for i in 0..n {
        let slot = elements[i].len();
        let element_id = format!("e{slot}");
        elements[i].push(ScreenElement {
            element_id: element_id.clone(),
            label: format!("{} Search", screen_name(i)),
            bbox: element_bbox(slot),
        });
        transitions.insert((ids[i].clone(), TransitionKey::TypeInto { element_id }), ids[i].clone());
        transitions.insert(
            (ids[i].clone(), TransitionKey::Scroll { direction: Direction::Down }),
            ids[i].clone(),
        );
        for d in 0..params.decor_elements {
            let slot = elements[i].len();
            elements[i].push(ScreenElement {
                element_id: format!("e{slot}"),
                label: format!("{} Panel {d}", screen_name(i)),
                bbox: element_bbox(slot),
            });
        }
    }

    for (i, id) in ids.iter().enumerate() {
        screens.insert(
            id.clone(),
            Observation {
                screen_id: id.clone(),
                width: SCREEN_W,
                height: SCREEN_H,
                elements: std::mem::take(&mut elements[i]),
                image_ref: None,
                is_terminal: false,
            },
        );
    }

    let world = World { screens, transitions, home_screen: home, seed: params.seed };
    world.validate()?;
    Ok(world)
}
