//! Deterministic screen-graph world, long-horizon task generator with
//! home-screen confusers, a breadth-first oracle solver and toy softmax
//! policies for desk-scale staged training.

mod taskgen;
mod toy;
mod world;

pub use taskgen::{generate_task_suite, gt_action, SuiteParams, INITIAL_STATE_TEXT, MAX_PADDING};
pub use toy::{ToyArms, ToyGroup, ToyPolicy};
pub use world::{apply_action, build_world, oracle_solve, SimError, TransitionKey, World, WorldParams};
