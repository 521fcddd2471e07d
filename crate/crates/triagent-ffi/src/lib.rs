//! C ABI for the harness core: reward and advantage numerics, executor
//! answer parsing, and an opaque world handle for screen-graph stepping.
//!
//! Conventions: every function returns a `TaStatus`; outputs go through out
//! pointers. Strings returned through `char **` are heap-allocated and must
//! be released with [`ta_string_free`]. Handles from [`ta_world_from_json`]
//! must be released with [`ta_world_free`]. All `const char *` inputs must
//! be valid NUL-terminated UTF-8.

use libc::c_char;
use std::ffi::{CStr, CString};
use triagent::grpo::group_advantages;
use triagent::model::{GroundTruthStep, Observation, RewardConfig};
use triagent::reward::{token_f1, total_reward};
use triagent::sim::{apply_action, World};

/// Status codes returned by every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidUtf8 = -2,
    ParseError = -3,
    InvalidInput = -4,
    UnknownScreen = -5,
}

/// Opaque world handle.
pub struct TaWorld {
    inner: World,
}

fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, TaStatus> {
    if ptr.is_null() {
        return Err(TaStatus::NullPointer);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| TaStatus::InvalidUtf8)
}

fn write_string(out: *mut *mut c_char, value: String) -> TaStatus {
    if out.is_null() {
        return TaStatus::NullPointer;
    }
    match CString::new(value) {
        Ok(s) => {
            unsafe { *out = s.into_raw() };
            TaStatus::Ok
        }
        Err(_) => TaStatus::InvalidInput,
    }
}

/// Releases a string returned by this library. NULL is a no-op.
#[no_mangle]
pub extern "C" fn ta_string_free(ptr: *mut c_char) {
    if !ptr.is_null() {
        drop(unsafe { CString::from_raw(ptr) });
    }
}

/// Strict `<think>…</think><answer>…</answer>` envelope check; writes 1 or
/// 0 to `out`.
#[no_mangle]
pub extern "C" fn ta_check_format(raw: *const c_char, out: *mut u8) -> TaStatus {
    let raw = match read_str(raw) {
        Ok(s) => s,
        Err(e) => return e,
    };
    if out.is_null() {
        return TaStatus::NullPointer;
    }
    unsafe { *out = triagent::agent_io::check_format(raw) };
    TaStatus::Ok
}

/// Token-level F1 between two strings.
#[no_mangle]
pub extern "C" fn ta_token_f1(
    a: *const c_char,
    b: *const c_char,
    out: *mut f64,
) -> TaStatus {
    let (a, b) = match (read_str(a), read_str(b)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return e,
    };
    if out.is_null() {
        return TaStatus::NullPointer;
    }
    unsafe { *out = token_f1(a, b) };
    TaStatus::Ok
}

/// Parses an executor answer record; on success writes the action as a JSON
/// string to `out_json`.
#[no_mangle]
pub extern "C" fn ta_parse_executor_answer(
    answer: *const c_char,
    out_json: *mut *mut c_char,
) -> TaStatus {
    let answer = match read_str(answer) {
        Ok(s) => s,
        Err(e) => return e,
    };
    match triagent::agent_io::parse_executor_answer(answer, None) {
        Ok(action) => match serde_json::to_string(&action) {
            Ok(json) => write_string(out_json, json),
            Err(_) => TaStatus::InvalidInput,
        },
        Err(_) => TaStatus::ParseError,
    }
}

/// Within-group standardized advantages; `out` must hold `len` doubles.
#[no_mangle]
pub extern "C" fn ta_group_advantages(
    rewards: *const f64,
    len: usize,
    std_floor: f64,
    out: *mut f64,
) -> TaStatus {
    if rewards.is_null() || out.is_null() {
        return TaStatus::NullPointer;
    }
    if len == 0 {
        return TaStatus::InvalidInput;
    }
    let rewards = unsafe { std::slice::from_raw_parts(rewards, len) };
    match group_advantages(rewards, std_floor) {
        Ok(adv) => {
            let out = unsafe { std::slice::from_raw_parts_mut(out, len) };
            out.copy_from_slice(&adv);
            TaStatus::Ok
        }
        Err(_) => TaStatus::InvalidInput,
    }
}

/// Execution-feedback total reward for one raw output against a
/// ground-truth step (JSON), under default coefficients. The action is
/// parsed out of the raw text; parse failures still earn the format
/// component.
#[no_mangle]
pub extern "C" fn ta_total_reward(
    raw: *const c_char,
    gt_json: *const c_char,
    out: *mut f64,
) -> TaStatus {
    let (raw, gt_json) = match (read_str(raw), read_str(gt_json)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return e,
    };
    if out.is_null() {
        return TaStatus::NullPointer;
    }
    let gt: GroundTruthStep = match serde_json::from_str(gt_json) {
        Ok(g) => g,
        Err(_) => return TaStatus::ParseError,
    };
    let parsed = triagent::orchestrator::parse_executor_output(raw, None);
    let breakdown = total_reward(raw, parsed.action.as_ref(), &gt, &RewardConfig::default());
    unsafe { *out = breakdown.total };
    TaStatus::Ok
}

/// Deserializes and validates a world; returns NULL on any error.
#[no_mangle]
pub extern "C" fn ta_world_from_json(json: *const c_char) -> *mut TaWorld {
    let json = match read_str(json) {
        Ok(s) => s,
        Err(_) => return std::ptr::null_mut(),
    };
    match serde_json::from_str::<World>(json) {
        Ok(world) => Box::into_raw(Box::new(TaWorld { inner: world })),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Number of screens in the world.
#[no_mangle]
pub extern "C" fn ta_world_screen_count(world: *const TaWorld, out: *mut usize) -> TaStatus {
    if world.is_null() || out.is_null() {
        return TaStatus::NullPointer;
    }
    unsafe { *out = (*world).inner.screens.len() };
    TaStatus::Ok
}

/// A screen's observation as JSON.
#[no_mangle]
pub extern "C" fn ta_world_observation(
    world: *const TaWorld,
    screen_id: *const c_char,
    out_json: *mut *mut c_char,
) -> TaStatus {
    if world.is_null() {
        return TaStatus::NullPointer;
    }
    let screen_id = match read_str(screen_id) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let world = unsafe { &(*world).inner };
    let obs: &Observation = match world.observation(screen_id) {
        Ok(o) => o,
        Err(_) => return TaStatus::UnknownScreen,
    };
    match serde_json::to_string(obs) {
        Ok(json) => write_string(out_json, json),
        Err(_) => TaStatus::InvalidInput,
    }
}

/// Applies an action (JSON) on a screen; writes the successor screen id.
#[no_mangle]
pub extern "C" fn ta_world_apply_action(
    world: *const TaWorld,
    screen_id: *const c_char,
    action_json: *const c_char,
    out_screen: *mut *mut c_char,
) -> TaStatus {
    if world.is_null() {
        return TaStatus::NullPointer;
    }
    let (screen_id, action_json) = match (read_str(screen_id), read_str(action_json)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return e,
    };
    let action: triagent::model::Action = match serde_json::from_str(action_json) {
        Ok(a) => a,
        Err(_) => return TaStatus::ParseError,
    };
    let world = unsafe { &(*world).inner };
    match apply_action(world, screen_id, &action) {
        Ok((next, _)) => write_string(out_screen, next),
        Err(_) => TaStatus::UnknownScreen,
    }
}

/// Releases a world handle. NULL is a no-op.
#[no_mangle]
pub extern "C" fn ta_world_free(world: *mut TaWorld) {
    if !world.is_null() {
        drop(unsafe { Box::from_raw(world) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn take_string(ptr: *mut c_char) -> String {
        assert!(!ptr.is_null());
        let s = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string();
        ta_string_free(ptr);
        s
    }

    #[test]
    fn check_format_roundtrip() {
        let mut out = 0u8;
        let good = cstr("<think>a</think><answer>b</answer>");
        assert_eq!(ta_check_format(good.as_ptr(), &mut out), TaStatus::Ok);
        assert_eq!(out, 1);
        let bad = cstr("nope");
        assert_eq!(ta_check_format(bad.as_ptr(), &mut out), TaStatus::Ok);
        assert_eq!(out, 0);
        assert_eq!(ta_check_format(std::ptr::null(), &mut out), TaStatus::NullPointer);
    }

    #[test]
    fn token_f1_matches_core() {
        let mut out = 0.0;
        let a = cstr("hello world");
        let b = cstr("hello there world");
        assert_eq!(ta_token_f1(a.as_ptr(), b.as_ptr(), &mut out), TaStatus::Ok);
        assert!((out - 0.8).abs() < 1e-12);
    }

    #[test]
    fn parse_answer_and_errors() {
        let mut out: *mut c_char = std::ptr::null_mut();
        let answer = cstr("['action': 'click', 'point': [520, 1130]]");
        assert_eq!(ta_parse_executor_answer(answer.as_ptr(), &mut out), TaStatus::Ok);
        let json = take_string(out);
        assert!(json.contains("\"click\""), "{json}");

        let garbage = cstr("free text");
        let mut out: *mut c_char = std::ptr::null_mut();
        assert_eq!(ta_parse_executor_answer(garbage.as_ptr(), &mut out), TaStatus::ParseError);
    }

    #[test]
    fn advantages_buffer() {
        let rewards = [1.0, 0.0, 0.0, 1.0];
        let mut out = [0.0f64; 4];
        assert_eq!(
            ta_group_advantages(rewards.as_ptr(), 4, 1e-8, out.as_mut_ptr()),
            TaStatus::Ok
        );
        assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);
        assert_eq!(
            ta_group_advantages(std::ptr::null(), 4, 1e-8, out.as_mut_ptr()),
            TaStatus::NullPointer
        );
        assert_eq!(
            ta_group_advantages(rewards.as_ptr(), 0, 1e-8, out.as_mut_ptr()),
            TaStatus::InvalidInput
        );
    }

    #[test]
    fn total_reward_composition() {
        let raw = cstr(
            "<think>looking</think><answer>['action': 'click', 'point': [520, 1130]]</answer>",
        );
        let gt = cstr(
            r#"{"gt_type":"click","gt_bbox":{"left":500,"top":1100,"right":600,"bottom":1200}}"#,
        );
        let mut out = 0.0;
        assert_eq!(ta_total_reward(raw.as_ptr(), gt.as_ptr(), &mut out), TaStatus::Ok);
        assert!((out - 1.0).abs() < 1e-9);

        let bad_gt = cstr("{broken");
        assert_eq!(ta_total_reward(raw.as_ptr(), bad_gt.as_ptr(), &mut out), TaStatus::ParseError);
    }

    #[test]
    fn world_handle_lifecycle() {
        let world = triagent::sim::build_world(&triagent::sim::WorldParams::default()).unwrap();
        let json = cstr(&serde_json::to_string(&world).unwrap());
        let handle = ta_world_from_json(json.as_ptr());
        assert!(!handle.is_null());

        let mut n = 0usize;
        assert_eq!(ta_world_screen_count(handle, &mut n), TaStatus::Ok);
        assert_eq!(n, 12);

        let mut obs: *mut c_char = std::ptr::null_mut();
        let home = cstr("s00");
        assert_eq!(ta_world_observation(handle, home.as_ptr(), &mut obs), TaStatus::Ok);
        assert!(take_string(obs).contains("\"s00\""));

        let action = cstr(r#"{"kind":"press_home"}"#);
        let from = cstr("s03");
        let mut next: *mut c_char = std::ptr::null_mut();
        assert_eq!(
            ta_world_apply_action(handle, from.as_ptr(), action.as_ptr(), &mut next),
            TaStatus::Ok
        );
        assert_eq!(take_string(next), "s00");

        let missing = cstr("zz");
        assert_eq!(
            ta_world_apply_action(handle, missing.as_ptr(), action.as_ptr(), &mut next),
            TaStatus::UnknownScreen
        );
        ta_world_free(handle);

        let invalid = cstr("{\"screens\":{}}");
        assert!(ta_world_from_json(invalid.as_ptr()).is_null());
    }
}
