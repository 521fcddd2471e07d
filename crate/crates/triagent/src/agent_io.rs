//! Prompt rendering and parsing for the three agent roles.
//!
//! All three agents speak the same envelope: a `<think>…</think>` block
//! followed by an `<answer>…</answer>` block. The strict format check feeds
//! the format reward; extraction itself is lenient so a malformed envelope
//! can still yield an action for the execution reward.

use crate::model::{Action, ActionType, Direction, Observation};
use regex::Regex;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Coordinator,
    Executor,
    StateTracker,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Coordinator => "coordinator",
            Role::Executor => "executor",
            Role::StateTracker => "state_tracker",
        }
    }
}

const COORDINATOR_TEMPLATE: &str = "You are a GUI task coordinator Agent. Your role is to actively collaborate with the Executor Agent to complete complex GUI navigation tasks. Given a high-level task description and the current state of the task, your goal is to provide a clear and precise fine-grained instruction for the Executor Agent to help accomplish the task.\n\nScreenshot: <image>\n\nHigh-level task: {high_level_instruction}\n\nCurrent_state: {current_state}\n\nFirst, think step-by-step. Put your reasoning within <think> tags.\nAfter your reasoning, provide the instruction within <answer> tags.\n";

const EXECUTOR_TEMPLATE: &str = "You are GUI executor Agent, a reasoning GUI Agent Assistant. In this UI screenshot <image>, I want you to execute the command '{instruction}'.\nPlease provide the action to perform (enumerate from [complete, close, press home, click, press back, type, select, scroll, enter]), the point where the cursor is moved to (integer) if a click is performed, and any input text required to complete the action.\n\nOutput the thinking process in <think> </think> tags, and the final answer in <answer> </answer> tags as follows: <think>...</think> <answer>['action': enum[complete, close, press home, click, press back, type, select, scroll, enter], 'point': [x, y], 'input_text': 'no input text [default]']</answer>\n";

const STATE_TRACKER_TEMPLATE: &str = "You are a GUI task State Tracker Agent. Your core function is dynamic context compression and state updating. You will receive the high-level user instruction, the previous task state (a summary of progress up to the last step), and the latest output of executor agent. Your task is to generate the new task state. This should be a high-semantic natural language summary that updates the previous state based on the latest action, maintaining a coherent record of the task's progress.\n\nHigh-level user instruction: {high_level_instruction}\n\nLatest output of executor agent: {executor_output}\n\nPrevious Task State: {current_state}\n";

const KNOWN_PLACEHOLDERS: &[&str] =
    &["high_level_instruction", "current_state", "instruction", "executor_output"];

/// The sentinel the executor prompt uses for "no text"; normalizes to absent.
pub const NO_INPUT_TEXT: &str = "no input text [default]";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IoError {
    #[error("missing <{0}> tag")]
    MissingTag(&'static str),
    #[error("empty <{0}> body")]
    EmptyBody(&'static str),
    #[error("unknown action '{0}'")]
    UnknownAction(String),
    #[error("malformed answer record")]
    MalformedRecord,
    #[error("action '{kind}' is missing required parameter '{param}'")]
    MissingParam { kind: String, param: &'static str },
    #[error("point ({0}, {1}) outside screen bounds")]
    PointOutOfBounds(i64, i64),
    #[error("unbound placeholder '{0}'")]
    UnboundPlaceholder(String),
    #[error("template for role {role} uses unknown placeholder '{name}'")]
    UnknownPlaceholder { role: &'static str, name: String },
    #[error("failed to read template: {0}")]
    TemplateRead(String),
}

/// A role-tagged prompt template with `{name}` placeholders.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub role: Role,
    pub text: String,
}

impl PromptTemplate {
    pub fn builtin(role: Role) -> PromptTemplate {
        let text = match role {
            Role::Coordinator => COORDINATOR_TEMPLATE,
            Role::Executor => EXECUTOR_TEMPLATE,
            Role::StateTracker => STATE_TRACKER_TEMPLATE,
        };
        PromptTemplate { role, text: text.to_string() }
    }

    /// Loads `<role>.txt` from `dir` when present, otherwise the builtin.
    pub fn load(role: Role, dir: &Path) -> Result<PromptTemplate, IoError> {
        let path = dir.join(format!("{}.txt", role.as_str()));
        if !path.exists() {
            return Ok(PromptTemplate::builtin(role));
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| IoError::TemplateRead(format!("{}: {e}", path.display())))?;
        let t = PromptTemplate { role, text };
        t.check_placeholders()?;
        Ok(t)
    }

    pub fn placeholders(&self) -> Vec<String> {
        placeholder_re()
            .captures_iter(&self.text)
            .map(|c| c[1].to_string())
            .collect()
    }

    fn check_placeholders(&self) -> Result<(), IoError> {
        for name in self.placeholders() {
            if !KNOWN_PLACEHOLDERS.contains(&name.as_str()) {
                return Err(IoError::UnknownPlaceholder { role: self.role.as_str(), name });
            }
        }
        Ok(())
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

/// Byte-exact substitution of every placeholder; any placeholder without a
/// binding is an error.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &BTreeMap<&str, &str>,
) -> Result<String, IoError> {
    let mut out = String::with_capacity(template.text.len());
    let mut last = 0;
    for cap in placeholder_re().captures_iter(&template.text) {
        let whole = cap.get(0).unwrap();
        let name = &cap[1];
        out.push_str(&template.text[last..whole.start()]);
        match bindings.get(name) {
            Some(value) => out.push_str(value),
            None => return Err(IoError::UnboundPlaceholder(name.to_string())),
        }
        last = whole.end();
    }
    out.push_str(&template.text[last..]);
    Ok(out)
}

fn strict_format_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?s)^\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*$").unwrap()
    })
}

fn tag_re(tag: &'static str) -> Regex {
    Regex::new(&format!(r"(?s)<{tag}>(.*?)</{tag}>")).unwrap()
}

/// Strict envelope check: exactly one think block followed by exactly one
/// answer block, both with non-empty bodies. Returns 0 or 1.
pub fn check_format(raw: &str) -> u8 {
    if raw.matches("<think>").count() != 1 || raw.matches("<answer>").count() != 1 {
        return 0;
    }
    match strict_format_re().captures(raw) {
        Some(c) => {
            let think = c[1].trim();
            let answer = c[2].trim();
            // nested tags are not part of the grammar
            if think.is_empty()
                || answer.is_empty()
                || think.contains("</answer>")
                || answer.contains("</think>")
            {
                0
            } else {
                1
            }
        }
        None => 0,
    }
}

/// Lenient extraction of the first think and answer bodies, trimmed.
pub fn parse_tagged(raw: &str) -> Result<(String, String), IoError> {
    static THINK: OnceLock<Regex> = OnceLock::new();
    static ANSWER: OnceLock<Regex> = OnceLock::new();
    let think_re = THINK.get_or_init(|| tag_re("think"));
    let answer_re = ANSWER.get_or_init(|| tag_re("answer"));

    let think = think_re
        .captures(raw)
        .ok_or(IoError::MissingTag("think"))?[1]
        .trim()
        .to_string();
    let answer = answer_re
        .captures(raw)
        .ok_or(IoError::MissingTag("answer"))?[1]
        .trim()
        .to_string();
    if think.is_empty() {
        return Err(IoError::EmptyBody("think"));
    }
    if answer.is_empty() {
        return Err(IoError::EmptyBody("answer"));
    }
    Ok((think, answer))
}

fn parse_action_name(name: &str) -> Result<ActionType, IoError> {
    match name.trim().to_ascii_lowercase().replace('_', " ").as_str() {
        "complete" => Ok(ActionType::Complete),
        "close" => Ok(ActionType::Close),
        "press home" => Ok(ActionType::PressHome),
        "click" => Ok(ActionType::Click),
        "press back" => Ok(ActionType::PressBack),
        "type" | "type text" => Ok(ActionType::TypeText),
        "select" => Ok(ActionType::Select),
        "scroll" => Ok(ActionType::Scroll),
        "enter" => Ok(ActionType::Enter),
        "long press" => Ok(ActionType::LongPress),
        other => Err(IoError::UnknownAction(other.to_string())),
    }
}

fn record_field_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // key, then either a quoted string or a [x, y] pair; key order free
    RE.get_or_init(|| {
        Regex::new(
            r#"['"]?(action|point|input_text)['"]?\s*:\s*(?:'((?:[^'\\]|\\.)*)'|"((?:[^"\\]|\\.)*)"|\[\s*(-?\d+)\s*,\s*(-?\d+)\s*\])"#,
        )
        .unwrap()
    })
}

struct RawRecord {
    action: Option<String>,
    point: Option<(i64, i64)>,
    input_text: Option<String>,
}

fn parse_record(answer: &str) -> Result<RawRecord, IoError> {
    // strict JSON first: real model outputs are sometimes valid JSON objects
    if let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(answer) {
        let action = obj.get("action").and_then(|v| v.as_str()).map(str::to_string);
        let point = obj.get("point").and_then(|v| v.as_array()).and_then(|a| {
            match (a.first().and_then(|x| x.as_i64()), a.get(1).and_then(|y| y.as_i64())) {
                (Some(x), Some(y)) => Some((x, y)),
                _ => None,
            }
        });
        let input_text = obj.get("input_text").and_then(|v| v.as_str()).map(str::to_string);
        if action.is_some() {
            return Ok(RawRecord { action, point, input_text });
        }
    }

    let mut rec = RawRecord { action: None, point: None, input_text: None };
    for cap in record_field_re().captures_iter(answer) {
        let key = &cap[1];
        let string_value = cap
            .get(2)
            .or_else(|| cap.get(3))
            .map(|m| m.as_str().replace("\\'", "'").replace("\\\"", "\""));
        let pair = match (cap.get(4), cap.get(5)) {
            (Some(x), Some(y)) => Some((
                x.as_str().parse::<i64>().map_err(|_| IoError::MalformedRecord)?,
                y.as_str().parse::<i64>().map_err(|_| IoError::MalformedRecord)?,
            )),
            _ => None,
        };
        match key {
            "action" => rec.action = string_value,
            "point" => rec.point = pair,
            "input_text" => rec.input_text = string_value,
            _ => unreachable!(),
        }
    }
    if rec.action.is_none() {
        return Err(IoError::MalformedRecord);
    }
    Ok(rec)
}

/// Parses the executor's answer-record into an [`Action`].
///
/// Accepts the prompt's quasi-record syntax (single or double quotes,
/// optional surrounding brackets, free key order) as well as strict JSON.
/// When a screen is supplied, points are validated against its bounds.
pub fn parse_executor_answer(answer: &str, screen: Option<&Observation>) -> Result<Action, IoError> {
    let rec = parse_record(answer)?;
    let kind = parse_action_name(rec.action.as_deref().unwrap_or(""))?;

    let input_text = rec.input_text.filter(|t| !t.trim().is_empty() && t.trim() != NO_INPUT_TEXT);

    let mut action = Action::simple(kind);
    if kind.is_point_bearing() {
        let point = rec.point.ok_or(IoError::MissingParam { kind: format!("{kind:?}"), param: "point" })?;
        if let Some(s) = screen {
            if point.0 < 0 || point.0 >= s.width || point.1 < 0 || point.1 >= s.height {
                return Err(IoError::PointOutOfBounds(point.0, point.1));
            }
        }
        action.point = Some(point);
    }
    match kind {
        ActionType::TypeText => {
            action.input_text = Some(input_text.ok_or(IoError::MissingParam {
                kind: "TypeText".to_string(),
                param: "input_text",
            })?);
        }
        ActionType::Scroll => {
            let text = input_text.ok_or(IoError::MissingParam {
                kind: "Scroll".to_string(),
                param: "direction",
            })?;
            action.direction = Some(Direction::parse(&text).ok_or(IoError::MissingParam {
                kind: "Scroll".to_string(),
                param: "direction",
            })?);
        }
        _ => {}
    }
    Ok(action)
}

/// Renders an action back into the executor's answer-record syntax.
/// `parse_executor_answer` round-trips this exactly.
pub fn serialize_action(a: &Action) -> String {
    let name = match a.kind {
        ActionType::Complete => "complete",
        ActionType::Close => "close",
        ActionType::PressHome => "press home",
        ActionType::Click => "click",
        ActionType::PressBack => "press back",
        ActionType::TypeText => "type",
        ActionType::Select => "select",
        ActionType::Scroll => "scroll",
        ActionType::Enter => "enter",
        ActionType::LongPress => "long press",
    };
    let (x, y) = a.point.unwrap_or((0, 0));
    let text = match a.kind {
        ActionType::Scroll => a.direction.map(Direction::as_str).unwrap_or("down").to_string(),
        ActionType::TypeText => a.input_text.clone().unwrap_or_default().replace('\'', "\\'"),
        _ => NO_INPUT_TEXT.to_string(),
    };
    format!("['action': '{name}', 'point': [{x}, {y}], 'input_text': '{text}']")
}

/// Wraps a think body and an answer body in the strict envelope.
pub fn wrap_tagged(think: &str, answer: &str) -> String {
    format!("<think>{think}</think><answer>{answer}</answer>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BBox;
    use proptest::prelude::*;

    #[test]
    fn check_format_examples() {
        assert_eq!(check_format("<think>a</think><answer>b</answer>"), 1);
        assert_eq!(check_format("  <think>a</think>\n<answer>b</answer>  "), 1);
        assert_eq!(check_format("<answer>b</answer>"), 0);
        assert_eq!(check_format("<think>a</think><answer>b</answer><answer>c</answer>"), 0);
        assert_eq!(check_format("noise <think>a</think><answer>b</answer>"), 0);
        assert_eq!(check_format("<think> </think><answer>b</answer>"), 0);
        assert_eq!(check_format("<answer>b</answer><think>a</think>"), 0);
    }

    #[test]
    fn parse_tagged_examples() {
        assert_eq!(
            parse_tagged("<think> plan </think>\n<answer>Open Zoom</answer>").unwrap(),
            ("plan".to_string(), "Open Zoom".to_string())
        );
        assert_eq!(
            parse_tagged("noise <think>a</think><answer>b</answer> noise").unwrap(),
            ("a".to_string(), "b".to_string())
        );
        assert_eq!(parse_tagged("<think>a</think>"), Err(IoError::MissingTag("answer")));
        assert_eq!(
            parse_tagged("<think>a</think><answer>  </answer>"),
            Err(IoError::EmptyBody("answer"))
        );
    }

    #[test]
    fn strict_format_implies_parse_tagged() {
        let raws = [
            "<think>a</think><answer>b</answer>",
            "<think>multi\nline</think>\n<answer>ok then</answer>",
        ];
        for raw in raws {
            assert_eq!(check_format(raw), 1);
            assert!(parse_tagged(raw).is_ok());
        }
    }

    #[test]
    fn parse_executor_answer_examples() {
        let a = parse_executor_answer(
            "['action': 'click', 'point': [520, 1130], 'input_text': 'no input text [default]']",
            None,
        )
        .unwrap();
        assert_eq!(a, Action::click(520, 1130));

        let a = parse_executor_answer(
            "['action': 'type', 'point': [0,0], 'input_text': 'Business']",
            None,
        )
        .unwrap();
        assert_eq!(a, Action::type_text("Business"));

        let a = parse_executor_answer("['action': 'scroll', 'input_text': 'down']", None).unwrap();
        assert_eq!(a, Action::scroll(Direction::Down));

        let a = parse_executor_answer(
            r#"{"action": "press home", "point": [0, 0], "input_text": "no input text [default]"}"#,
            None,
        )
        .unwrap();
        assert_eq!(a, Action::simple(ActionType::PressHome));
    }

    #[test]
    fn parse_executor_answer_errors() {
        assert_eq!(
            parse_executor_answer("['action': 'fly', 'point': [1,1]]", None),
            Err(IoError::UnknownAction("fly".to_string()))
        );
        assert_eq!(parse_executor_answer("free text", None), Err(IoError::MalformedRecord));
        assert!(matches!(
            parse_executor_answer("['action': 'click']", None),
            Err(IoError::MissingParam { .. })
        ));

        let screen = Observation {
            screen_id: "s0".into(),
            width: 1080,
            height: 2400,
            elements: vec![crate::model::ScreenElement {
                element_id: "e0".into(),
                label: "Ok".into(),
                bbox: BBox::new(0, 0, 100, 100),
            }],
            image_ref: None,
            is_terminal: false,
        };
        assert_eq!(
            parse_executor_answer("['action': 'click', 'point': [2000, 10]]", Some(&screen)),
            Err(IoError::PointOutOfBounds(2000, 10))
        );
    }

    #[test]
    fn render_prompt_examples() {
        let mut bindings = BTreeMap::new();
        bindings.insert("high_level_instruction", "Organize a business meeting");
        bindings.insert("current_state", "Task started.");
        let text = render_prompt(&PromptTemplate::builtin(Role::Coordinator), &bindings).unwrap();
        assert!(text.contains("GUI task coordinator Agent"));
        assert!(text.contains("Organize a business meeting"));
        assert!(text.contains("Task started."));

        let mut bindings = BTreeMap::new();
        bindings.insert("instruction", "Tap the New Meeting button");
        let text = render_prompt(&PromptTemplate::builtin(Role::Executor), &bindings).unwrap();
        assert!(text.contains("execute the command 'Tap the New Meeting button'"));

        let mut bindings = BTreeMap::new();
        bindings.insert("high_level_instruction", "q");
        bindings.insert("current_state", "m");
        let err = render_prompt(&PromptTemplate::builtin(Role::StateTracker), &bindings).unwrap_err();
        assert_eq!(err, IoError::UnboundPlaceholder("executor_output".to_string()));
    }

    fn arb_action() -> impl Strategy<Value = Action> {
        prop_oneof![
            Just(Action::simple(ActionType::Complete)),
            Just(Action::simple(ActionType::Close)),
            Just(Action::simple(ActionType::PressHome)),
            Just(Action::simple(ActionType::PressBack)),
            Just(Action::simple(ActionType::Enter)),
            (0i64..2000, 0i64..2000).prop_map(|(x, y)| Action::click(x, y)),
            (0i64..2000, 0i64..2000).prop_map(|(x, y)| Action::long_press(x, y)),
            (0i64..2000, 0i64..2000).prop_map(|(x, y)| Action::select(x, y)),
            "[A-Za-z0-9][A-Za-z0-9 ]{0,18}[A-Za-z0-9]".prop_map(Action::type_text),
            prop_oneof![
                Just(Direction::Up),
                Just(Direction::Down),
                Just(Direction::Left),
                Just(Direction::Right)
            ]
            .prop_map(Action::scroll),
        ]
    }

    proptest! {
        #[test]
        fn action_record_round_trip(a in arb_action()) {
            let parsed = parse_executor_answer(&serialize_action(&a), None).unwrap();
            prop_assert_eq!(parsed, a);
        }

        #[test]
        fn parsing_is_total(raw in ".*") {
            // any input yields an action or a typed error, never a panic
            let _ = parse_executor_answer(&raw, None);
            let _ = parse_tagged(&raw);
            let _ = check_format(&raw);
        }
    }
}
