//! Prompt rendering for every task, intervention and prompting style.
//!
//! Prompt skeletons live in `templates/` as plain text with `{{name}}`
//! placeholders. Intervention inserts and the default trajectory vocabularies
//! are kept in sectioned text files in the same directory. Rendering is a pure
//! function of its inputs.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deviation::confidence_score;
use crate::exprcore::{EquationInstance, Expression, Op, Shape};
use crate::perturb::DetectionSample;
use crate::trajectory::{Attempt, Subgoal, ToolKind, TrajectoryRecord};
use crate::Verdict;

const MATH_TEMPLATE: &str = include_str!("../templates/math.txt");
const PLANNER_TEMPLATE: &str = include_str!("../templates/planner.txt");
const DETECTOR_TEMPLATE: &str = include_str!("../templates/detector.txt");
const INTERVENTIONS: &str = include_str!("../templates/interventions.txt");
const VOCAB: &str = include_str!("../templates/alfred_vocab.txt");

/// Number of solved exemplars in a few-shot prompt.
pub const FEWSHOT_COUNT: usize = 5;

/// Attempts considered by [`planner_confidence`].
pub const CONFIDENCE_WINDOW: usize = 5;

/// Attempts listed under "Previous action attempts".
pub const ATTEMPTS_SHOWN: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("invalid prompt configuration: {0}")]
    Config(String),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intervention {
    Oblivious,
    Disclaimer,
    Confidence,
    Checklist,
}

impl Intervention {
    pub const ALL: [Intervention; 4] = [
        Intervention::Oblivious,
        Intervention::Disclaimer,
        Intervention::Confidence,
        Intervention::Checklist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intervention::Oblivious => "oblivious",
            Intervention::Disclaimer => "disclaimer",
            Intervention::Confidence => "confidence",
            Intervention::Checklist => "checklist",
        }
    }

    /// Column label used in result tables.
    pub fn short_label(self) -> &'static str {
        match self {
            Intervention::Oblivious => "Obl.",
            Intervention::Disclaimer => "Disc.",
            Intervention::Confidence => "Conf.",
            Intervention::Checklist => "Check.",
        }
    }
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Intervention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Intervention::ALL
            .into_iter()
            .find(|iv| iv.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown intervention {s:?} (expected oblivious, disclaimer, confidence or checklist)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    ZeroShot,
    Cot,
    CotFewShot,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 3] = [PromptStyle::ZeroShot, PromptStyle::Cot, PromptStyle::CotFewShot];

    pub fn fewshot_count(self) -> usize {
        match self {
            PromptStyle::CotFewShot => FEWSHOT_COUNT,
            _ => 0,
        }
    }

    pub fn has_thought(self) -> bool {
        self != PromptStyle::ZeroShot
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::ZeroShot => "zero_shot",
            PromptStyle::Cot => "cot",
            PromptStyle::CotFewShot => "cot_few_shot",
        }
    }

    pub fn short_label(self) -> &'static str {
        match self {
            PromptStyle::ZeroShot => "ZST",
            PromptStyle::Cot => "CoT",
            PromptStyle::CotFewShot => "CoT+FST",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptStyle::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown style {s:?} (expected zero_shot, cot or cot_few_shot)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MathTask {
    Answer,
    Detect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTask {
    MathAnswer,
    MathDetect,
    Planner,
    Detector,
}

/// Ground truth carried alongside a prompt so scripted models can answer
/// without parsing the text. Never rendered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptHints {
    pub tool_output: Option<String>,
    pub answer: Option<i64>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub task: PromptTask,
    pub intervention: Intervention,
    pub style: PromptStyle,
    pub sample_id: String,
    pub hints: ScriptHints,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub attachments: Vec<PathBuf>,
    pub meta: PromptMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    /// Prepend the disclaimer to the checklist insert.
    pub checklist_disclaimer: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            checklist_disclaimer: true,
        }
    }
}

/// Substitutes every `{{name}}` in `template`. Unknown placeholders and
/// unused values are both errors.
pub fn fill(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut used = vec![false; values.len()];
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::Template("unterminated placeholder".into()))?;
        let name = &after[..end];
        let idx = values
            .iter()
            .position(|(k, _)| *k == name)
            .ok_or_else(|| PromptError::Template(format!("no value for placeholder {{{{{name}}}}}")))?;
        used[idx] = true;
        out.push_str(values[idx].1);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(PromptError::Template(format!("value {:?} matches no placeholder", values[i].0)));
    }
    Ok(out)
}

/// Parses `[key]` sectioned text. Text before the first header is ignored;
/// surrounding blank lines of each body are trimmed.
fn parse_sections(text: &str) -> HashMap<String, String> {
    let mut out = HashMap::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') && trimmed.ends_with(']') && !trimmed.contains(' ') {
            if let Some((key, body)) = current.take() {
                out.insert(key, body.join("\n").trim().to_string());
            }
            current = Some((trimmed[1..trimmed.len() - 1].to_string(), Vec::new()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some((key, body)) = current {
        out.insert(key, body.join("\n").trim().to_string());
    }
    out
}

fn inserts() -> &'static HashMap<String, String> {
    static CELL: OnceLock<HashMap<String, String>> = OnceLock::new();
    CELL.get_or_init(|| parse_sections(INTERVENTIONS))
}

fn insert(key: &str) -> &'static str {
    inserts()
        .get(key)
        .map(String::as_str)
        .unwrap_or_else(|| panic!("templates/interventions.txt lacks [{key}]"))
}

fn vocab(key: &str) -> Vec<String> {
    static CELL: OnceLock<HashMap<String, String>> = OnceLock::new();
    CELL.get_or_init(|| parse_sections(VOCAB))
        .get(key)
        .unwrap_or_else(|| panic!("templates/alfred_vocab.txt lacks [{key}]"))
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// Default planner action vocabulary.
pub fn default_possible_actions() -> Vec<String> {
    vocab("possible_actions")
}

pub fn default_obj_categories() -> Vec<String> {
    vocab("obj_categories")
}

pub fn default_receptacles() -> Vec<String> {
    vocab("receptacles")
}

/// The intervention insert for `family` (`math`, `planner`, `detector`),
/// followed by a blank line, or empty for Oblivious.
fn intervention_block(family: &str, iv: Intervention, opts: &PromptOptions) -> String {
    let disclaimer = insert(&format!("{family}.disclaimer"));
    let block = match iv {
        Intervention::Oblivious => return String::new(),
        Intervention::Disclaimer => disclaimer.to_string(),
        Intervention::Confidence => format!("{disclaimer}\n{}", insert(&format!("{family}.confidence"))),
        Intervention::Checklist => {
            let checklist = insert(&format!("{family}.checklist"));
            if opts.checklist_disclaimer {
                format!("{disclaimer}\n\n{checklist}")
            } else {
                checklist.to_string()
            }
        }
    };
    format!("{block}\n\n")
}

/// Two-decimal confidence used for calculator outputs.
fn math_confidence(truth: i64, output: i64) -> String {
    format!("{:.2}", confidence_score(truth, output))
}

fn operand(v: i64) -> String {
    if v < 0 {
        format!("({v})")
    } else {
        v.to_string()
    }
}

fn step(lhs: i64, op: Op, rhs: i64) -> (String, i64) {
    let value = op.apply(lhs, rhs);
    (format!("{} {} {} = {value}.", operand(lhs), op.symbol(), operand(rhs)), value)
}

/// Worked evaluation in the order a person would do it, e.g.
/// `3 + 4 = 7. 7 * 2 = 14.`
pub fn solution_steps(expr: &Expression) -> String {
    let [a, b, c] = expr.operands();
    let [op0, op1] = expr.operators();
    match expr.shape() {
        Shape::LeftNested => {
            let (first, inner) = step(a, op0, b);
            let (second, _) = step(inner, op1, c);
            format!("{first} {second}")
        }
        Shape::RightNested => {
            let (first, inner) = step(b, op1, c);
            let (second, _) = step(a, op0, inner);
            format!("{first} {second}")
        }
    }
}

fn math_task_line(task: MathTask, rendered: &str) -> String {
    match task {
        MathTask::Answer => format!("What is the answer to: {rendered}?"),
        MathTask::Detect => format!(
            "You are given the equation: {rendered}. The task is to evaluate the result of the equation provided by the tool."
        ),
    }
}

fn math_format(task: MathTask, style: PromptStyle) -> String {
    let mut lines = Vec::new();
    if style.has_thought() {
        lines.push("Thought: Your reasoning process");
    }
    let (field, rule) = match task {
        MathTask::Answer => ("Answer:", "The answer is a single integer. Do not provide any reasoning in the answer."),
        MathTask::Detect => (
            "Evaluation: Accept/Reject",
            "The evaluation is a single word: Accept if the tool output is the correct result of the equation, otherwise Reject. Do not provide any reasoning in the evaluation.",
        ),
    };
    lines.push(field);
    let mut text = format!("{}\n\n{rule}", lines.join("\n"));
    if style.has_thought() {
        text.push_str(" Provide your reasoning in the thought section.");
    }
    text
}

fn math_example(n: usize, ex: &DetectionSample, task: MathTask, with_tool: bool, iv: Intervention) -> String {
    let eq = &ex.equation;
    let truth = eq.ground_truth;
    let mut lines = vec![format!("Example {n}:"), math_task_line(task, &eq.rendered)];
    let mut thought = format!("Thought: {}", solution_steps(&eq.expression));
    if with_tool {
        let conf = if iv == Intervention::Confidence {
            format!(", {}", math_confidence(truth, ex.tool_output))
        } else {
            String::new()
        };
        lines.push(format!("Tool output: {}{conf}", ex.tool_output));
        if ex.tool_output == truth {
            thought.push_str(&format!(" The tool output {} is correct.", ex.tool_output));
        } else {
            thought.push_str(&format!(" The tool output {} is incorrect.", ex.tool_output));
        }
    }
    lines.push(thought);
    lines.push(match task {
        MathTask::Answer => format!("Answer: {truth}"),
        MathTask::Detect => format!("Evaluation: {}", ex.gold),
    });
    lines.join("\n")
}

/// Renders a calculator prompt. `tool_output` is `None` for the no-tool
/// conditions, which only admit the Oblivious intervention. Few-shot
/// exemplars are the first [`FEWSHOT_COUNT`] entries of `pool`.
pub fn build_math_prompt(
    equation: &EquationInstance,
    tool_output: Option<i64>,
    task: MathTask,
    iv: Intervention,
    style: PromptStyle,
    pool: &[DetectionSample],
    opts: &PromptOptions,
) -> Result<Prompt, PromptError> {
    let truth = equation.ground_truth;
    let rendered = &equation.rendered;
    if tool_output.is_none() {
        if task == MathTask::Detect {
            return Err(PromptError::Config("the detection task needs a tool output".into()));
        }
        if iv != Intervention::Oblivious {
            return Err(PromptError::Config(format!("intervention {iv} needs a tool output")));
        }
    }
    let examples = if style == PromptStyle::CotFewShot {
        if pool.is_empty() {
            return Err(PromptError::Config("few-shot prompting needs a non-empty exemplar pool".into()));
        }
        let chosen = &pool[..pool.len().min(FEWSHOT_COUNT)];
        if let Some(clash) = chosen.iter().find(|ex| ex.equation.rendered == *rendered) {
            return Err(PromptError::Config(format!(
                "exemplar {} repeats the evaluated equation {rendered}",
                clash.equation.id
            )));
        }
        let body: Vec<String> = chosen
            .iter()
            .enumerate()
            .map(|(i, ex)| math_example(i + 1, ex, task, tool_output.is_some(), iv))
            .collect();
        format!("# Examples\n{}\n\n", body.join("\n\n"))
    } else {
        String::new()
    };

    let tool = match tool_output {
        Some(out) => {
            let conf = if iv == Intervention::Confidence {
                format!(", {}", math_confidence(truth, out))
            } else {
                String::new()
            };
            format!("Refer to the tool output below.\n# Calculator API\nresult = {rendered}\nresult\n{out}{conf}\n\n")
        }
        None => String::new(),
    };
    let text = fill(
        MATH_TEMPLATE,
        &[
            ("task", &math_task_line(task, rendered)),
            ("tool", &tool),
            ("intervention", &intervention_block("math", iv, opts)),
            ("format", &math_format(task, style)),
            ("examples", &examples),
        ],
    )?;

    let verdict = tool_output.map(|out| if out == truth { Verdict::Accept } else { Verdict::Reject });
    let sample_id = match (task, verdict) {
        (MathTask::Detect, Some(v)) => format!("{}:{}", equation.id, v.as_str()),
        _ => equation.id.clone(),
    };
    Ok(Prompt {
        text,
        attachments: Vec::new(),
        meta: PromptMeta {
            task: match task {
                MathTask::Answer => PromptTask::MathAnswer,
                MathTask::Detect => PromptTask::MathDetect,
            },
            intervention: iv,
            style,
            sample_id,
            hints: ScriptHints {
                tool_output: tool_output.map(|o| o.to_string()),
                answer: Some(truth),
                verdict,
            },
        },
    })
}

/// Detection prompt for a calculator sample.
pub fn build_detection_prompt(
    sample: &DetectionSample,
    iv: Intervention,
    style: PromptStyle,
    pool: &[DetectionSample],
    opts: &PromptOptions,
) -> Result<Prompt, PromptError> {
    build_math_prompt(&sample.equation, Some(sample.tool_output), MathTask::Detect, iv, style, pool, opts)
}

/// Success rate over the last [`CONFIDENCE_WINDOW`] attempts; 1.0 when there
/// are none.
pub fn planner_confidence(attempts: &[Attempt]) -> f64 {
    let window = &attempts[attempts.len().saturating_sub(CONFIDENCE_WINDOW)..];
    if window.is_empty() {
        return 1.0;
    }
    window.iter().filter(|a| a.success).count() as f64 / window.len() as f64
}

/// At most two decimals, trailing zeros dropped but one kept: `0.8`, `1.0`,
/// `0.33`.
pub fn format_confidence(value: f64) -> String {
    let mut s = format!("{value:.2}");
    while s.ends_with('0') && !s.ends_with(".0") {
        s.pop();
    }
    s
}

fn py_str(s: &str) -> String {
    format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
}

fn py_dq(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn py_list<S: AsRef<str>>(items: &[S]) -> String {
    let parts: Vec<String> = items.iter().map(|s| py_str(s.as_ref())).collect();
    format!("[{}]", parts.join(", "))
}

fn py_set(items: &[String]) -> String {
    if items.is_empty() {
        return "set()".into();
    }
    let parts: Vec<String> = items.iter().map(|s| py_str(s)).collect();
    format!("{{{}}}", parts.join(", "))
}

fn py_subgoal(g: &Subgoal) -> String {
    format!("({}, {})", py_str(&g.0), py_str(&g.1))
}

fn py_subgoals(goals: &[Subgoal]) -> String {
    let parts: Vec<String> = goals.iter().map(py_subgoal).collect();
    format!("[{}]", parts.join(", "))
}

fn attempts_line(attempts: &[Attempt]) -> String {
    let shown = &attempts[attempts.len().saturating_sub(ATTEMPTS_SHOWN)..];
    let parts: Vec<String> = shown
        .iter()
        .map(|a| format!("({}, {})", a.action, if a.success { "Success" } else { "Fail" }))
        .collect();
    format!("[{}]", parts.join(", "))
}

fn evaluation_format(thought: Option<&str>, tool_line: Option<&str>) -> String {
    let mut lines = Vec::new();
    if let Some(t) = tool_line {
        lines.push(t.to_string());
    }
    if let Some(t) = thought {
        lines.push(format!("Thought: {t}"));
    }
    lines.push("Evaluation: Accept/Reject".into());
    let mut text = format!(
        "{}\n\nThe evaluation is a single word indicating whether you accept or reject the tool output. Do not provide any reasoning in the evaluation.",
        lines.join("\n")
    );
    if thought.is_some() {
        text.push_str(" Provide your reasoning in the thought section.");
    }
    text
}

fn check_trajectory_style(style: PromptStyle) -> Result<(), PromptError> {
    if style == PromptStyle::CotFewShot {
        return Err(PromptError::Config("trajectory prompts support zero_shot and cot only".into()));
    }
    Ok(())
}

fn trajectory_meta(record: &TrajectoryRecord, task: PromptTask, iv: Intervention, style: PromptStyle, tool_output: String) -> PromptMeta {
    PromptMeta {
        task,
        intervention: iv,
        style,
        sample_id: record.id.clone(),
        hints: ScriptHints {
            tool_output: Some(tool_output),
            answer: None,
            verdict: Some(record.gold),
        },
    }
}

/// Renders the action-planner evaluation prompt for `record`.
pub fn build_planner_prompt(
    record: &TrajectoryRecord,
    iv: Intervention,
    style: PromptStyle,
    opts: &PromptOptions,
) -> Result<Prompt, PromptError> {
    if record.tool_kind != ToolKind::ActionPlanner {
        return Err(PromptError::Config(format!("record {} is not an action planner record", record.id)));
    }
    check_trajectory_style(style)?;
    let action = record
        .tool_output
        .action()
        .ok_or_else(|| PromptError::Config(format!("record {} has no planner action", record.id)))?;
    let state = &record.task_state;
    let current = state
        .current_subgoal
        .as_ref()
        .map(|g| py_dq(&format!("{} {}", g.0, g.1)))
        .unwrap_or_else(|| "None".into());
    let task_state = [
        format!("    'task_description': {},", py_dq(&state.task_description)),
        format!("    'completed_subgoals': {},", py_subgoals(&state.completed_subgoals)),
        format!("    'current_subgoal': {current},"),
        format!("    'num_steps_taken': {}", state.num_steps_taken),
    ]
    .join("\n");
    let actions = record.possible_actions.clone().unwrap_or_else(default_possible_actions);
    let observed = if record.observed_state.is_empty() {
        String::new()
    } else {
        format!("{}\n", record.observed_state.trim_end())
    };
    let output = if iv == Intervention::Confidence {
        format!("{action}, {}", format_confidence(planner_confidence(&record.prev_attempts)))
    } else {
        action.to_string()
    };
    let thought = style.has_thought().then_some("Your reasoning process");
    let text = fill(
        PLANNER_TEMPLATE,
        &[
            ("intervention", &intervention_block("planner", iv, opts)),
            ("possible_actions", &py_list(&actions)),
            ("task_state", &task_state),
            ("observed_state", &observed),
            ("prev_attempts", &attempts_line(&record.prev_attempts)),
            ("output", &output),
            ("format", &evaluation_format(thought, Some("Tool output: [ACTION]"))),
        ],
    )?;
    Ok(Prompt {
        text,
        attachments: record.images.clone(),
        meta: trajectory_meta(record, PromptTask::Planner, iv, style, action.to_string()),
    })
}

/// Renders the object-detector evaluation prompt for `record`. Confidence
/// mode needs raw scores on the record.
pub fn build_detector_prompt(
    record: &TrajectoryRecord,
    iv: Intervention,
    style: PromptStyle,
    opts: &PromptOptions,
) -> Result<Prompt, PromptError> {
    if record.tool_kind != ToolKind::ObjectDetector {
        return Err(PromptError::Config(format!("record {} is not an object detector record", record.id)));
    }
    check_trajectory_style(style)?;
    let state = &record.task_state;
    let mut lines = vec![
        format!("    'task_description': {},", py_dq(&state.task_description)),
        format!("    'completed_subgoals': {},", py_subgoals(&state.completed_subgoals)),
    ];
    if let Some(g) = &state.current_subgoal {
        lines.push(format!("    'current_subgoal': {},", py_subgoal(g)));
    }
    lines.push(format!(
        "    'remaining_subgoals': {},",
        py_subgoals(state.remaining_subgoals.as_deref().unwrap_or(&[]))
    ));
    lines.push(format!("    'num_steps_taken': {}", state.num_steps_taken));

    let (detected, filtered) = record
        .tool_output
        .detection_sets()
        .ok_or_else(|| PromptError::Config(format!("record {} has no detector output", record.id)))?;
    let nested = format!(
        "{{\n    'detected': {},\n    'filtered': {}\n}}",
        py_set(&detected),
        py_set(&filtered)
    );
    let output = if iv == Intervention::Confidence {
        let scores = record.tool_output.scores().ok_or_else(|| {
            PromptError::Config(format!("record {} lacks detector scores needed for the confidence prompt", record.id))
        })?;
        let parts: Vec<String> = scores.iter().map(|(k, v)| format!("{}: {v:.2}", py_str(k))).collect();
        format!("{{{}}}", parts.join(", "))
    } else {
        nested.clone()
    };
    let categories = record.obj_categories.clone().unwrap_or_else(default_obj_categories);
    let receptacles = record.receptacles.clone().unwrap_or_else(default_receptacles);
    let thought = style
        .has_thought()
        .then_some("Your reasoning process on the provided information (image, task_state and tool_output)");
    let text = fill(
        DETECTOR_TEMPLATE,
        &[
            ("intervention", &intervention_block("detector", iv, opts)),
            ("obj_categories", &py_list(&categories)),
            ("receptacles", &py_list(&receptacles)),
            ("task_state", &lines.join("\n")),
            ("output", &output),
            ("format", &evaluation_format(thought, None)),
        ],
    )?;
    Ok(Prompt {
        text,
        attachments: record.images.clone(),
        meta: trajectory_meta(record, PromptTask::Detector, iv, style, nested),
    })
}

/// Dispatches on the record's tool kind.
pub fn build_trajectory_prompt(
    record: &TrajectoryRecord,
    iv: Intervention,
    style: PromptStyle,
    opts: &PromptOptions,
) -> Result<Prompt, PromptError> {
    match record.tool_kind {
        ToolKind::ActionPlanner => build_planner_prompt(record, iv, style, opts),
        ToolKind::ObjectDetector => build_detector_prompt(record, iv, style, opts),
    }
}
