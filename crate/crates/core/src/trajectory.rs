//! Embodied-agent evaluation records: one tool call (action planner or object
//! detector) captured from an agent run, with its gold Accept/Reject label.
//!
//! Records are read from JSONL. Relative image paths resolve against the
//! directory holding the JSONL file.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Verdict;

/// Detector confidence (0-100) below which a detection is filtered out.
pub const DETECTION_THRESHOLD: f64 = 60.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Invalid { path: PathBuf, line: usize, message: String },
    #[error("record {record}: image {path} not found")]
    MissingImage { record: String, path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    ActionPlanner,
    ObjectDetector,
}

impl ToolKind {
    pub fn label(self) -> &'static str {
        match self {
            ToolKind::ActionPlanner => "Action Planner",
            ToolKind::ObjectDetector => "Object Detector",
        }
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// `(action, object)` pair, serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgoal(pub String, pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskState {
    pub task_description: String,
    #[serde(default)]
    pub completed_subgoals: Vec<Subgoal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_subgoal: Option<Subgoal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_subgoals: Option<Vec<Subgoal>>,
    pub num_steps_taken: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attempt {
    pub action: String,
    pub success: bool,
}

/// What the tool returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolOutput {
    /// Planner's next action, e.g. `Pickup(Pillow)`.
    Action { action: String },
    /// Detector output split by the confidence threshold, optionally with the
    /// raw scores that produced the split.
    Detection {
        detected: Vec<String>,
        filtered: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scores: Option<IndexMap<String, f64>>,
    },
    /// Raw detector scores (0-100) only.
    Scores { scores: IndexMap<String, f64> },
}

impl ToolOutput {
    /// `(detected, filtered)` for detector outputs, deriving the split from
    /// raw scores when needed.
    pub fn detection_sets(&self) -> Option<(Vec<String>, Vec<String>)> {
        match self {
            ToolOutput::Action { .. } => None,
            ToolOutput::Detection { detected, filtered, .. } => Some((detected.clone(), filtered.clone())),
            ToolOutput::Scores { scores } => {
                let (kept, dropped): (Vec<_>, Vec<_>) = scores.iter().partition(|(_, s)| **s >= DETECTION_THRESHOLD);
                Some((
                    kept.into_iter().map(|(k, _)| k.clone()).collect(),
                    dropped.into_iter().map(|(k, _)| k.clone()).collect(),
                ))
            }
        }
    }

    pub fn scores(&self) -> Option<&IndexMap<String, f64>> {
        match self {
            ToolOutput::Action { .. } => None,
            ToolOutput::Detection { scores, .. } => scores.as_ref(),
            ToolOutput::Scores { scores } => Some(scores),
        }
    }

    pub fn action(&self) -> Option<&str> {
        match self {
            ToolOutput::Action { action } => Some(action),
            _ => None,
        }
    }
}

/// Labels used only by the binned analyses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_mistakes_all: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_mistakes_task_relevant: Option<u32>,
}

impl Annotations {
    fn is_empty(&self) -> bool {
        *self == Annotations::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub id: String,
    pub tool_kind: ToolKind,
    pub task_state: TaskState,
    /// Free-text scene description shown to the planner.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub observed_state: String,
    /// Oldest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prev_attempts: Vec<Attempt>,
    pub tool_output: ToolOutput,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<PathBuf>,
    pub gold: Verdict,
    #[serde(default, skip_serializing_if = "Annotations::is_empty")]
    pub annotations: Annotations,
    /// Overrides for the tool docstring lists; ALFRED defaults otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub possible_actions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj_categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receptacles: Option<Vec<String>>,
}

impl TrajectoryRecord {
    /// Checks that the record carries what its tool kind needs.
    pub fn check(&self) -> Result<(), String> {
        match self.tool_kind {
            ToolKind::ActionPlanner => {
                if self.tool_output.action().is_none() {
                    return Err("action_planner records need an {\"action\": ...} tool_output".into());
                }
                if self.task_state.current_subgoal.is_none() {
                    return Err("action_planner records need task_state.current_subgoal".into());
                }
            }
            ToolKind::ObjectDetector => {
                if self.tool_output.detection_sets().is_none() {
                    return Err("object_detector records need detected/filtered sets or scores".into());
                }
            }
        }
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Schema-checks every line; returns one error per bad line.
pub fn validate_file(path: &Path) -> Result<usize, Vec<IngestError>> {
    let lines = read_lines(path).map_err(|e| vec![e])?;
    let mut errors = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line, text) in &lines {
        let invalid = |message: String| IngestError::Invalid {
            path: path.to_path_buf(),
            line: *line,
            message,
        };
        match serde_json::from_str::<TrajectoryRecord>(text) {
            Ok(record) => {
                if let Err(message) = record.check() {
                    errors.push(invalid(message));
                } else if !seen.insert(record.id.clone()) {
                    errors.push(invalid(format!("duplicate id {}", record.id)));
                }
            }
            Err(e) => errors.push(invalid(e.to_string())),
        }
    }
    if errors.is_empty() {
        Ok(lines.len())
    } else {
        Err(errors)
    }
}

/// Loads records, resolving image paths against the file's directory and
/// requiring every referenced image to exist.
pub fn load_records(path: &Path) -> Result<Vec<TrajectoryRecord>, IngestError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let invalid = |message: String| IngestError::Invalid {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut record: TrajectoryRecord = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        record.check().map_err(invalid)?;
        for image in &mut record.images {
            if image.is_relative() {
                *image = base.join(&*image);
            }
            if !image.is_file() {
                return Err(IngestError::MissingImage {
                    record: record.id.clone(),
                    path: image.clone(),
                });
            }
        }
        out.push(record);
    }
    Ok(out)
}
