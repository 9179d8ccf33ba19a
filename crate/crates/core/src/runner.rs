//! Experiment suites, the trial log, scoring and the binned analyses.
//!
//! Every model call becomes one [`TrialRecord`], appended to a JSONL log and
//! flushed as soon as it completes. Scoring and analysis are pure functions of
//! a log.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::deviation::{extract_features, DeviationError, FeatureVector, PerceivedDifficulty, PerturbationType};
use crate::exprcore::{Difficulty, EquationInstance};
use crate::modelio::{parse_answer, parse_evaluation, ModelClient, ModelError, ParseStatus, ParsedResponse};
use crate::perturb::{derive_seed, holdout_pool, perturb_dataset, DetectionSample, PerturbError};
use crate::promptkit::{
    build_math_prompt, build_trajectory_prompt, Intervention, MathTask, Prompt, PromptError, PromptOptions, PromptStyle,
    FEWSHOT_COUNT,
};
use crate::trajectory::{Annotations, ToolKind, TrajectoryRecord};
use crate::Verdict;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{source} ({completed} trial(s) completed before the failure{})", log_note(.log))]
    Model {
        #[source]
        source: ModelError,
        completed: usize,
        log: Option<PathBuf>,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Log { path: PathBuf, line: usize, message: String },
}

fn log_note(log: &Option<PathBuf>) -> String {
    match log {
        Some(p) => format!("; partial log at {}", p.display()),
        None => String::new(),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("no trials to score")]
    EmptyLog,
    #[error("incomplete no-tool profile for {model_id}/{sample_id}: missing {missing}")]
    IncompleteProfile {
        model_id: String,
        sample_id: String,
        missing: String,
    },
    #[error("no perceived-difficulty profile for model {0}")]
    MissingModelProfile(String),
    #[error("trial {0} has no matching detection sample")]
    UnknownSample(String),
    #[error(transparent)]
    Feature(#[from] DeviationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Answer,
    Detect,
    Trajectory,
}

/// Tool setting of an answer-suite trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCondition {
    NoToolDirect,
    NoToolCot,
    NoToolCotFs,
    CorrectTool,
    BrokenTool,
}

impl ToolCondition {
    pub const ALL: [ToolCondition; 5] = [
        ToolCondition::NoToolDirect,
        ToolCondition::NoToolCot,
        ToolCondition::NoToolCotFs,
        ToolCondition::CorrectTool,
        ToolCondition::BrokenTool,
    ];
    pub const NO_TOOL: [ToolCondition; 3] = [ToolCondition::NoToolDirect, ToolCondition::NoToolCot, ToolCondition::NoToolCotFs];

    pub fn uses_tool(self) -> bool {
        matches!(self, ToolCondition::CorrectTool | ToolCondition::BrokenTool)
    }

    /// Prompt style a no-tool condition is defined by.
    pub fn implied_style(self) -> Option<PromptStyle> {
        match self {
            ToolCondition::NoToolDirect => Some(PromptStyle::ZeroShot),
            ToolCondition::NoToolCot => Some(PromptStyle::Cot),
            ToolCondition::NoToolCotFs => Some(PromptStyle::CotFewShot),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ToolCondition::NoToolDirect => "Direct",
            ToolCondition::NoToolCot => "CoT",
            ToolCondition::NoToolCotFs => "CoT-FS",
            ToolCondition::CorrectTool => "Correct tool",
            ToolCondition::BrokenTool => "Broken tool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub intervention: Intervention,
    pub style: PromptStyle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolCondition>,
}

impl Condition {
    pub fn no_tool(tool: ToolCondition) -> Self {
        Self {
            intervention: Intervention::Oblivious,
            style: tool.implied_style().expect("no-tool condition"),
            tool: Some(tool),
        }
    }

    pub fn with_tool(tool: ToolCondition, intervention: Intervention, style: PromptStyle) -> Self {
        Self {
            intervention,
            style,
            tool: Some(tool),
        }
    }

    /// Detection and trajectory trials carry no tool condition.
    pub fn judged(intervention: Intervention, style: PromptStyle) -> Self {
        Self {
            intervention,
            style,
            tool: None,
        }
    }

    fn check_answer(&self) -> Result<ToolCondition, RunError> {
        let tool = self
            .tool
            .ok_or_else(|| RunError::Config("answer-suite conditions need a tool condition".into()))?;
        if let Some(style) = tool.implied_style() {
            if self.style != style || self.intervention != Intervention::Oblivious {
                return Err(RunError::Config(format!(
                    "{} runs with the oblivious {} prompt only",
                    tool.label(),
                    style.as_str()
                )));
            }
        }
        Ok(tool)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tool {
            Some(t) => write!(f, "{}/{}/{}", t.label(), self.intervention, self.style),
            None => write!(f, "{}/{}", self.intervention, self.style),
        }
    }
}

/// Every answer-suite condition: the three no-tool prompts plus correct and
/// broken tools under each intervention and style.
pub fn all_answer_conditions() -> Vec<Condition> {
    let mut out: Vec<Condition> = ToolCondition::NO_TOOL.into_iter().map(Condition::no_tool).collect();
    for tool in [ToolCondition::CorrectTool, ToolCondition::BrokenTool] {
        for style in PromptStyle::ALL {
            for iv in Intervention::ALL {
                out.push(Condition::with_tool(tool, iv, style));
            }
        }
    }
    out
}

/// Ground truth of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Answer(i64),
    Verdict(Verdict),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub suite: Suite,
    pub sample_id: String,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_kind: Option<ToolKind>,
    pub model_id: String,
    pub prompt_digest: String,
    pub parsed: ParsedResponse,
    pub gold: Gold,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Annotations>,
}

impl TrialRecord {
    /// Identity of the trial within a run, used when resuming.
    pub fn key(&self) -> TrialKey {
        (self.suite, self.sample_id.clone(), self.condition, self.model_id.clone())
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.parsed.evaluation
    }

    pub fn unparseable(&self) -> bool {
        self.parsed.parse_status == ParseStatus::Unparseable
    }
}

pub type TrialKey = (Suite, String, Condition, String);

fn is_correct(parsed: &ParsedResponse, gold: Gold) -> bool {
    match gold {
        Gold::Answer(n) => parsed.answer == Some(n),
        Gold::Verdict(v) => parsed.evaluation == Some(v),
    }
}

pub fn read_log(path: &Path) -> Result<Vec<TrialRecord>, RunError> {
    let file = File::open(path).map_err(|source| RunError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RunError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| RunError::Log {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes a whole log, one record per line.
pub fn write_log(path: &Path, records: &[TrialRecord]) -> Result<(), RunError> {
    let io = |source| RunError::Io { path: path.into(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("trial records serialize");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Append each finished trial here. Existing lines are kept, so one log
    /// can hold several suites and models.
    pub log_path: Option<PathBuf>,
    /// Skip trials already present in `log_path`.
    pub resume: bool,
    pub prompt: PromptOptions,
    pub fewshot_pool: Vec<DetectionSample>,
    /// Directory for run marker files; usually the response cache.
    pub marker_dir: Option<PathBuf>,
}

/// Few-shot exemplars disjoint from `dataset`, derived from the run seed.
pub fn default_fewshot_pool(seed: u64, dataset: &[EquationInstance]) -> Result<Vec<DetectionSample>, PerturbError> {
    holdout_pool(derive_seed(seed, 0xF5F5), dataset, FEWSHOT_COUNT)
}

struct Job {
    prompt: Prompt,
    suite: Suite,
    sample_id: String,
    condition: Condition,
    tool_kind: Option<ToolKind>,
    gold: Gold,
    annotations: Option<Annotations>,
}

/// Runs suites against one model.
pub struct Runner<'a> {
    client: &'a ModelClient,
    opts: RunOptions,
}

impl<'a> Runner<'a> {
    pub fn new(client: &'a ModelClient, opts: RunOptions) -> Self {
        Self { client, opts }
    }

    pub fn model_id(&self) -> &str {
        &self.client.config().model_id
    }

    /// One trial per (equation, condition). Broken-tool trials use outputs
    /// perturbed with `perturb_seed`.
    pub fn run_answer_suite(
        &self,
        dataset: &[EquationInstance],
        conditions: &[Condition],
        perturb_seed: Option<u64>,
    ) -> Result<Vec<TrialRecord>, RunError> {
        let tools: Vec<ToolCondition> = conditions.iter().map(Condition::check_answer).collect::<Result<_, _>>()?;
        let broken = if tools.contains(&ToolCondition::BrokenTool) {
            let seed = perturb_seed
                .ok_or_else(|| RunError::Config("the broken-tool condition needs a perturbation seed".into()))?;
            perturb_dataset(dataset, seed)?
        } else {
            Vec::new()
        };
        let mut jobs = Vec::new();
        for (i, eq) in dataset.iter().enumerate() {
            for (cond, tool) in conditions.iter().zip(&tools) {
                let output = match tool {
                    ToolCondition::CorrectTool => Some(eq.ground_truth),
                    ToolCondition::BrokenTool => Some(broken[i].perturbed),
                    _ => None,
                };
                let prompt = build_math_prompt(
                    eq,
                    output,
                    MathTask::Answer,
                    cond.intervention,
                    cond.style,
                    &self.opts.fewshot_pool,
                    &self.opts.prompt,
                )?;
                jobs.push(Job {
                    prompt,
                    suite: Suite::Answer,
                    sample_id: eq.id.clone(),
                    condition: *cond,
                    tool_kind: None,
                    gold: Gold::Answer(eq.ground_truth),
                    annotations: None,
                });
            }
        }
        self.execute(jobs)
    }

    /// One trial per (sample, intervention, style).
    pub fn run_detection_suite(
        &self,
        samples: &[DetectionSample],
        interventions: &[Intervention],
        styles: &[PromptStyle],
    ) -> Result<Vec<TrialRecord>, RunError> {
        let mut jobs = Vec::new();
        for s in samples {
            for &style in styles {
                for &iv in interventions {
                    let prompt = build_math_prompt(
                        &s.equation,
                        Some(s.tool_output),
                        MathTask::Detect,
                        iv,
                        style,
                        &self.opts.fewshot_pool,
                        &self.opts.prompt,
                    )?;
                    jobs.push(Job {
                        prompt,
                        suite: Suite::Detect,
                        sample_id: s.sample_id(),
                        condition: Condition::judged(iv, style),
                        tool_kind: None,
                        gold: Gold::Verdict(s.gold),
                        annotations: None,
                    });
                }
            }
        }
        self.execute(jobs)
    }

    /// One trial per (record, intervention, style); prompts carry the
    /// record's images.
    pub fn run_trajectory_suite(
        &self,
        records: &[TrajectoryRecord],
        interventions: &[Intervention],
        styles: &[PromptStyle],
    ) -> Result<Vec<TrialRecord>, RunError> {
        let mut jobs = Vec::new();
        for r in records {
            for &style in styles {
                for &iv in interventions {
                    let prompt = build_trajectory_prompt(r, iv, style, &self.opts.prompt)?;
                    jobs.push(Job {
                        prompt,
                        suite: Suite::Trajectory,
                        sample_id: r.id.clone(),
                        condition: Condition::judged(iv, style),
                        tool_kind: Some(r.tool_kind),
                        gold: Gold::Verdict(r.gold),
                        annotations: Some(r.annotations.clone()),
                    });
                }
            }
        }
        self.execute(jobs)
    }

    fn execute(&self, jobs: Vec<Job>) -> Result<Vec<TrialRecord>, RunError> {
        let model_id = self.model_id().to_string();
        let mut previous: HashMap<TrialKey, TrialRecord> = HashMap::new();
        if self.opts.resume {
            if let Some(path) = self.opts.log_path.as_ref().filter(|p| p.exists()) {
                for rec in read_log(path)? {
                    previous.insert(rec.key(), rec);
                }
            }
        }
        let writer = match &self.opts.log_path {
            Some(path) => {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .truncate(false)
                    .open(path)
                    .map_err(|source| RunError::Io { path: path.clone(), source })?;
                Some(Mutex::new(BufWriter::new(file)))
            }
            None => None,
        };
        let marker = self.marker_path();
        self.write_marker(marker.as_deref(), jobs.len(), false)?;

        let abort = AtomicBool::new(false);
        let done = AtomicUsize::new(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.client.config().concurrency_limit)
            .build()
            .map_err(|e| RunError::Config(format!("cannot start worker pool: {e}")))?;
        let results: Vec<Result<Option<TrialRecord>, RunError>> = pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    let key = (job.suite, job.sample_id.clone(), job.condition, model_id.clone());
                    if let Some(prev) = previous.get(&key) {
                        return Ok(Some(prev.clone()));
                    }
                    if abort.load(Ordering::Relaxed) {
                        return Ok(None);
                    }
                    let raw = match self.client.complete(&job.prompt) {
                        Ok(raw) => raw,
                        Err(source) => {
                            abort.store(true, Ordering::Relaxed);
                            return Err(RunError::Model {
                                source,
                                completed: 0,
                                log: self.opts.log_path.clone(),
                            });
                        }
                    };
                    let parsed = match job.gold {
                        Gold::Answer(_) => parse_answer(&raw),
                        Gold::Verdict(_) => parse_evaluation(&raw),
                    };
                    let rec = TrialRecord {
                        suite: job.suite,
                        sample_id: job.sample_id.clone(),
                        condition: job.condition,
                        tool_kind: job.tool_kind,
                        model_id: model_id.clone(),
                        prompt_digest: hex::encode(Sha256::digest(job.prompt.text.as_bytes())),
                        correct: is_correct(&parsed, job.gold),
                        parsed,
                        gold: job.gold,
                        annotations: job.annotations.clone(),
                    };
                    if let (Some(w), Some(path)) = (&writer, &self.opts.log_path) {
                        let mut w = w.lock().expect("log writer poisoned");
                        let io = |source| RunError::Io { path: path.clone(), source };
                        serde_json::to_writer(&mut *w, &rec).expect("trial records serialize");
                        w.write_all(b"\n").map_err(io)?;
                        w.flush().map_err(io)?;
                    }
                    done.fetch_add(1, Ordering::Relaxed);
                    Ok(Some(rec))
                })
                .collect()
        });
        let mut out = Vec::with_capacity(results.len());
        let mut first_err = None;
        for r in results {
            match r {
                Ok(Some(rec)) => out.push(rec),
                Ok(None) => {}
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(mut err) = first_err {
            if let RunError::Model { completed, .. } = &mut err {
                *completed = done.load(Ordering::Relaxed);
            }
            return Err(err);
        }
        self.write_marker(marker.as_deref(), out.len(), true)?;
        Ok(out)
    }

    fn marker_path(&self) -> Option<PathBuf> {
        let dir = self.opts.marker_dir.as_ref()?;
        let log = self.opts.log_path.as_ref()?;
        let id = format!("{}\n{}", self.model_id(), log.display());
        let digest = hex::encode(Sha256::digest(id.as_bytes()));
        Some(dir.join("runs").join(format!("{}.json", &digest[..16])))
    }

    fn write_marker(&self, path: Option<&Path>, trials: usize, complete: bool) -> Result<(), RunError> {
        let Some(path) = path else { return Ok(()) };
        let io = |source| RunError::Io { path: path.into(), source };
        fs::create_dir_all(path.parent().expect("marker has a parent")).map_err(io)?;
        let body = json!({
            "model_id": self.model_id(),
            "log": self.opts.log_path,
            "trials": trials,
            "complete": complete,
        });
        fs::write(path, serde_json::to_string_pretty(&body).expect("marker serializes")).map_err(io)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy of one (model, condition) cell. Fractions in [0, 1]; `delta` is
/// the difference to the model's best no-tool accuracy, for tool conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub model_id: String,
    pub condition: Condition,
    pub n: u64,
    pub correct: u64,
    pub unparseable: u64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerScores {
    pub cells: Vec<AccuracyCell>,
}

impl AnswerScores {
    pub fn get(&self, model_id: &str, condition: &Condition) -> Option<&AccuracyCell> {
        self.cells.iter().find(|c| c.model_id == model_id && c.condition == *condition)
    }

    pub fn models(&self) -> Vec<String> {
        unique_in_order(self.cells.iter().map(|c| c.model_id.clone()))
    }
}

fn unique_in_order(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items.filter(|m| seen.insert(m.clone())).collect()
}

/// Exact-match accuracy per (model, condition) over answer-suite trials.
pub fn score_answers(log: &[TrialRecord]) -> Result<AnswerScores, ScoreError> {
    let mut groups: BTreeMap<(String, Condition), (u64, u64, u64)> = BTreeMap::new();
    let mut order = Vec::new();
    for t in log.iter().filter(|t| t.suite == Suite::Answer) {
        order.push(t.model_id.clone());
        let e = groups.entry((t.model_id.clone(), t.condition)).or_default();
        e.0 += 1;
        e.1 += t.correct as u64;
        e.2 += t.unparseable() as u64;
    }
    if groups.is_empty() {
        return Err(ScoreError::EmptyLog);
    }
    let mut cells: Vec<AccuracyCell> = groups
        .into_iter()
        .map(|((model_id, condition), (n, correct, unparseable))| AccuracyCell {
            model_id,
            condition,
            n,
            correct,
            unparseable,
            accuracy: ratio(correct, n),
            delta: None,
        })
        .collect();
    let mut best: HashMap<String, f64> = HashMap::new();
    for c in cells.iter().filter(|c| c.condition.tool.is_some_and(|t| !t.uses_tool())) {
        let b = best.entry(c.model_id.clone()).or_insert(f64::MIN);
        *b = b.max(c.accuracy);
    }
    for c in cells.iter_mut().filter(|c| c.condition.tool.is_some_and(ToolCondition::uses_tool)) {
        c.delta = best.get(&c.model_id).map(|b| c.accuracy - b);
    }
    let models = unique_in_order(order.into_iter());
    cells.sort_by_key(|c| (models.iter().position(|m| *m == c.model_id), c.condition));
    Ok(AnswerScores { cells })
}

/// Rows are gold labels, columns the parsed verdict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub accept_as_accept: u64,
    pub accept_as_reject: u64,
    pub accept_unparseable: u64,
    pub reject_as_accept: u64,
    pub reject_as_reject: u64,
    pub reject_unparseable: u64,
}

impl Confusion {
    pub fn add(&mut self, gold: Verdict, predicted: Option<Verdict>) {
        let slot = match (gold, predicted) {
            (Verdict::Accept, Some(Verdict::Accept)) => &mut self.accept_as_accept,
            (Verdict::Accept, Some(Verdict::Reject)) => &mut self.accept_as_reject,
            (Verdict::Accept, None) => &mut self.accept_unparseable,
            (Verdict::Reject, Some(Verdict::Accept)) => &mut self.reject_as_accept,
            (Verdict::Reject, Some(Verdict::Reject)) => &mut self.reject_as_reject,
            (Verdict::Reject, None) => &mut self.reject_unparseable,
        };
        *slot += 1;
    }

    pub fn total(&self) -> u64 {
        self.gold_accept() + self.gold_reject()
    }

    pub fn gold_accept(&self) -> u64 {
        self.accept_as_accept + self.accept_as_reject + self.accept_unparseable
    }

    pub fn gold_reject(&self) -> u64 {
        self.reject_as_accept + self.reject_as_reject + self.reject_unparseable
    }
}

/// Precision, recall and F1 with zero for undefined ratios.
fn prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Detection metrics with Reject as the positive class. All values are
/// fractions in [0, 1]; unparseable replies count as wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub n: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean of the Reject and Accept F1 scores.
    pub macro_f1: f64,
    /// Share of gold-Accept samples labelled Reject.
    pub false_positive_rate: f64,
    pub unparseable_rate: f64,
    pub confusion: Confusion,
}

impl DetectionMetrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let n = c.total();
        let (precision, recall, f1) = prf(c.reject_as_reject, c.accept_as_reject, c.reject_as_accept + c.reject_unparseable);
        let (_, _, accept_f1) = prf(c.accept_as_accept, c.reject_as_accept, c.accept_as_reject + c.accept_unparseable);
        Self {
            n,
            accuracy: ratio(c.accept_as_accept + c.reject_as_reject, n),
            precision,
            recall,
            f1,
            macro_f1: (f1 + accept_f1) / 2.0,
            false_positive_rate: ratio(c.accept_as_reject, c.gold_accept()),
            unparseable_rate: ratio(c.accept_unparseable + c.reject_unparseable, n),
            confusion: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCell {
    pub model_id: String,
    pub suite: Suite,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_kind: Option<ToolKind>,
    pub intervention: Intervention,
    pub style: PromptStyle,
    pub metrics: DetectionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub cells: Vec<DetectionCell>,
}

impl DetectionScores {
    pub fn get(
        &self,
        model_id: &str,
        suite: Suite,
        tool_kind: Option<ToolKind>,
        iv: Intervention,
        style: PromptStyle,
    ) -> Option<&DetectionCell> {
        self.cells.iter().find(|c| {
            c.model_id == model_id && c.suite == suite && c.tool_kind == tool_kind && c.intervention == iv && c.style == style
        })
    }
}

/// Metrics per (model, suite, tool kind, intervention, style) over detection
/// and trajectory trials.
pub fn score_detection(log: &[TrialRecord]) -> Result<DetectionScores, ScoreError> {
    type Key = (usize, Suite, Option<ToolKind>, Intervention, PromptStyle);
    let mut models: Vec<String> = Vec::new();
    let mut groups: BTreeMap<Key, Confusion> = BTreeMap::new();
    for t in log {
        let Gold::Verdict(gold) = t.gold else { continue };
        if t.suite == Suite::Answer {
            continue;
        }
        let m = match models.iter().position(|m| *m == t.model_id) {
            Some(i) => i,
            None => {
                models.push(t.model_id.clone());
                models.len() - 1
            }
        };
        groups
            .entry((m, t.suite, t.tool_kind, t.condition.intervention, t.condition.style))
            .or_default()
            .add(gold, t.verdict());
    }
    if groups.is_empty() {
        return Err(ScoreError::EmptyLog);
    }
    Ok(DetectionScores {
        cells: groups
            .into_iter()
            .map(|((m, suite, tool_kind, intervention, style), c)| DetectionCell {
                model_id: models[m].clone(),
                suite,
                tool_kind,
                intervention,
                style,
                metrics: DetectionMetrics::from_confusion(c),
            })
            .collect(),
    })
}

/// Buckets each equation by how the model fared without a tool.
pub fn perceived_difficulty(log: &[TrialRecord], model_id: &str) -> Result<HashMap<String, PerceivedDifficulty>, ScoreError> {
    let mut seen: BTreeMap<&str, HashMap<ToolCondition, bool>> = BTreeMap::new();
    for t in log.iter().filter(|t| t.suite == Suite::Answer && t.model_id == model_id) {
        let entry = seen.entry(t.sample_id.as_str()).or_default();
        if let Some(tool) = t.condition.tool.filter(|c| !c.uses_tool()) {
            *entry.entry(tool).or_insert(false) |= t.correct;
        }
    }
    if seen.is_empty() {
        return Err(ScoreError::EmptyLog);
    }
    let mut out = HashMap::new();
    for (id, results) in seen {
        let get = |c: ToolCondition| {
            results.get(&c).copied().ok_or_else(|| ScoreError::IncompleteProfile {
                model_id: model_id.into(),
                sample_id: id.into(),
                missing: c.label().into(),
            })
        };
        let (direct, cot, fs) = (get(ToolCondition::NoToolDirect)?, get(ToolCondition::NoToolCot)?, get(ToolCondition::NoToolCotFs)?);
        let bin = if direct {
            PerceivedDifficulty::DirectOk
        } else if cot || fs {
            PerceivedDifficulty::NeededCotOrFs
        } else {
            PerceivedDifficulty::AlwaysWrong
        };
        out.insert(id.to_string(), bin);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    NumericDiff,
    SymbolicDiff,
    PerturbationType,
    EquationMagnitude,
    AnswerMagnitude,
    PerceivedDifficulty,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::NumericDiff,
        Feature::SymbolicDiff,
        Feature::PerturbationType,
        Feature::EquationMagnitude,
        Feature::AnswerMagnitude,
        Feature::PerceivedDifficulty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::NumericDiff => "numeric_diff",
            Feature::SymbolicDiff => "symbolic_diff",
            Feature::PerturbationType => "perturbation_type",
            Feature::EquationMagnitude => "equation_magnitude",
            Feature::AnswerMagnitude => "answer_magnitude",
            Feature::PerceivedDifficulty => "perceived_difficulty",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Feature::NumericDiff => "Numeric difference (log10(1+|d|))",
            Feature::SymbolicDiff => "Symbolic difference (edit distance)",
            Feature::PerturbationType => "Perturbation type",
            Feature::EquationMagnitude => "Magnitude in equation",
            Feature::AnswerMagnitude => "Answer magnitude (log10|x|)",
            Feature::PerceivedDifficulty => "Perceived difficulty",
        }
    }
}

/// One histogram bin: `hits` of `count` samples met the criterion (rejected,
/// or judged correctly); `rate` is `None` for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub label: String,
    pub count: u64,
    pub hits: u64,
    pub rate: Option<f64>,
}

fn bins_from(labels: Vec<String>, counts: &HashMap<String, (u64, u64)>) -> Vec<Bin> {
    labels
        .into_iter()
        .map(|label| {
            let (count, hits) = counts.get(&label).copied().unwrap_or((0, 0));
            Bin {
                rate: (count > 0).then(|| hits as f64 / count as f64),
                label,
                count,
                hits,
            }
        })
        .collect()
}

fn int_range_labels(values: impl Iterator<Item = u64>) -> Vec<String> {
    let values: Vec<u64> = values.collect();
    match (values.iter().min(), values.iter().max()) {
        (Some(&lo), Some(&hi)) => (lo..=hi).map(|v| v.to_string()).collect(),
        _ => Vec::new(),
    }
}

/// Decade bin of a numeric difference: `floor(log10(1 + d))`.
pub fn numeric_bin(diff: u64) -> u64 {
    diff.saturating_add(1).ilog10() as u64
}

fn feature_label(f: Feature, v: &FeatureVector) -> String {
    match f {
        Feature::NumericDiff => numeric_bin(v.numeric_diff).to_string(),
        Feature::SymbolicDiff => v.symbolic_diff.to_string(),
        Feature::PerturbationType => v.perturbation_type.label().into(),
        Feature::EquationMagnitude => v.equation_band.as_str().into(),
        Feature::AnswerMagnitude => v.answer_magnitude.to_string(),
        Feature::PerceivedDifficulty => v.perceived_difficulty.label().into(),
    }
}

fn feature_labels(f: Feature, vs: &[FeatureVector]) -> Vec<String> {
    use crate::deviation::AnswerMagnitude;
    match f {
        Feature::NumericDiff => int_range_labels(vs.iter().map(|v| numeric_bin(v.numeric_diff))),
        Feature::SymbolicDiff => int_range_labels(vs.iter().map(|v| v.symbolic_diff as u64)),
        Feature::PerturbationType => PerturbationType::ALL.iter().map(|t| t.label().to_string()).collect(),
        Feature::EquationMagnitude => Difficulty::ALL.iter().map(|d| d.as_str().to_string()).collect(),
        Feature::AnswerMagnitude => {
            let mut labels = vec![AnswerMagnitude::Zero.to_string()];
            labels.extend(int_range_labels(vs.iter().filter_map(|v| match v.answer_magnitude {
                AnswerMagnitude::Zero => None,
                AnswerMagnitude::Decade(d) => Some(d as u64),
            })));
            labels
        }
        Feature::PerceivedDifficulty => PerceivedDifficulty::ALL.iter().map(|p| p.label().to_string()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    pub feature: Feature,
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionGroup {
    pub model_id: String,
    pub intervention: Intervention,
    pub style: PromptStyle,
    pub features: Vec<FeatureBins>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionAnalysis {
    pub groups: Vec<RejectionGroup>,
}

/// Rejection rate on perturbed (gold Reject) detection trials, binned by the
/// six features, per (model, intervention, style). `profiles` maps model ids
/// to perceived-difficulty profiles.
pub fn rejection_analysis(
    log: &[TrialRecord],
    samples: &[DetectionSample],
    profiles: &HashMap<String, HashMap<String, PerceivedDifficulty>>,
) -> Result<RejectionAnalysis, ScoreError> {
    let by_id: HashMap<String, &DetectionSample> = samples.iter().map(|s| (s.sample_id(), s)).collect();
    type Key = (usize, Intervention, PromptStyle);
    let mut models: Vec<String> = Vec::new();
    let mut groups: BTreeMap<Key, Vec<(FeatureVector, bool)>> = BTreeMap::new();
    for t in log
        .iter()
        .filter(|t| t.suite == Suite::Detect && t.gold == Gold::Verdict(Verdict::Reject))
    {
        let sample = by_id.get(&t.sample_id).ok_or_else(|| ScoreError::UnknownSample(t.sample_id.clone()))?;
        let profile = profiles
            .get(&t.model_id)
            .ok_or_else(|| ScoreError::MissingModelProfile(t.model_id.clone()))?;
        let features = extract_features(sample, profile).map_err(|e| match e {
            DeviationError::MissingProfile(id) => ScoreError::IncompleteProfile {
                model_id: t.model_id.clone(),
                sample_id: id,
                missing: "no-tool trials".into(),
            },
            other => ScoreError::Feature(other),
        })?;
        let m = match models.iter().position(|m| *m == t.model_id) {
            Some(i) => i,
            None => {
                models.push(t.model_id.clone());
                models.len() - 1
            }
        };
        groups
            .entry((m, t.condition.intervention, t.condition.style))
            .or_default()
            .push((features, t.verdict() == Some(Verdict::Reject)));
    }
    if groups.is_empty() {
        return Err(ScoreError::EmptyLog);
    }
    let groups = groups
        .into_iter()
        .map(|((m, intervention, style), rows)| {
            let vectors: Vec<FeatureVector> = rows.iter().map(|(v, _)| *v).collect();
            let features = Feature::ALL
                .into_iter()
                .map(|f| {
                    let mut counts: HashMap<String, (u64, u64)> = HashMap::new();
                    for (v, rejected) in &rows {
                        let e = counts.entry(feature_label(f, v)).or_default();
                        e.0 += 1;
                        e.1 += *rejected as u64;
                    }
                    FeatureBins {
                        feature: f,
                        bins: bins_from(feature_labels(f, &vectors), &counts),
                    }
                })
                .collect();
            RejectionGroup {
                model_id: models[m].clone(),
                intervention,
                style,
                features,
            }
        })
        .collect();
    Ok(RejectionAnalysis { groups })
}

/// Accuracy bins over one annotation, with how many trials carried it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedAccuracy {
    pub bins: Vec<Bin>,
    pub annotated: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub model_id: String,
    pub tool_kind: ToolKind,
    pub intervention: Intervention,
    pub style: PromptStyle,
    pub by_action_type: BinnedAccuracy,
    pub by_mistakes_all: BinnedAccuracy,
    pub by_mistakes_task_relevant: BinnedAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAnalysis {
    pub groups: Vec<TrajectoryGroup>,
}

fn binned<F>(trials: &[&TrialRecord], get: F, numeric: bool) -> BinnedAccuracy
where
    F: Fn(&Annotations) -> Option<String>,
{
    let mut counts: HashMap<String, (u64, u64)> = HashMap::new();
    let mut annotated = 0;
    for t in trials {
        if let Some(label) = t.annotations.as_ref().and_then(&get) {
            annotated += 1;
            let e = counts.entry(label).or_default();
            e.0 += 1;
            e.1 += t.correct as u64;
        }
    }
    let labels = if numeric {
        int_range_labels(counts.keys().filter_map(|k| k.parse().ok()))
    } else {
        counts.keys().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    };
    BinnedAccuracy {
        bins: bins_from(labels, &counts),
        annotated,
        total: trials.len() as u64,
    }
}

/// Accuracy per planner action type and per detector mistake count, per
/// (model, tool kind, intervention, style).
pub fn trajectory_analysis(log: &[TrialRecord]) -> Result<TrajectoryAnalysis, ScoreError> {
    type Key = (usize, ToolKind, Intervention, PromptStyle);
    let mut models: Vec<String> = Vec::new();
    let mut groups: BTreeMap<Key, Vec<&TrialRecord>> = BTreeMap::new();
    for t in log.iter().filter(|t| t.suite == Suite::Trajectory) {
        let Some(kind) = t.tool_kind else { continue };
        let m = match models.iter().position(|m| *m == t.model_id) {
            Some(i) => i,
            None => {
                models.push(t.model_id.clone());
                models.len() - 1
            }
        };
        groups
            .entry((m, kind, t.condition.intervention, t.condition.style))
            .or_default()
            .push(t);
    }
    if groups.is_empty() {
        return Err(ScoreError::EmptyLog);
    }
    Ok(TrajectoryAnalysis {
        groups: groups
            .into_iter()
            .map(|((m, tool_kind, intervention, style), trials)| TrajectoryGroup {
                model_id: models[m].clone(),
                tool_kind,
                intervention,
                style,
                by_action_type: binned(&trials, |a| a.action_type.clone(), false),
                by_mistakes_all: binned(&trials, |a| a.n_mistakes_all.map(|n| n.to_string()), true),
                by_mistakes_task_relevant: binned(&trials, |a| a.n_mistakes_task_relevant.map(|n| n.to_string()), true),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprcore::generate_dataset;
    use crate::modelio::{ModelConfig, ScriptedModel};
    use crate::perturb::build_detection_set;

    fn trial(model: &str, id: &str, tool: ToolCondition, correct: bool) -> TrialRecord {
        let cond = match tool.implied_style() {
            Some(_) => Condition::no_tool(tool),
            None => Condition::with_tool(tool, Intervention::Oblivious, PromptStyle::ZeroShot),
        };
        TrialRecord {
            suite: Suite::Answer,
            sample_id: id.into(),
            condition: cond,
            tool_kind: None,
            model_id: model.into(),
            prompt_digest: String::new(),
            parsed: parse_answer(if correct { "Answer: 1" } else { "Answer: 2" }),
            gold: Gold::Answer(1),
            correct,
            annotations: None,
        }
    }

    fn client(m: ScriptedModel) -> ModelClient {
        ModelClient::new(ModelConfig::scripted(m), None).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let mut log = Vec::new();
        for i in 0..100 {
            log.push(trial("m", &format!("e{i}"), ToolCondition::NoToolDirect, i < 61));
            log.push(trial("m", &format!("e{i}"), ToolCondition::NoToolCot, i < 80));
            log.push(trial("m", &format!("e{i}"), ToolCondition::BrokenTool, i < 20));
        }
        let s = score_answers(&log).unwrap();
        let direct = s.get("m", &Condition::no_tool(ToolCondition::NoToolDirect)).unwrap();
        assert_eq!(direct.accuracy, 0.61);
        assert_eq!(direct.delta, None);
        let broken = s
            .get("m", &Condition::with_tool(ToolCondition::BrokenTool, Intervention::Oblivious, PromptStyle::ZeroShot))
            .unwrap();
        assert!((broken.delta.unwrap() - (0.20 - 0.80)).abs() < 1e-12);
        assert_eq!(score_answers(&[]), Err(ScoreError::EmptyLog));
    }

    #[test]
    fn f1_arithmetic() {
        let mut c = Confusion::default();
        for _ in 0..300 {
            c.add(Verdict::Reject, Some(Verdict::Reject));
            c.add(Verdict::Accept, Some(Verdict::Reject));
        }
        let m = DetectionMetrics::from_confusion(c);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((m.precision, m.recall, m.accuracy, m.false_positive_rate), (0.5, 1.0, 0.5, 1.0));

        let mut c = Confusion::default();
        c.add(Verdict::Reject, Some(Verdict::Reject));
        c.add(Verdict::Accept, Some(Verdict::Accept));
        let m = DetectionMetrics::from_confusion(c);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1, m.macro_f1), (1.0, 1.0, 1.0, 1.0, 1.0));

        let mut c = Confusion::default();
        c.add(Verdict::Reject, None);
        c.add(Verdict::Accept, Some(Verdict::Accept));
        let m = DetectionMetrics::from_confusion(c);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.unparseable_rate, 0.5);
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn perceived_difficulty_bins() {
        let log = vec![
            trial("m", "a", ToolCondition::NoToolDirect, true),
            trial("m", "a", ToolCondition::NoToolCot, false),
            trial("m", "a", ToolCondition::NoToolCotFs, false),
            trial("m", "b", ToolCondition::NoToolDirect, false),
            trial("m", "b", ToolCondition::NoToolCot, true),
            trial("m", "b", ToolCondition::NoToolCotFs, false),
            trial("m", "c", ToolCondition::NoToolDirect, false),
            trial("m", "c", ToolCondition::NoToolCot, false),
            trial("m", "c", ToolCondition::NoToolCotFs, false),
            trial("m", "c", ToolCondition::BrokenTool, true),
        ];
        let p = perceived_difficulty(&log, "m").unwrap();
        assert_eq!(p["a"], PerceivedDifficulty::DirectOk);
        assert_eq!(p["b"], PerceivedDifficulty::NeededCotOrFs);
        assert_eq!(p["c"], PerceivedDifficulty::AlwaysWrong);
        let mut partial = log.clone();
        partial.retain(|t| !(t.sample_id == "b" && t.condition.tool == Some(ToolCondition::NoToolCotFs)));
        assert!(matches!(perceived_difficulty(&partial, "m"), Err(ScoreError::IncompleteProfile { .. })));
        assert_eq!(perceived_difficulty(&log, "other"), Err(ScoreError::EmptyLog));
    }

    #[test]
    fn scripted_suites_end_to_end() {
        let dataset = generate_dataset(7, 10).unwrap();
        let pool = default_fewshot_pool(7, &dataset).unwrap();
        let opts = RunOptions {
            fewshot_pool: pool,
            ..RunOptions::default()
        };
        let echo = client(ScriptedModel::EchoTool);
        let runner = Runner::new(&echo, opts.clone());
        let conds = all_answer_conditions();
        let log = runner.run_answer_suite(&dataset, &conds, Some(3)).unwrap();
        assert_eq!(log.len(), dataset.len() * conds.len());
        let s = score_answers(&log).unwrap();
        for c in &s.cells {
            let expected = match c.condition.tool.unwrap() {
                ToolCondition::CorrectTool => 1.0,
                _ => 0.0,
            };
            assert_eq!(c.accuracy, expected, "{}", c.condition);
        }

        let oracle = client(ScriptedModel::Oracle);
        let log = Runner::new(&oracle, opts.clone()).run_answer_suite(&dataset, &conds, Some(3)).unwrap();
        assert!(score_answers(&log).unwrap().cells.iter().all(|c| c.accuracy == 1.0));

        let set = build_detection_set(&dataset, 3).unwrap();
        for (model, acc, f1) in [
            (ScriptedModel::AlwaysAccept, 0.5, 0.0),
            (ScriptedModel::AlwaysReject, 0.5, 2.0 / 3.0),
            (ScriptedModel::Oracle, 1.0, 1.0),
        ] {
            let c = client(model);
            let log = Runner::new(&c, opts.clone())
                .run_detection_suite(&set, &Intervention::ALL, &PromptStyle::ALL)
                .unwrap();
            assert_eq!(log.len(), set.len() * 12);
            for cell in score_detection(&log).unwrap().cells {
                assert_eq!(cell.metrics.accuracy, acc);
                assert!((cell.metrics.f1 - f1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn broken_tool_needs_seed_and_bad_conditions_rejected() {
        let dataset = generate_dataset(1, 2).unwrap();
        let c = client(ScriptedModel::Oracle);
        let r = Runner::new(&c, RunOptions::default());
        let broken = Condition::with_tool(ToolCondition::BrokenTool, Intervention::Oblivious, PromptStyle::ZeroShot);
        assert!(matches!(r.run_answer_suite(&dataset, &[broken], None), Err(RunError::Config(_))));
        let odd = Condition::with_tool(ToolCondition::NoToolDirect, Intervention::Checklist, PromptStyle::ZeroShot);
        assert!(r.run_answer_suite(&dataset, &[odd], None).is_err());
        let fs = Condition::no_tool(ToolCondition::NoToolCotFs);
        assert!(matches!(r.run_answer_suite(&dataset, &[fs], None), Err(RunError::Prompt(_))));
    }

    #[test]
    fn log_is_flushed_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("trials.jsonl");
        let dataset = generate_dataset(2, 3).unwrap();
        let c = client(ScriptedModel::Oracle);
        let opts = RunOptions {
            log_path: Some(log_path.clone()),
            marker_dir: Some(dir.path().join("cache")),
            ..RunOptions::default()
        };
        let conds = [Condition::no_tool(ToolCondition::NoToolDirect)];
        let first = Runner::new(&c, opts.clone()).run_answer_suite(&dataset, &conds, None).unwrap();
        let on_disk = read_log(&log_path).unwrap();
        assert_eq!(on_disk.len(), first.len());

        // drop the last line, then resume: only the missing trial is redone
        let text = fs::read_to_string(&log_path).unwrap();
        let kept: Vec<&str> = text.lines().take(first.len() - 1).collect();
        fs::write(&log_path, kept.join("\n") + "\n").unwrap();
        let resumed = Runner::new(
            &c,
            RunOptions {
                resume: true,
                ..opts.clone()
            },
        )
        .run_answer_suite(&dataset, &conds, None)
        .unwrap();
        assert_eq!(resumed, first);
        assert_eq!(read_log(&log_path).unwrap().len(), first.len());

        let markers: Vec<_> = fs::read_dir(dir.path().join("cache/runs")).unwrap().collect();
        assert_eq!(markers.len(), 1);
        let marker: serde_json::Value = serde_json::from_slice(&fs::read(markers[0].as_ref().unwrap().path()).unwrap()).unwrap();
        assert_eq!(marker["complete"], true);
    }

    #[test]
    fn transport_failure_keeps_partial_log() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let mut cfg = ModelConfig::new("remote", url.parse().unwrap());
        cfg.max_retries = 0;
        cfg.backoff_base_ms = 1;
        let c = ModelClient::new(cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("t.jsonl");
        let r = Runner::new(
            &c,
            RunOptions {
                log_path: Some(log_path.clone()),
                ..RunOptions::default()
            },
        );
        let err = r
            .run_answer_suite(&generate_dataset(1, 1).unwrap(), &[Condition::no_tool(ToolCondition::NoToolDirect)], None)
            .unwrap_err();
        assert!(matches!(err, RunError::Model { .. }));
        assert!(err.to_string().contains("partial log"));
        assert!(log_path.exists());
    }

    #[test]
    fn numeric_bins_are_decades() {
        assert_eq!(numeric_bin(0), 0);
        assert_eq!(numeric_bin(8), 0);
        assert_eq!(numeric_bin(9), 1);
        assert_eq!(numeric_bin(98), 1);
        assert_eq!(numeric_bin(99), 2);
        assert_eq!(numeric_bin(u64::MAX), 19);
    }

    #[test]
    fn trial_records_round_trip() {
        let t = trial("m", "e1", ToolCondition::BrokenTool, false);
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"gold\":1"));
        let back: TrialRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }
}
