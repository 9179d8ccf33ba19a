//! Result tables, bar charts and the exported artifact bundle.
//!
//! Scores are fractions in [0, 1]; every rendering shows percentages with one
//! decimal. Output bytes depend only on the inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::promptkit::{Intervention, PromptStyle};
use crate::runner::{
    AnswerScores, BinnedAccuracy, Condition, DetectionScores, Feature, RejectionAnalysis, Suite, ToolCondition,
    TrajectoryAnalysis,
};
use crate::trajectory::ToolKind;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no scores to report")]
    EmptyLog,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Markdown => "md",
            TableFormat::Csv => "csv",
        }
    }
}

/// One table cell: a fraction and, for tool conditions, its gap to the best
/// no-tool score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    pub delta: Option<f64>,
}

impl Cell {
    fn of(value: Option<f64>) -> Self {
        Self { value, delta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGroup {
    /// Empty for ungrouped columns.
    pub label: String,
    pub columns: Vec<String>,
    /// Whether cells in this group carry deltas.
    pub with_delta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub keys: Vec<String>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub key_columns: Vec<String>,
    pub groups: Vec<ColumnGroup>,
    pub rows: Vec<Row>,
}

/// Percentage with one decimal; never prints a negative zero.
pub fn pct(v: f64) -> String {
    let r = (v * 1000.0).round() / 10.0;
    format!("{:.1}", if r == 0.0 { 0.0 } else { r })
}

fn signed_pct(v: f64) -> String {
    let s = pct(v);
    if s.starts_with('-') {
        s
    } else {
        format!("+{s}")
    }
}

impl Table {
    fn value_columns(&self) -> Vec<(String, bool)> {
        self.groups
            .iter()
            .flat_map(|g| {
                g.columns.iter().map(move |c| {
                    let name = if g.label.is_empty() { c.clone() } else { format!("{} {}", g.label, c) };
                    (name, g.with_delta)
                })
            })
            .collect()
    }

    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Markdown => self.to_markdown(),
            TableFormat::Csv => self.to_csv(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let cols = self.value_columns();
        let mut out = format!("### {}\n\n", self.title);
        let header: Vec<&str> = self
            .key_columns
            .iter()
            .map(String::as_str)
            .chain(cols.iter().map(|(c, _)| c.as_str()))
            .collect();
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let align: Vec<&str> = self
            .key_columns
            .iter()
            .map(|_| ":---")
            .chain(cols.iter().map(|_| "---:"))
            .collect();
        let _ = writeln!(out, "| {} |", align.join(" | "));
        for row in &self.rows {
            let mut cells: Vec<String> = row.keys.clone();
            for (cell, (_, with_delta)) in row.cells.iter().zip(&cols) {
                cells.push(match (cell.value, cell.delta) {
                    (None, _) => "-".into(),
                    (Some(v), Some(d)) if *with_delta => format!("{} ({})", pct(v), signed_pct(d)),
                    (Some(v), _) => pct(v),
                });
            }
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }

    /// Deltas get their own `<column> delta` column; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let cols = self.value_columns();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.key_columns.clone();
        for (c, with_delta) in &cols {
            header.push(c.clone());
            if *with_delta {
                header.push(format!("{c} delta"));
            }
        }
        w.write_record(&header).expect("in-memory csv");
        for row in &self.rows {
            let mut rec = row.keys.clone();
            for (cell, (_, with_delta)) in row.cells.iter().zip(&cols) {
                rec.push(cell.value.map(pct).unwrap_or_default());
                if *with_delta {
                    rec.push(cell.delta.map(signed_pct).unwrap_or_default());
                }
            }
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Everything the tables are built from; absent parts skip their tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionScores>,
}

fn grid_groups(styles: &[PromptStyle]) -> Vec<ColumnGroup> {
    styles
        .iter()
        .map(|s| ColumnGroup {
            label: s.short_label().into(),
            columns: Intervention::ALL.iter().map(|i| i.short_label().to_string()).collect(),
            with_delta: false,
        })
        .collect()
}

fn grid_cells(styles: &[PromptStyle], get: impl Fn(Intervention, PromptStyle) -> Option<f64>) -> Vec<Cell> {
    styles
        .iter()
        .flat_map(|&s| Intervention::ALL.into_iter().map(move |i| (i, s)))
        .map(|(i, s)| Cell::of(get(i, s)))
        .collect()
}

fn models_in_order<'a>(ids: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for id in ids {
        if !out.contains(id) {
            out.push(id.clone());
        }
    }
    out
}

/// Answer accuracy with a broken tool: models by style and intervention.
pub fn broken_tool_table(scores: &AnswerScores) -> Table {
    let styles = PromptStyle::ALL;
    let rows = scores
        .models()
        .into_iter()
        .map(|m| Row {
            cells: grid_cells(&styles, |i, s| {
                scores
                    .get(&m, &Condition::with_tool(ToolCondition::BrokenTool, i, s))
                    .map(|c| c.accuracy)
            }),
            keys: vec![m],
        })
        .collect();
    Table {
        name: "broken_tool_accuracy".into(),
        title: "Answer accuracy (%) with a broken tool".into(),
        key_columns: vec!["Model".into()],
        groups: grid_groups(&styles),
        rows,
    }
}

/// Zero-shot and CoT always; few-shot only when scored.
fn judged_styles(scores: &DetectionScores, suite: Suite) -> Vec<PromptStyle> {
    let has_fs = scores
        .cells
        .iter()
        .any(|c| c.suite == suite && c.style == PromptStyle::CotFewShot);
    let mut styles = vec![PromptStyle::ZeroShot, PromptStyle::Cot];
    if has_fs {
        styles.push(PromptStyle::CotFewShot);
    }
    styles
}

/// Accuracy at telling correct from perturbed calculator outputs.
pub fn detection_table(scores: &DetectionScores) -> Option<Table> {
    let cells: Vec<_> = scores.cells.iter().filter(|c| c.suite == Suite::Detect).collect();
    if cells.is_empty() {
        return None;
    }
    let styles = judged_styles(scores, Suite::Detect);
    let rows = models_in_order(cells.iter().map(|c| &c.model_id))
        .into_iter()
        .map(|m| Row {
            cells: grid_cells(&styles, |i, s| scores.get(&m, Suite::Detect, None, i, s).map(|c| c.metrics.accuracy)),
            keys: vec![m],
        })
        .collect();
    Some(Table {
        name: "detection_accuracy".into(),
        title: "Broken-tool detection accuracy (%)".into(),
        key_columns: vec!["Model".into()],
        groups: grid_groups(&styles),
        rows,
    })
}

/// Reject-class F1 on trajectory records, one row per (tool, model).
pub fn trajectory_table(scores: &DetectionScores) -> Option<Table> {
    let cells: Vec<_> = scores.cells.iter().filter(|c| c.suite == Suite::Trajectory).collect();
    if cells.is_empty() {
        return None;
    }
    let styles = judged_styles(scores, Suite::Trajectory);
    let models = models_in_order(cells.iter().map(|c| &c.model_id));
    let mut rows = Vec::new();
    for kind in [ToolKind::ActionPlanner, ToolKind::ObjectDetector] {
        for m in &models {
            if !cells.iter().any(|c| c.model_id == *m && c.tool_kind == Some(kind)) {
                continue;
            }
            rows.push(Row {
                keys: vec![kind.label().into(), m.clone()],
                cells: grid_cells(&styles, |i, s| {
                    scores.get(m, Suite::Trajectory, Some(kind), i, s).map(|c| c.metrics.f1)
                }),
            });
        }
    }
    Some(Table {
        name: "trajectory_f1".into(),
        title: "Trajectory error detection F1 (%)".into(),
        key_columns: vec!["Tool".into(), "Model".into()],
        groups: grid_groups(&styles),
        rows,
    })
}

/// No-tool baselines next to the oblivious zero-shot tool conditions, with
/// deltas to the best baseline.
pub fn tool_comparison_table(scores: &AnswerScores) -> Table {
    let conds: Vec<Condition> = ToolCondition::ALL
        .into_iter()
        .map(|t| match t.implied_style() {
            Some(_) => Condition::no_tool(t),
            None => Condition::with_tool(t, Intervention::Oblivious, PromptStyle::ZeroShot),
        })
        .collect();
    let rows = scores
        .models()
        .into_iter()
        .map(|m| Row {
            cells: conds
                .iter()
                .map(|c| match scores.get(&m, c) {
                    Some(cell) => Cell {
                        value: Some(cell.accuracy),
                        delta: cell.delta,
                    },
                    None => Cell::default(),
                })
                .collect(),
            keys: vec![m],
        })
        .collect();
    Table {
        name: "tool_vs_no_tool".into(),
        title: "Answer accuracy (%) without a tool, with a correct tool and with a broken tool".into(),
        key_columns: vec!["Model".into()],
        groups: vec![
            ColumnGroup {
                label: String::new(),
                columns: ToolCondition::NO_TOOL.iter().map(|t| t.label().to_string()).collect(),
                with_delta: false,
            },
            ColumnGroup {
                label: String::new(),
                columns: vec![ToolCondition::CorrectTool.label().into(), ToolCondition::BrokenTool.label().into()],
                with_delta: true,
            },
        ],
        rows,
    }
}

/// Every detection metric in long form, one row per scored cell.
pub fn detection_metrics_table(scores: &DetectionScores) -> Table {
    let columns = ["Accuracy", "Precision", "Recall", "F1", "Macro F1", "FPR", "Unparseable"];
    Table {
        name: "detection_metrics".into(),
        title: "Detection metrics (%), Reject as the positive class".into(),
        key_columns: ["Model", "Suite", "Tool", "Prompt", "Intervention"].map(String::from).to_vec(),
        groups: vec![ColumnGroup {
            label: String::new(),
            columns: columns.map(String::from).to_vec(),
            with_delta: false,
        }],
        rows: scores
            .cells
            .iter()
            .map(|c| {
                let m = &c.metrics;
                Row {
                    keys: vec![
                        c.model_id.clone(),
                        match c.suite {
                            Suite::Answer => "answer",
                            Suite::Detect => "detect",
                            Suite::Trajectory => "trajectory",
                        }
                        .into(),
                        c.tool_kind.map(|k| k.label().to_string()).unwrap_or_else(|| "Calculator".into()),
                        c.style.short_label().into(),
                        c.intervention.short_label().into(),
                    ],
                    cells: [m.accuracy, m.precision, m.recall, m.f1, m.macro_f1, m.false_positive_rate, m.unparseable_rate]
                        .map(|v| Cell::of(Some(v)))
                        .to_vec(),
                }
            })
            .collect(),
    }
}

/// All tables the scores support.
pub fn build_tables(scores: &Scores) -> Result<Vec<Table>, ReportError> {
    let mut tables = Vec::new();
    if let Some(a) = scores.answer.as_ref().filter(|a| !a.cells.is_empty()) {
        tables.push(broken_tool_table(a));
        tables.push(tool_comparison_table(a));
    }
    if let Some(d) = scores.detection.as_ref().filter(|d| !d.cells.is_empty()) {
        tables.extend(detection_table(d));
        tables.extend(trajectory_table(d));
        tables.push(detection_metrics_table(d));
    }
    if tables.is_empty() {
        return Err(ReportError::EmptyLog);
    }
    Ok(tables)
}

/// Rendered table files as (relative path, contents).
pub fn emit_tables(scores: &Scores, format: TableFormat) -> Result<Vec<(String, String)>, ReportError> {
    Ok(build_tables(scores)?
        .iter()
        .map(|t| (format!("tables/{}.{}", t.name, format.extension()), t.render(format)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    /// (rate, count) per category.
    pub values: Vec<(Option<f64>, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarChart {
    pub name: String,
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];
const PLOT_H: f64 = 240.0;
const BAR_W: f64 = 14.0;
const GROUP_GAP: f64 = 18.0;
const LEFT: f64 = 60.0;
const TOP: f64 = 50.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl BarChart {
    /// Grouped bars on a fixed [0, 1] axis; every bar is labelled with its
    /// sample count.
    pub fn to_svg(&self) -> String {
        let n_series = self.series.len().max(1) as f64;
        let group_w = n_series * BAR_W + GROUP_GAP;
        let plot_w = (self.categories.len().max(1) as f64) * group_w;
        let legend_h = 16.0 * self.series.len() as f64;
        let width = LEFT + plot_w + 20.0;
        let height = TOP + PLOT_H + 50.0 + legend_h;
        let base = TOP + PLOT_H;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            width / 2.0,
            esc(&self.title)
        );
        for k in 0..=4 {
            let v = k as f64 / 4.0;
            let y = base - v * PLOT_H;
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
                LEFT + plot_w
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0, y + 4.0);
        }
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            base - PLOT_H / 2.0,
            base - PLOT_H / 2.0,
            esc(&self.y_label)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.1}" y1="{TOP:.1}" x2="{LEFT:.1}" y2="{base:.1}" stroke="#333333"/>"##
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="#333333"/>"##,
            LEFT + plot_w
        );
        for (ci, cat) in self.categories.iter().enumerate() {
            let gx = LEFT + ci as f64 * group_w + GROUP_GAP / 2.0;
            for (si, series) in self.series.iter().enumerate() {
                let (rate, count) = series.values.get(ci).copied().unwrap_or((None, 0));
                let x = gx + si as f64 * BAR_W;
                let h = rate.unwrap_or(0.0).clamp(0.0, 1.0) * PLOT_H;
                if rate.is_some() {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                        base - h,
                        BAR_W - 2.0,
                        PALETTE[si % PALETTE.len()]
                    );
                }
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{count}</text>"#,
                    x + (BAR_W - 2.0) / 2.0,
                    base - h - 3.0
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + n_series * BAR_W / 2.0,
                base + 16.0,
                esc(cat)
            );
        }
        for (si, series) in self.series.iter().enumerate() {
            let y = base + 34.0 + si as f64 * 16.0;
            let _ = writeln!(
                s,
                r#"<rect x="{LEFT:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#,
                y - 9.0,
                PALETTE[si % PALETTE.len()]
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, LEFT + 16.0, esc(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Category order for merged series: non-numeric labels first, then a gap-free
/// integer range.
fn merge_categories<'a>(labels: impl Iterator<Item = &'a String>, numeric: bool) -> Vec<String> {
    let mut named: Vec<String> = Vec::new();
    let mut ints: Vec<i64> = Vec::new();
    for l in labels {
        match l.parse::<i64>() {
            Ok(v) if numeric => ints.push(v),
            _ => {
                if !named.contains(l) {
                    named.push(l.clone());
                }
            }
        }
    }
    if let (Some(lo), Some(hi)) = (ints.iter().min(), ints.iter().max()) {
        named.extend((*lo..=*hi).map(|v| v.to_string()));
    }
    named
}

fn series_for(label: String, categories: &[String], bins: &[crate::runner::Bin]) -> Series {
    Series {
        label,
        values: categories
            .iter()
            .map(|c| match bins.iter().find(|b| b.label == *c) {
                Some(b) => (b.rate, b.count),
                None => (None, 0),
            })
            .collect(),
    }
}

/// One chart per feature, one series per (model, prompt, intervention).
pub fn rejection_charts(analysis: &RejectionAnalysis) -> Vec<BarChart> {
    Feature::ALL
        .into_iter()
        .map(|f| {
            let numeric = matches!(f, Feature::NumericDiff | Feature::SymbolicDiff | Feature::AnswerMagnitude);
            let bins_of = |g: &crate::runner::RejectionGroup| {
                g.features
                    .iter()
                    .find(|fb| fb.feature == f)
                    .map(|fb| fb.bins.clone())
                    .unwrap_or_default()
            };
            let all: Vec<Vec<crate::runner::Bin>> = analysis.groups.iter().map(bins_of).collect();
            let categories = merge_categories(all.iter().flatten().map(|b| &b.label), numeric);
            let series = analysis
                .groups
                .iter()
                .zip(&all)
                .map(|(g, bins)| {
                    let label = format!("{} {} {}", g.model_id, g.style.short_label(), g.intervention.short_label());
                    series_for(label, &categories, bins)
                })
                .collect();
            BarChart {
                name: format!("rejection_{}", f.as_str()),
                title: format!("Rejection rate by {}", f.title().to_lowercase()),
                y_label: "Rejection rate".into(),
                categories,
                series,
            }
        })
        .collect()
}

/// Accuracy by action type, and by mistake counts, per tool kind.
pub fn trajectory_charts(analysis: &TrajectoryAnalysis) -> Vec<BarChart> {
    type Pick = fn(&crate::runner::TrajectoryGroup) -> &BinnedAccuracy;
    let dims: [(&str, &str, bool, Pick); 3] = [
        ("action_type", "action type", false, |g| &g.by_action_type),
        ("mistakes_all", "number of detector mistakes", true, |g| &g.by_mistakes_all),
        (
            "mistakes_task_relevant",
            "number of task-relevant detector mistakes",
            true,
            |g| &g.by_mistakes_task_relevant,
        ),
    ];
    let mut charts = Vec::new();
    for kind in [ToolKind::ActionPlanner, ToolKind::ObjectDetector] {
        let groups: Vec<_> = analysis.groups.iter().filter(|g| g.tool_kind == kind).collect();
        for (key, what, numeric, pick) in dims {
            if groups.iter().all(|g| pick(g).annotated == 0) {
                continue;
            }
            let categories = merge_categories(groups.iter().flat_map(|g| pick(g).bins.iter().map(|b| &b.label)), numeric);
            let series = groups
                .iter()
                .map(|g| {
                    let label = format!("{} {} {}", g.model_id, g.style.short_label(), g.intervention.short_label());
                    series_for(label, &categories, &pick(g).bins)
                })
                .collect();
            let tool = match kind {
                ToolKind::ActionPlanner => "planner",
                ToolKind::ObjectDetector => "detector",
            };
            charts.push(BarChart {
                name: format!("trajectory_{tool}_{key}"),
                title: format!("{} accuracy by {what}", kind.label()),
                y_label: "Accuracy".into(),
                categories,
                series,
            });
        }
    }
    charts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_seed: Option<u64>,
    pub model_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    /// Supplied by the caller so reruns can be byte-identical.
    pub timestamp: String,
    /// Trial logs and other files the report was built from.
    pub inputs: Vec<InputDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub tables: Vec<Table>,
    pub charts: Vec<BarChart>,
    pub provenance: Provenance,
}

impl ReportBundle {
    pub fn new(
        scores: &Scores,
        rejection: Option<&RejectionAnalysis>,
        trajectory: Option<&TrajectoryAnalysis>,
        provenance: Provenance,
    ) -> Result<Self, ReportError> {
        let mut charts = Vec::new();
        charts.extend(rejection.map(rejection_charts).unwrap_or_default());
        charts.extend(trajectory.map(trajectory_charts).unwrap_or_default());
        let tables = match build_tables(scores) {
            Ok(t) => t,
            Err(ReportError::EmptyLog) if !charts.is_empty() => Vec::new(),
            Err(e) => return Err(e),
        };
        Ok(Self {
            tables,
            charts,
            provenance,
        })
    }

    /// Relative path and bytes of every artifact except the manifest.
    pub fn artifacts(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for t in &self.tables {
            for f in [TableFormat::Markdown, TableFormat::Csv] {
                out.push((format!("tables/{}.{}", t.name, f.extension()), t.render(f).into_bytes()));
            }
        }
        for c in &self.charts {
            out.push((format!("charts/{}.svg", c.name), c.to_svg().into_bytes()));
        }
        let mut prov = serde_json::to_vec_pretty(&self.provenance).expect("provenance serializes");
        prov.push(b'\n');
        out.push(("provenance.json".into(), prov));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, ReportError> {
    let bytes = fs::read(path).map_err(|source| ReportError::Io { path: path.into(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes every artifact under `dir` plus `manifest.json`, whose entries are
/// sorted by path. Returns the manifest path.
pub fn export_bundle(bundle: &ReportBundle, dir: &Path) -> Result<PathBuf, ReportError> {
    let mut entries = BTreeMap::new();
    for (rel, bytes) in bundle.artifacts() {
        let path = dir.join(&rel);
        let io = |source| ReportError::Io { path: path.clone(), source };
        fs::create_dir_all(path.parent().expect("artifact has a parent")).map_err(io)?;
        fs::write(&path, &bytes).map_err(io)?;
        entries.insert(
            rel.clone(),
            ManifestEntry {
                path: rel,
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            },
        );
    }
    let manifest = Manifest {
        artifacts: entries.into_values().collect(),
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    text.push(b'\n');
    fs::write(&path, text).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    Ok(path)
}
