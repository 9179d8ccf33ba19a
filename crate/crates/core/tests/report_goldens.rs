mod common;

use std::collections::HashMap;

use tooltrust::report::{
    emit_tables, export_bundle, pct, rejection_charts, trajectory_charts, Manifest, Provenance, ReportBundle, ReportError,
    Scores, TableFormat,
};
use tooltrust::runner::{
    perceived_difficulty, rejection_analysis, score_answers, score_detection, trajectory_analysis, RejectionAnalysis,
    TrajectoryAnalysis,
};

fn fixture_inputs() -> (Scores, RejectionAnalysis, TrajectoryAnalysis) {
    let (log, samples) = common::fixture_log();
    let scores = Scores {
        answer: Some(score_answers(&log).unwrap()),
        detection: Some(score_detection(&log).unwrap()),
    };
    let profiles: HashMap<_, _> = ["model-a", "model-b"]
        .map(|m| (m.to_string(), perceived_difficulty(&log, m).unwrap()))
        .into_iter()
        .collect();
    let rejection = rejection_analysis(&log, &samples, &profiles).unwrap();
    let trajectory = trajectory_analysis(&log).unwrap();
    (scores, rejection, trajectory)
}

fn fixture_bundle() -> ReportBundle {
    let (scores, rejection, trajectory) = fixture_inputs();
    let provenance = Provenance {
        dataset_seed: Some(7),
        perturb_seed: Some(3),
        model_ids: vec!["model-a".into(), "model-b".into()],
        config_digest: None,
        timestamp: "1970-01-01T00:00:00Z".into(),
        inputs: Vec::new(),
    };
    ReportBundle::new(&scores, Some(&rejection), Some(&trajectory), provenance).unwrap()
}

fn table_text(name: &str, format: TableFormat) -> String {
    let (scores, _, _) = fixture_inputs();
    emit_tables(&scores, format)
        .unwrap()
        .into_iter()
        .find(|(p, _)| p == &format!("tables/{name}.{}", format.extension()))
        .unwrap()
        .1
}

#[test]
fn report_artifacts_match_goldens() {
    let items: Vec<(String, String)> = fixture_bundle()
        .artifacts()
        .into_iter()
        .map(|(p, b)| (p, String::from_utf8(b).unwrap()))
        .collect();
    let mismatched = common::check_goldens(&common::fixtures().join("goldens/report"), &items);
    assert!(mismatched.is_empty(), "differs from golden: {mismatched:?}");
}

fn header(md: &str) -> Vec<String> {
    md.lines().nth(2).unwrap().trim_matches('|').split('|').map(|s| s.trim().to_string()).collect()
}

#[test]
fn table_shapes() {
    let grid = |styles: &[&str]| {
        let mut cols = vec!["Model".to_string()];
        for s in styles {
            for iv in ["Obl.", "Disc.", "Conf.", "Check."] {
                cols.push(format!("{s} {iv}"));
            }
        }
        cols
    };
    let broken = table_text("broken_tool_accuracy", TableFormat::Markdown);
    assert_eq!(header(&broken), grid(&["ZST", "CoT", "CoT+FST"]));
    assert_eq!(broken.lines().count(), 4 + 2);

    let detect = table_text("detection_accuracy", TableFormat::Markdown);
    assert_eq!(header(&detect), grid(&["ZST", "CoT"]));

    let traj = table_text("trajectory_f1", TableFormat::Markdown);
    let mut cols = grid(&["ZST", "CoT"]);
    cols.insert(0, "Tool".into());
    assert_eq!(header(&traj), cols);
    let rows: Vec<&str> = traj.lines().skip(4).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("| Action Planner | model-a |"));
    assert!(rows[3].starts_with("| Object Detector | model-b |"));

    let cmp = table_text("tool_vs_no_tool", TableFormat::Markdown);
    assert_eq!(header(&cmp), ["Model", "Direct", "CoT", "CoT-FS", "Correct tool", "Broken tool"]);
    for row in cmp.lines().skip(4) {
        let cells: Vec<&str> = row.trim_matches('|').split('|').map(str::trim).collect();
        assert!(cells[4].contains(" (+") || cells[4].contains(" (-"), "{row}");
        assert!(cells[5].contains(" (-"), "{row}");
    }
}

#[test]
fn csv_and_markdown_agree() {
    for name in ["broken_tool_accuracy", "detection_accuracy", "trajectory_f1", "tool_vs_no_tool"] {
        let md = table_text(name, TableFormat::Markdown);
        let csv_text = table_text(name, TableFormat::Csv);
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let headers: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        let md_rows: Vec<Vec<String>> = md
            .lines()
            .skip(4)
            .map(|l| l.trim_matches('|').split('|').map(|s| s.trim().to_string()).collect())
            .collect();
        let md_head = header(&md);
        for (rec, md_row) in rdr.records().zip(&md_rows) {
            let rec = rec.unwrap();
            for (i, col) in md_head.iter().enumerate() {
                let j = headers.iter().position(|h| h == col).unwrap();
                let cell = &rec[j];
                match headers.iter().position(|h| *h == format!("{col} delta")) {
                    Some(d) => assert_eq!(md_row[i], format!("{cell} ({})", &rec[d])),
                    None => assert_eq!(md_row[i], cell),
                }
            }
        }
    }
}

#[test]
fn csv_values_round_trip() {
    let (scores, _, _) = fixture_inputs();
    let answer = scores.answer.as_ref().unwrap();
    let csv_text = table_text("tool_vs_no_tool", TableFormat::Csv);
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let model = &rec[0];
        let direct = answer
            .get(model, &tooltrust::runner::Condition::no_tool(tooltrust::runner::ToolCondition::NoToolDirect))
            .unwrap();
        let parsed: f64 = rec[1].parse().unwrap();
        assert_eq!(parsed, pct(direct.accuracy).parse::<f64>().unwrap());
        assert!((parsed / 100.0 - direct.accuracy).abs() <= 0.0005 + 1e-12);
    }
}

#[test]
fn charts_cover_every_feature() {
    let (_, rejection, trajectory) = fixture_inputs();
    let charts = rejection_charts(&rejection);
    assert_eq!(charts.len(), 6);
    for c in &charts {
        assert_eq!(c.series.len(), 16, "2 models x 2 prompts x 4 interventions");
        assert!(c.series.iter().all(|s| s.values.len() == c.categories.len()));
    }
    let t = trajectory_charts(&trajectory);
    let names: Vec<&str> = t.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "trajectory_planner_action_type",
            "trajectory_detector_mistakes_all",
            "trajectory_detector_mistakes_task_relevant"
        ]
    );
}

#[test]
fn export_is_deterministic() {
    let bundle = fixture_bundle();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = std::fs::read(export_bundle(&bundle, a.path()).unwrap()).unwrap();
    let mb = std::fs::read(export_bundle(&bundle, b.path()).unwrap()).unwrap();
    assert_eq!(ma, mb);
    let manifest: Manifest = serde_json::from_slice(&ma).unwrap();
    let n_tables = bundle.tables.len() * 2;
    assert_eq!(manifest.artifacts.len(), 1 + n_tables + bundle.charts.len());
    assert_eq!(manifest.artifacts.iter().filter(|e| e.path == "provenance.json").count(), 1);
    let mut paths: Vec<_> = manifest.artifacts.iter().map(|e| e.path.clone()).collect();
    paths.sort();
    assert_eq!(paths, manifest.artifacts.iter().map(|e| e.path.clone()).collect::<Vec<_>>());
    for e in &manifest.artifacts {
        assert_eq!(tooltrust::report::sha256_file(&a.path().join(&e.path)).unwrap(), e.sha256);
    }
}

#[test]
fn unwritable_dir_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "not a directory").unwrap();
    let err = export_bundle(&fixture_bundle(), &blocker).unwrap_err();
    assert!(matches!(err, ReportError::Io { .. }));
    assert!(err.to_string().contains("blocker"), "{err}");
}
