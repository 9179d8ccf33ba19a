//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tooltrust::exprcore::{generate_dataset, parse, Difficulty, EquationInstance};
use tooltrust::modelio::{parse_answer, parse_evaluation};
use tooltrust::perturb::{build_detection_set, holdout_pool, DetectionSample};
use tooltrust::runner::{all_answer_conditions, Condition, Gold, Suite, ToolCondition, TrialRecord};
use tooltrust::Verdict;
use tooltrust::promptkit::{
    build_math_prompt, build_trajectory_prompt, Intervention, MathTask, PromptOptions, PromptStyle,
};
use tooltrust::trajectory::{load_records, TrajectoryRecord};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn planner_records() -> Vec<TrajectoryRecord> {
    load_records(&fixtures().join("trajectories/planner.jsonl")).expect("planner fixtures")
}

pub fn detector_records() -> Vec<TrajectoryRecord> {
    load_records(&fixtures().join("trajectories/detector.jsonl")).expect("detector fixtures")
}

/// Every prompt variant rendered on the fixture inputs, keyed by golden file
/// name. Attachment paths are not part of the golden text.
pub fn golden_prompts() -> Vec<(String, String)> {
    let opts = PromptOptions::default();
    let eq = EquationInstance::new("e000", parse("(2 + 3) * 5").unwrap(), Difficulty::Easy);
    let pool = holdout_pool(11, std::slice::from_ref(&eq), 5).unwrap();
    let mut out = Vec::new();
    for (task, task_name) in [(MathTask::Answer, "answer"), (MathTask::Detect, "detect")] {
        for iv in Intervention::ALL {
            for style in PromptStyle::ALL {
                let p = build_math_prompt(&eq, Some(21), task, iv, style, &pool, &opts).unwrap();
                out.push((format!("math_{task_name}_{iv}_{style}.txt"), p.text));
            }
        }
    }
    let records = [
        ("planner", planner_records().remove(0)),
        ("detector", detector_records().remove(0)),
    ];
    for (name, record) in &records {
        for iv in Intervention::ALL {
            for style in [PromptStyle::ZeroShot, PromptStyle::Cot] {
                let p = build_trajectory_prompt(record, iv, style, &opts).unwrap();
                out.push((format!("{name}_{iv}_{style}.txt"), p.text));
            }
        }
    }
    out
}

/// Compares `items` with files under `dir`; with `UPDATE_GOLDENS` set the
/// files are rewritten instead. Returns the names that differ.
pub fn check_goldens(dir: &Path, items: &[(String, String)]) -> Vec<String> {
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    if update {
        fs::create_dir_all(dir).unwrap();
    }
    let mut mismatched = Vec::new();
    for (name, text) in items {
        let path = dir.join(name);
        if update {
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(&path, text).unwrap();
            continue;
        }
        match fs::read_to_string(&path) {
            Ok(expected) if expected == *text => {}
            _ => mismatched.push(name.clone()),
        }
    }
    mismatched
}

/// Deterministic synthetic trial log over two models: every answer
/// condition, detection under zero-shot and CoT, and trajectory records.
/// Outcomes come from a seeded RNG with per-condition success rates.
pub fn fixture_log() -> (Vec<TrialRecord>, Vec<DetectionSample>) {
    let dataset = generate_dataset(7, 4).unwrap();
    let samples = build_detection_set(&dataset, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut log = Vec::new();
    let models = [("model-a", 0.0), ("model-b", 0.15)];
    for (model, handicap) in models {
        for (ci, cond) in all_answer_conditions().into_iter().enumerate() {
            let p = match cond.tool {
                Some(ToolCondition::CorrectTool) => 0.95,
                Some(ToolCondition::BrokenTool) => 0.1 + 0.05 * (ci % 4) as f64,
                _ => 0.7 - 0.1 * (ci % 3) as f64,
            } - handicap;
            for eq in &dataset {
                let correct = rng.random_bool(p.clamp(0.0, 1.0));
                let guess = if correct { eq.ground_truth } else { eq.ground_truth + 1 };
                log.push(TrialRecord {
                    suite: Suite::Answer,
                    sample_id: eq.id.clone(),
                    condition: cond,
                    tool_kind: None,
                    model_id: model.into(),
                    prompt_digest: String::new(),
                    parsed: parse_answer(&format!("Answer: {guess}")),
                    gold: Gold::Answer(eq.ground_truth),
                    correct,
                    annotations: None,
                });
            }
        }
        for style in [PromptStyle::ZeroShot, PromptStyle::Cot] {
            for (ii, iv) in Intervention::ALL.into_iter().enumerate() {
                let p_reject = 0.2 + 0.15 * ii as f64 - handicap;
                for s in &samples {
                    let reply = match rng.random_range(0..20) {
                        0 => "I am not sure.".to_string(),
                        _ => {
                            let bias = if s.gold == Verdict::Reject { 0.3 } else { 0.0 };
                            let v = if rng.random_bool((p_reject + bias).clamp(0.0, 1.0)) { "Reject" } else { "Accept" };
                            format!("Evaluation: {v}")
                        }
                    };
                    let parsed = parse_evaluation(&reply);
                    log.push(TrialRecord {
                        suite: Suite::Detect,
                        sample_id: s.sample_id(),
                        condition: Condition::judged(iv, style),
                        tool_kind: None,
                        model_id: model.into(),
                        prompt_digest: String::new(),
                        correct: parsed.evaluation == Some(s.gold),
                        parsed,
                        gold: Gold::Verdict(s.gold),
                        annotations: None,
                    });
                }
                for r in planner_records().into_iter().chain(detector_records()) {
                    let right = rng.random_bool((0.75 - handicap - 0.05 * ii as f64).clamp(0.0, 1.0));
                    let v = match (r.gold, right) {
                        (Verdict::Accept, true) | (Verdict::Reject, false) => "Accept",
                        _ => "Reject",
                    };
                    let parsed = parse_evaluation(&format!("Evaluation: {v}"));
                    log.push(TrialRecord {
                        suite: Suite::Trajectory,
                        sample_id: r.id.clone(),
                        condition: Condition::judged(iv, style),
                        tool_kind: Some(r.tool_kind),
                        model_id: model.into(),
                        prompt_digest: String::new(),
                        correct: parsed.evaluation == Some(r.gold),
                        parsed,
                        gold: Gold::Verdict(r.gold),
                        annotations: Some(r.annotations.clone()),
                    });
                }
            }
        }
    }
    (log, samples)
}
