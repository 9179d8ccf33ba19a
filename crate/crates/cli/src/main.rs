//! `tooltrust` command line: dataset generation, perturbation, suite runs,
//! scoring, analysis, reporting and trajectory validation.
//!
//! Exit codes: 0 on success, 1 on runtime failures, 2 on bad flags or config.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use tooltrust::exprcore::{generate_with_counts, EquationInstance};
use tooltrust::modelio::{ModelClient, ModelConfig, ResponseCache};
use tooltrust::perturb::{build_detection_set, DetectionSample};
use tooltrust::promptkit::{Intervention, PromptOptions, PromptStyle};
use tooltrust::report::{
    export_bundle, sha256_file, InputDigest, Provenance, ReportBundle, Scores, TableFormat,
};
use tooltrust::runner::{
    all_answer_conditions, default_fewshot_pool, perceived_difficulty, read_log, rejection_analysis, score_answers,
    score_detection, trajectory_analysis, Condition, RejectionAnalysis, RunOptions, Runner, ScoreError, Suite,
    TrajectoryAnalysis, TrialRecord,
};
use tooltrust::trajectory::{load_records, validate_file};

/// Bad flags or config; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "tooltrust", version, about = "Evaluate how language models handle faulty tool outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the arithmetic dataset as JSONL.
    Gen(GenArgs),
    /// Build the balanced detection set (correct and perturbed tool outputs).
    Perturb(PerturbArgs),
    /// Run suites against one or more models, appending trials to a log.
    Run(RunArgs),
    /// Score trial logs; writes JSON and prints the tables.
    Score(ScoreArgs),
    /// Binned rejection and trajectory analyses.
    Analyze(AnalyzeArgs),
    /// Export tables, charts, provenance and a manifest.
    Report(ReportArgs),
    /// Schema-check a trajectory JSONL file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    per_difficulty: Option<usize>,
    /// Per-band counts as EASY,MEDIUM,HARD; overrides --per-difficulty.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<usize>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset JSONL from `gen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SuiteArg {
    Answer,
    Detect,
    Trajectory,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Suites to run; defaults to the config's list.
    #[arg(long, value_enum, value_delimiter = ',')]
    suite: Vec<SuiteArg>,
    /// Model spec, `scripted:<name>` or `<model_id>@<base_url>`; repeatable.
    #[arg(long)]
    model: Vec<String>,
    /// Dataset JSONL for the answer suite; generated from the seeds if absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Detection set JSONL; built from the dataset if absent.
    #[arg(long)]
    detect_set: Option<PathBuf>,
    /// Trajectory JSONL for the trajectory suite.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    interventions: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    styles: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    perturb_seed: Option<u64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Trial log to write.
    #[arg(long)]
    out: PathBuf,
    /// Keep the existing log and skip trials it already holds.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// Trial logs; repeatable.
    #[arg(long, required = true)]
    log: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, required = true)]
    log: Vec<PathBuf>,
    /// Detection set the detect trials were run on.
    #[arg(long)]
    detect_set: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    analysis: Option<PathBuf>,
    /// Timestamp recorded in provenance; defaults to SOURCE_DATE_EPOCH, then
    /// the current time.
    #[arg(long)]
    timestamp: Option<String>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    path: PathBuf,
}

/// TOML run configuration. Seeds have no defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    dataset_seed: Option<u64>,
    per_difficulty: Option<usize>,
    split: Option<[usize; 3]>,
    perturb_seed: Option<u64>,
    #[serde(default)]
    models: Vec<ModelConfig>,
    interventions: Option<Vec<Intervention>>,
    styles: Option<Vec<PromptStyle>>,
    suites: Option<Vec<SuiteArg>>,
    trajectories: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    checklist_disclaimer: Option<bool>,
}

impl RunConfig {
    fn load(arg: &ConfigArg) -> Result<(Self, Option<String>)> {
        let Some(path) = &arg.config else { return Ok((Self::default(), None)) };
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        for m in &cfg.models {
            m.validate().map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        let digest = sha256_file(path)?;
        Ok((cfg, Some(digest)))
    }

    fn counts(&self, per_difficulty: Option<usize>, split: Option<&[usize]>) -> Result<[usize; 3]> {
        if let Some(s) = split {
            return match s {
                [e, m, h] => Ok([*e, *m, *h]),
                _ => Err(usage("--split takes three counts: EASY,MEDIUM,HARD")),
            };
        }
        if let Some(n) = per_difficulty {
            return Ok([n; 3]);
        }
        if let Some(s) = self.split {
            return Ok(s);
        }
        match self.per_difficulty {
            Some(n) => Ok([n; 3]),
            None => Err(usage("set --per-difficulty, --split, or per_difficulty in the config")),
        }
    }
}

fn require_seed(flag: Option<u64>, cfg: Option<u64>, flag_name: &str, key: &str) -> Result<u64> {
    flag.or(cfg)
        .ok_or_else(|| usage(format!("no {key}: pass --{flag_name} or set {key} in the config")))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}: invalid record", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn gen(args: GenArgs) -> Result<()> {
    let (cfg, _) = RunConfig::load(&args.config)?;
    let seed = require_seed(args.seed, cfg.dataset_seed, "seed", "dataset_seed")?;
    let counts = cfg.counts(args.per_difficulty, args.split.as_deref())?;
    let dataset = generate_with_counts(seed, counts)?;
    write_jsonl(&args.out, &dataset)?;
    eprintln!("wrote {} equations to {}", dataset.len(), args.out.display());
    Ok(())
}

fn perturb(args: PerturbArgs) -> Result<()> {
    let (cfg, _) = RunConfig::load(&args.config)?;
    let seed = require_seed(args.seed, cfg.perturb_seed, "seed", "perturb_seed")?;
    let dataset: Vec<EquationInstance> = read_jsonl(&args.data)?;
    let set = build_detection_set(&dataset, seed)?;
    write_jsonl(&args.out, &set)?;
    eprintln!("wrote {} detection samples to {}", set.len(), args.out.display());
    Ok(())
}

fn parse_list<T: std::str::FromStr>(raw: &[String], what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.iter()
        .map(|s| s.parse::<T>().map_err(|e| usage(format!("bad {what} {s:?}: {e}"))))
        .collect()
}

fn run(args: RunArgs) -> Result<()> {
    let (cfg, _) = RunConfig::load(&args.config)?;
    let models: Vec<ModelConfig> = if args.model.is_empty() {
        cfg.models.clone()
    } else {
        args.model
            .iter()
            .map(|m| ModelConfig::from_spec(m).map_err(|e| usage(e.to_string())))
            .collect::<Result<_>>()?
    };
    if models.is_empty() {
        bail!(usage("no models: pass --model or list [[models]] in the config"));
    }
    let suites = if args.suite.is_empty() {
        cfg.suites.clone().unwrap_or_default()
    } else {
        args.suite.clone()
    };
    if suites.is_empty() {
        bail!(usage("no suites: pass --suite or set suites in the config"));
    }
    let interventions = if args.interventions.is_empty() {
        cfg.interventions.clone().unwrap_or_else(|| Intervention::ALL.to_vec())
    } else {
        parse_list(&args.interventions, "intervention")?
    };
    let styles = if args.styles.is_empty() {
        cfg.styles.clone().unwrap_or_else(|| PromptStyle::ALL.to_vec())
    } else {
        parse_list(&args.styles, "style")?
    };
    let cache_dir = args.cache_dir.clone().or(cfg.cache_dir.clone());
    let prompt = PromptOptions {
        checklist_disclaimer: cfg.checklist_disclaimer.unwrap_or(PromptOptions::default().checklist_disclaimer),
    };

    let needs_math = suites.iter().any(|s| *s != SuiteArg::Trajectory);
    let seed = if needs_math {
        Some(require_seed(args.seed, cfg.dataset_seed, "seed", "dataset_seed")?)
    } else {
        args.seed.or(cfg.dataset_seed)
    };
    let perturb_seed = args.perturb_seed.or(cfg.perturb_seed);
    let needs_dataset = suites.contains(&SuiteArg::Answer) || (suites.contains(&SuiteArg::Detect) && args.detect_set.is_none());
    let dataset: Vec<EquationInstance> = match (&args.data, needs_dataset) {
        (Some(path), true) => read_jsonl(path)?,
        (None, true) => generate_with_counts(seed.expect("checked above"), cfg.counts(None, None)?)?,
        (_, false) => Vec::new(),
    };
    let detect_set: Vec<DetectionSample> = if suites.contains(&SuiteArg::Detect) {
        match &args.detect_set {
            Some(path) => read_jsonl(path)?,
            None => build_detection_set(&dataset, require_seed(args.perturb_seed, cfg.perturb_seed, "perturb-seed", "perturb_seed")?)?,
        }
    } else {
        Vec::new()
    };
    let trajectories = if suites.contains(&SuiteArg::Trajectory) {
        let path = args
            .trajectories
            .clone()
            .or(cfg.trajectories.clone())
            .ok_or_else(|| usage("the trajectory suite needs --trajectories"))?;
        load_records(&path)?
    } else {
        Vec::new()
    };
    let pool = match seed {
        Some(seed) if needs_math => {
            let mut exclude = dataset.clone();
            exclude.extend(detect_set.iter().map(|s| s.equation.clone()));
            default_fewshot_pool(seed, &exclude)?
        }
        _ => Vec::new(),
    };

    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    if !args.resume {
        fs::write(&args.out, "").with_context(|| format!("cannot create {}", args.out.display()))?;
    }
    let opts = RunOptions {
        log_path: Some(args.out.clone()),
        resume: args.resume,
        prompt,
        fewshot_pool: pool,
        marker_dir: cache_dir.clone(),
    };
    let answer_conditions: Vec<Condition> = all_answer_conditions()
        .into_iter()
        .filter(|c| c.tool.is_some_and(|t| !t.uses_tool()) || (interventions.contains(&c.intervention) && styles.contains(&c.style)))
        .collect();
    let judged_styles: Vec<PromptStyle> = styles.clone();
    let traj_styles: Vec<PromptStyle> = styles.iter().copied().filter(|s| *s != PromptStyle::CotFewShot).collect();

    for model in models {
        let cache = match &cache_dir {
            Some(dir) if !model.is_scripted() => Some(ResponseCache::new(dir.join("responses"))?),
            _ => None,
        };
        let client = ModelClient::new(model, cache)?;
        let runner = Runner::new(&client, opts.clone());
        for suite in &suites {
            let trials = match suite {
                SuiteArg::Answer => runner.run_answer_suite(&dataset, &answer_conditions, perturb_seed)?,
                SuiteArg::Detect => runner.run_detection_suite(&detect_set, &interventions, &judged_styles)?,
                SuiteArg::Trajectory => runner.run_trajectory_suite(&trajectories, &interventions, &traj_styles)?,
            };
            eprintln!("{}: {} trial(s) for {}", runner.model_id(), trials.len(), suite_name(*suite));
        }
    }
    Ok(())
}

fn suite_name(s: SuiteArg) -> &'static str {
    match s {
        SuiteArg::Answer => "answer",
        SuiteArg::Detect => "detect",
        SuiteArg::Trajectory => "trajectory",
    }
}

fn read_logs(paths: &[PathBuf]) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_log(p)?);
    }
    Ok(out)
}

fn optional<T>(r: Result<T, ScoreError>) -> Result<Option<T>, ScoreError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(ScoreError::EmptyLog) => Ok(None),
        Err(e) => Err(e),
    }
}

fn build_scores(log: &[TrialRecord]) -> Result<Scores> {
    let scores = Scores {
        answer: optional(score_answers(log))?,
        detection: optional(score_detection(log))?,
    };
    if scores.answer.is_none() && scores.detection.is_none() {
        bail!(ScoreError::EmptyLog);
    }
    Ok(scores)
}

fn score(args: ScoreArgs) -> Result<()> {
    let log = read_logs(&args.log)?;
    let scores = build_scores(&log)?;
    if let Some(out) = &args.out {
        write_json(out, &scores)?;
    }
    let format = match args.format {
        FormatArg::Markdown => TableFormat::Markdown,
        FormatArg::Csv => TableFormat::Csv,
    };
    for t in tooltrust::report::build_tables(&scores)? {
        println!("{}", t.render(format));
    }
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Analysis {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rejection: Option<RejectionAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trajectory: Option<TrajectoryAnalysis>,
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let log = read_logs(&args.log)?;
    let mut analysis = Analysis::default();
    let detect_models: BTreeSet<&str> = log
        .iter()
        .filter(|t| t.suite == Suite::Detect)
        .map(|t| t.model_id.as_str())
        .collect();
    if !detect_models.is_empty() {
        let path = args
            .detect_set
            .as_ref()
            .ok_or_else(|| usage("detect trials found: pass --detect-set"))?;
        let samples: Vec<DetectionSample> = read_jsonl(path)?;
        let mut profiles = HashMap::new();
        for m in detect_models {
            let p = perceived_difficulty(&log, m)
                .with_context(|| format!("perceived difficulty for {m} needs its no-tool answer trials"))?;
            profiles.insert(m.to_string(), p);
        }
        analysis.rejection = Some(rejection_analysis(&log, &samples, &profiles)?);
    }
    if log.iter().any(|t| t.suite == Suite::Trajectory) {
        analysis.trajectory = Some(trajectory_analysis(&log)?);
    }
    if analysis.rejection.is_none() && analysis.trajectory.is_none() {
        bail!("nothing to analyze: the logs hold no detect or trajectory trials");
    }
    write_json(&args.out, &analysis)
}

fn timestamp(flag: Option<String>) -> Result<String> {
    if let Some(t) = flag {
        return Ok(t);
    }
    let secs = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .map_err(|_| usage(format!("SOURCE_DATE_EPOCH is not an integer: {v:?}")))?,
        Err(_) => std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0),
    };
    let t = time::OffsetDateTime::from_unix_timestamp(secs).map_err(|e| usage(e.to_string()))?;
    Ok(t.format(&time::format_description::well_known::Rfc3339)?)
}

fn report(args: ReportArgs) -> Result<()> {
    let (cfg, config_digest) = RunConfig::load(&args.config)?;
    let scores: Scores = serde_json::from_str(
        &fs::read_to_string(&args.scores).with_context(|| format!("cannot read {}", args.scores.display()))?,
    )
    .with_context(|| format!("{}: not a scores file", args.scores.display()))?;
    let analysis: Analysis = match &args.analysis {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)
            .with_context(|| format!("{}: not an analysis file", p.display()))?,
        None => Analysis::default(),
    };
    let mut model_ids: Vec<String> = Vec::new();
    let ids = scores
        .answer
        .iter()
        .flat_map(|a| a.cells.iter().map(|c| &c.model_id))
        .chain(scores.detection.iter().flat_map(|d| d.cells.iter().map(|c| &c.model_id)));
    for id in ids {
        if !model_ids.contains(id) {
            model_ids.push(id.clone());
        }
    }
    let mut inputs = vec![InputDigest {
        path: args.scores.display().to_string(),
        sha256: sha256_file(&args.scores)?,
    }];
    if let Some(p) = &args.analysis {
        inputs.push(InputDigest {
            path: p.display().to_string(),
            sha256: sha256_file(p)?,
        });
    }
    let provenance = Provenance {
        dataset_seed: cfg.dataset_seed,
        perturb_seed: cfg.perturb_seed,
        model_ids,
        config_digest,
        timestamp: timestamp(args.timestamp)?,
        inputs,
    };
    let bundle = ReportBundle::new(&scores, analysis.rejection.as_ref(), analysis.trajectory.as_ref(), provenance)?;
    let out = args
        .out
        .or(cfg.output_dir.clone())
        .ok_or_else(|| usage("pass --out or set output_dir in the config"))?;
    let manifest = export_bundle(&bundle, &out)?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    match validate_file(&args.path) {
        Ok(n) => {
            println!("{}: {n} valid record(s)", args.path.display());
            Ok(())
        }
        Err(errors) => {
            for e in &errors {
                eprintln!("{e}");
            }
            bail!("{}: {} error(s)", args.path.display(), errors.len())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Perturb(a) => perturb(a),
        Command::Run(a) => run(a),
        Command::Score(a) => score(a),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
