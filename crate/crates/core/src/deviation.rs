//! Deviation between a tool output and its oracle counterpart, the
//! criticality predicates built on it, and the per-sample features used to
//! break rejection rates down.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::exprcore::Difficulty;
use crate::perturb::{DetectionSample, PerturbationKind};
use crate::Verdict;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviationError {
    #[error("threshold {name} must be finite and nonnegative, got {value}")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error("sample {0} is not perturbed; features describe Reject samples only")]
    NotPerturbed(String),
    #[error("no perceived-difficulty entry for equation {0}")]
    MissingProfile(String),
}

/// One tool call as seen by the tool-using model, with optional oracle values.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ToolExchange {
    pub task_input: String,
    pub tool_input: String,
    pub tool_output: String,
    pub context: String,
    pub tool_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_context: Option<String>,
}

impl ToolExchange {
    /// Calculator call for a detection sample: the oracle output is the
    /// ground truth, the oracle input is the equation itself.
    pub fn from_detection_sample(sample: &DetectionSample) -> Self {
        let eq = &sample.equation.rendered;
        Self {
            task_input: format!("What is the answer to: {eq}?"),
            tool_input: format!("result = {eq}"),
            tool_output: sample.tool_output.to_string(),
            context: String::new(),
            tool_id: "calculator".into(),
            oracle_input: Some(format!("result = {eq}")),
            oracle_output: Some(sample.equation.ground_truth.to_string()),
            oracle_context: None,
        }
    }

    /// Edit distance between output and oracle output, when the oracle is known.
    pub fn output_deviation(&self) -> Option<usize> {
        self.oracle_output
            .as_deref()
            .map(|oracle| levenshtein(&self.tool_output, oracle))
    }

    pub fn input_deviation(&self) -> Option<usize> {
        self.oracle_input
            .as_deref()
            .map(|oracle| levenshtein(&self.tool_input, oracle))
    }
}

/// Component tolerances: overall output, tool input, context and tool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub epsilon: f64,
    pub epsilon_input: f64,
    pub epsilon_context: f64,
    pub epsilon_tool: f64,
}

impl Thresholds {
    pub fn new(epsilon: f64, epsilon_input: f64, epsilon_context: f64, epsilon_tool: f64) -> Result<Self, DeviationError> {
        for (name, value) in [
            ("epsilon", epsilon),
            ("epsilon_input", epsilon_input),
            ("epsilon_context", epsilon_context),
            ("epsilon_tool", epsilon_tool),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(DeviationError::InvalidThreshold { name, value });
            }
        }
        Ok(Self {
            epsilon,
            epsilon_input,
            epsilon_context,
            epsilon_tool,
        })
    }
}

/// Where a faulty tool output originates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    Input,
    Context,
    Tool,
}

/// Recovery family. Annotation only; no recovery is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryAction {
    /// Fix the tool input or context.
    Refine,
    /// Improve or substitute the tool.
    Replace,
}

/// Unit-cost insert/delete/substitute edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            curr[j + 1] = substitute.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

pub fn numeric_diff(a: i64, b: i64) -> u64 {
    a.abs_diff(b)
}

/// Calculator confidence: one minus the edit distance between the decimal
/// strings, normalized by the longer string.
pub fn confidence_score(truth: i64, output: i64) -> f64 {
    let (t, o) = (truth.to_string(), output.to_string());
    let longest = t.chars().count().max(o.chars().count());
    let score = 1.0 - levenshtein(&t, &o) as f64 / longest as f64;
    score.clamp(0.0, 1.0)
}

/// A deviation is critical when it strictly exceeds the tolerance.
pub fn is_critical(deviation: f64, epsilon: f64) -> bool {
    deviation > epsilon
}

/// Whether input, context and tool deviations are all strictly within their
/// bounds, which is sufficient for the output deviation to stay below
/// `epsilon`.
pub fn component_bounds_hold(d_input: f64, d_context: f64, d_tool: f64, th: &Thresholds) -> bool {
    d_input < th.epsilon_input && d_context < th.epsilon_context && d_tool < th.epsilon_tool
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationType {
    Sign,
    Magnitude,
    LastDigit,
    OtherDigit,
}

impl PerturbationType {
    pub const ALL: [PerturbationType; 4] = [
        PerturbationType::Sign,
        PerturbationType::Magnitude,
        PerturbationType::LastDigit,
        PerturbationType::OtherDigit,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PerturbationType::Sign => "Sign",
            PerturbationType::Magnitude => "Magnitude",
            PerturbationType::LastDigit => "Last digit",
            PerturbationType::OtherDigit => "Other digit",
        }
    }
}

/// How hard an equation is for a given model without a tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceivedDifficulty {
    /// Solved with the direct prompt.
    DirectOk,
    /// Needed chain-of-thought or few-shot examples.
    NeededCotOrFs,
    /// Wrong under every no-tool prompt.
    AlwaysWrong,
}

impl PerceivedDifficulty {
    pub const ALL: [PerceivedDifficulty; 3] = [
        PerceivedDifficulty::DirectOk,
        PerceivedDifficulty::NeededCotOrFs,
        PerceivedDifficulty::AlwaysWrong,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PerceivedDifficulty::DirectOk => "Direct",
            PerceivedDifficulty::NeededCotOrFs => "CoT/FS",
            PerceivedDifficulty::AlwaysWrong => "Wrong",
        }
    }
}

/// `floor(log10 |answer|)`, with zero in its own bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnswerMagnitude {
    Zero,
    Decade(u32),
}

impl AnswerMagnitude {
    pub fn of(answer: i64) -> Self {
        match answer.unsigned_abs().checked_ilog10() {
            None => AnswerMagnitude::Zero,
            Some(d) => AnswerMagnitude::Decade(d),
        }
    }
}

impl fmt::Display for AnswerMagnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerMagnitude::Zero => f.write_str("zero"),
            AnswerMagnitude::Decade(d) => write!(f, "{d}"),
        }
    }
}

impl Serialize for AnswerMagnitude {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            AnswerMagnitude::Zero => serializer.serialize_str("zero"),
            AnswerMagnitude::Decade(d) => serializer.serialize_u32(*d),
        }
    }
}

impl<'de> Deserialize<'de> for AnswerMagnitude {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Decade(u32),
            Label(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Decade(d) => Ok(AnswerMagnitude::Decade(d)),
            Raw::Label(s) if s == "zero" => Ok(AnswerMagnitude::Zero),
            Raw::Label(s) => Err(serde::de::Error::custom(format!("unknown magnitude bin {s:?}"))),
        }
    }
}

/// The six per-sample features for a perturbed calculator output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub numeric_diff: u64,
    pub symbolic_diff: u32,
    pub perturbation_type: PerturbationType,
    pub equation_band: Difficulty,
    pub answer_magnitude: AnswerMagnitude,
    pub perceived_difficulty: PerceivedDifficulty,
}

/// Features of a Reject sample. `profile` maps equation ids to the model's
/// perceived difficulty.
pub fn extract_features(
    sample: &DetectionSample,
    profile: &HashMap<String, PerceivedDifficulty>,
) -> Result<FeatureVector, DeviationError> {
    let perturbation = match (sample.gold, &sample.perturbation) {
        (Verdict::Reject, Some(p)) => p,
        _ => return Err(DeviationError::NotPerturbed(sample.sample_id())),
    };
    let eq = &sample.equation;
    let perceived_difficulty = *profile
        .get(&eq.id)
        .ok_or_else(|| DeviationError::MissingProfile(eq.id.clone()))?;
    let perturbation_type = match perturbation.kind {
        PerturbationKind::SignInversion => PerturbationType::Sign,
        PerturbationKind::MagnitudeShift => PerturbationType::Magnitude,
        PerturbationKind::DigitReplacement if perturbation.detail == Some(0) => PerturbationType::LastDigit,
        PerturbationKind::DigitReplacement => PerturbationType::OtherDigit,
    };
    Ok(FeatureVector {
        numeric_diff: numeric_diff(eq.ground_truth, sample.tool_output),
        symbolic_diff: levenshtein(&eq.ground_truth.to_string(), &sample.tool_output.to_string()) as u32,
        perturbation_type,
        equation_band: eq.difficulty,
        answer_magnitude: AnswerMagnitude::of(eq.ground_truth),
        perceived_difficulty,
    })
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() {
        return None;
    }
    pearson(&ranks(xs), &ranks(ys))
}

/// Correlation between symbolic difference and `log10(1 + numeric difference)`
/// over a set of feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffCorrelation {
    pub n: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn symbolic_numeric_correlation<'a>(features: impl IntoIterator<Item = &'a FeatureVector>) -> DiffCorrelation {
    let (sym, num): (Vec<f64>, Vec<f64>) = features
        .into_iter()
        .map(|f| (f64::from(f.symbolic_diff), (1.0 + f.numeric_diff as f64).log10()))
        .unzip();
    DiffCorrelation {
        n: sym.len(),
        pearson: pearson(&sym, &num),
        spearman: spearman(&sym, &num),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprcore::{EquationInstance, Expression, Op, Shape};
    use crate::perturb::PerturbationResult;

    fn sample(truth_expr: Expression, band: Difficulty, kind: PerturbationKind, perturbed: i64, detail: Option<i32>) -> DetectionSample {
        let eq = EquationInstance::new("e000", truth_expr, band);
        let p = PerturbationResult {
            original: eq.ground_truth,
            perturbed,
            kind,
            detail,
        };
        DetectionSample::broken(eq, p)
    }

    fn twenty_five() -> Expression {
        Expression::new(Shape::LeftNested, [2, 3, 5], [Op::Add, Op::Mul]).unwrap()
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("25", "21"), 1);
        assert_eq!(levenshtein("123", "-123"), 1);
        assert_eq!(levenshtein("123", "119"), 2);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("same", "same"), 0);
    }

    #[test]
    fn numeric_diff_examples() {
        assert_eq!(numeric_diff(25, 25), 0);
        assert_eq!(numeric_diff(123, -123), 246);
        assert_eq!(numeric_diff(25, 205), 180);
        assert_eq!(numeric_diff(i64::MIN, i64::MAX), u64::MAX);
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence_score(25, 25), 1.0);
        assert!((confidence_score(25, -25) - 2.0 / 3.0).abs() < 1e-3);
        assert!((confidence_score(25, 205) - 2.0 / 3.0).abs() < 1e-3);
        assert_eq!(confidence_score(5, -7), 0.0);
    }

    #[test]
    fn criticality_is_strict() {
        assert!(is_critical(5.0, 3.0));
        assert!(!is_critical(0.0, 0.0));
        assert!(!is_critical(3.0, 3.0));

        let ones = Thresholds::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(component_bounds_hold(0.0, 0.0, 0.0, &ones));
        assert!(!component_bounds_hold(0.0, 0.0, 1.0, &ones));
        assert!(!component_bounds_hold(0.5, 0.5, 2.0, &ones));
    }

    #[test]
    fn thresholds_reject_negative_values() {
        assert!(Thresholds::new(0.0, 0.0, 0.0, 0.0).is_ok());
        assert!(matches!(
            Thresholds::new(1.0, -0.1, 0.0, 0.0),
            Err(DeviationError::InvalidThreshold { name: "epsilon_input", .. })
        ));
        assert!(Thresholds::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn features_of_sign_inversion() {
        let s = sample(twenty_five(), Difficulty::Easy, PerturbationKind::SignInversion, -25, None);
        let profile = HashMap::from([("e000".to_string(), PerceivedDifficulty::DirectOk)]);
        let f = extract_features(&s, &profile).unwrap();
        assert_eq!(
            f,
            FeatureVector {
                numeric_diff: 50,
                symbolic_diff: 1,
                perturbation_type: PerturbationType::Sign,
                equation_band: Difficulty::Easy,
                answer_magnitude: AnswerMagnitude::Decade(1),
                perceived_difficulty: PerceivedDifficulty::DirectOk,
            }
        );
    }

    #[test]
    fn digit_index_zero_is_last_digit() {
        let profile = HashMap::from([("e000".to_string(), PerceivedDifficulty::AlwaysWrong)]);
        let s = sample(twenty_five(), Difficulty::Easy, PerturbationKind::DigitReplacement, 21, Some(0));
        assert_eq!(extract_features(&s, &profile).unwrap().perturbation_type, PerturbationType::LastDigit);
        let s = sample(twenty_five(), Difficulty::Easy, PerturbationKind::DigitReplacement, 35, Some(1));
        assert_eq!(extract_features(&s, &profile).unwrap().perturbation_type, PerturbationType::OtherDigit);
    }

    #[test]
    fn zero_answer_has_its_own_bin() {
        assert_eq!(AnswerMagnitude::of(0), AnswerMagnitude::Zero);
        assert_eq!(AnswerMagnitude::of(9), AnswerMagnitude::Decade(0));
        assert_eq!(AnswerMagnitude::of(-1320), AnswerMagnitude::Decade(3));
        let zero = Expression::new(Shape::RightNested, [0, 17, -4], [Op::Mul, Op::Add]).unwrap();
        let s = sample(zero, Difficulty::Easy, PerturbationKind::DigitReplacement, 3, Some(0));
        let profile = HashMap::from([("e000".to_string(), PerceivedDifficulty::DirectOk)]);
        assert_eq!(extract_features(&s, &profile).unwrap().answer_magnitude, AnswerMagnitude::Zero);
        assert_eq!(serde_json::to_string(&AnswerMagnitude::Zero).unwrap(), "\"zero\"");
        assert_eq!(serde_json::from_str::<AnswerMagnitude>("4").unwrap(), AnswerMagnitude::Decade(4));
    }

    #[test]
    fn feature_errors() {
        let s = sample(twenty_five(), Difficulty::Easy, PerturbationKind::SignInversion, -25, None);
        assert_eq!(
            extract_features(&s, &HashMap::new()),
            Err(DeviationError::MissingProfile("e000".into()))
        );
        let ok = DetectionSample::correct(s.equation.clone());
        assert!(matches!(
            extract_features(&ok, &HashMap::new()),
            Err(DeviationError::NotPerturbed(_))
        ));
    }

    #[test]
    fn correlation_basics() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&xs, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&xs, &[1.0; 4]), None);
        assert!((spearman(&xs, &[1.0, 10.0, 100.0, 1000.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn exchange_deviation() {
        let s = sample(twenty_five(), Difficulty::Easy, PerturbationKind::MagnitudeShift, 205, Some(1));
        let ex = ToolExchange::from_detection_sample(&s);
        assert_eq!(ex.output_deviation(), Some(1));
        assert_eq!(ex.input_deviation(), Some(0));
        assert!(is_critical(ex.output_deviation().unwrap() as f64, 0.0));
    }
}
