//! The "broken calculator": deterministic corruption of correct integer
//! outputs, and the balanced Accept/Reject detection set built from them.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprcore::{self, EquationInstance};
use crate::Verdict;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerturbError {
    #[error("{kind} cannot be applied to {value}: {reason}")]
    Infeasible {
        value: i64,
        kind: PerturbationKind,
        reason: &'static str,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("detection sample {id}: {message}")]
    InvalidSample { id: String, message: String },
    #[error(transparent)]
    Expr(#[from] exprcore::ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    DigitReplacement,
    MagnitudeShift,
    SignInversion,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 3] = [
        PerturbationKind::DigitReplacement,
        PerturbationKind::MagnitudeShift,
        PerturbationKind::SignInversion,
    ];
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerturbationKind::DigitReplacement => "digit replacement",
            PerturbationKind::MagnitudeShift => "magnitude shift",
            PerturbationKind::SignInversion => "sign inversion",
        })
    }
}

/// Digit-count changes a magnitude shift may apply.
pub const MAGNITUDE_DELTAS: [i32; 5] = [-2, -1, 1, 2, 3];

/// Values at or above this magnitude are not perturbed; a three-digit
/// insertion must still fit in `i64`.
pub const MAX_PERTURBABLE: u64 = 1_000_000_000_000_000;

fn check_magnitude(value: i64, kind: PerturbationKind) -> Result<(), PerturbError> {
    if value.unsigned_abs() >= MAX_PERTURBABLE {
        return Err(PerturbError::Infeasible {
            value,
            kind,
            reason: "magnitude too large",
        });
    }
    Ok(())
}

/// A corrupted tool output.
///
/// `detail` holds the replaced digit's index counted from the right (0 is the
/// last digit) for [`PerturbationKind::DigitReplacement`], the signed change in
/// digit count for [`PerturbationKind::MagnitudeShift`], and nothing for
/// [`PerturbationKind::SignInversion`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub original: i64,
    pub perturbed: i64,
    pub kind: PerturbationKind,
    pub detail: Option<i32>,
}

fn digits(value: i64) -> String {
    value.unsigned_abs().to_string()
}

impl PerturbationResult {
    /// Verifies every structural invariant of the result; returns a
    /// description of the first violation.
    pub fn check(&self) -> Result<(), String> {
        if self.perturbed == self.original {
            return Err("perturbed equals original".into());
        }
        let (a, b) = (digits(self.original), digits(self.perturbed));
        if b.len() > 1 && b.starts_with('0') {
            return Err(format!("leading zero in {b}"));
        }
        match self.kind {
            PerturbationKind::SignInversion => {
                if self.original == 0 || self.perturbed != -self.original {
                    return Err("sign inversion must negate a nonzero value".into());
                }
                if self.detail.is_some() {
                    return Err("sign inversion carries no detail".into());
                }
            }
            PerturbationKind::DigitReplacement => {
                if (self.original < 0) != (self.perturbed < 0) {
                    return Err("digit replacement changed the sign".into());
                }
                if a.len() != b.len() {
                    return Err("digit replacement changed the digit count".into());
                }
                let diffs: Vec<usize> = a
                    .bytes()
                    .zip(b.bytes())
                    .enumerate()
                    .filter(|(_, (x, y))| x != y)
                    .map(|(i, _)| i)
                    .collect();
                if diffs.len() != 1 {
                    return Err(format!("{} digit positions differ", diffs.len()));
                }
                let from_right = (a.len() - 1 - diffs[0]) as i32;
                if self.detail != Some(from_right) {
                    return Err(format!("detail {:?} but digit {from_right} changed", self.detail));
                }
            }
            PerturbationKind::MagnitudeShift => {
                if (self.original < 0) != (self.perturbed < 0) {
                    return Err("magnitude shift changed the sign".into());
                }
                let delta = b.len() as i32 - a.len() as i32;
                if !MAGNITUDE_DELTAS.contains(&delta) {
                    return Err(format!("digit delta {delta} out of range"));
                }
                if self.detail != Some(delta) {
                    return Err(format!("detail {:?} but digit delta is {delta}", self.detail));
                }
            }
        }
        Ok(())
    }
}

fn from_digits(negative: bool, s: &str) -> i64 {
    let magnitude: i64 = s.parse().expect("digit strings stay within i64");
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

fn replace_digit(value: i64, rng: &mut impl Rng) -> PerturbationResult {
    let mut s = digits(value).into_bytes();
    let pos = rng.random_range(0..s.len());
    let current = s[pos];
    // The leading digit (and any single-digit value) never becomes 0.
    let floor = if pos == 0 { b'1' } else { b'0' };
    let candidates: Vec<u8> = (floor..=b'9').filter(|&d| d != current).collect();
    s[pos] = candidates[rng.random_range(0..candidates.len())];
    let s = String::from_utf8(s).expect("ascii digits");
    PerturbationResult {
        original: value,
        perturbed: from_digits(value < 0, &s),
        kind: PerturbationKind::DigitReplacement,
        detail: Some((s.len() - 1 - pos) as i32),
    }
}

fn remove_digits(value: i64, count: usize, rng: &mut impl Rng) -> Option<String> {
    let s = digits(value);
    let n = s.len();
    if n <= count {
        return None;
    }
    let keep = |removed: &[usize]| -> String {
        s.char_indices()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, c)| c)
            .collect()
    };
    let mut options = Vec::new();
    match count {
        1 => options.extend((0..n).map(|i| keep(&[i]))),
        2 => {
            for i in 0..n {
                for j in i + 1..n {
                    options.push(keep(&[i, j]));
                }
            }
        }
        _ => unreachable!("removal deltas are -1 and -2"),
    }
    options.retain(|r| !r.starts_with('0'));
    if options.is_empty() {
        return None;
    }
    let choice = rng.random_range(0..options.len());
    Some(options.swap_remove(choice))
}

fn insert_digits(value: i64, count: usize, rng: &mut impl Rng) -> String {
    let base = digits(value);
    loop {
        let mut s = base.clone().into_bytes();
        for _ in 0..count {
            let pos = rng.random_range(0..=s.len());
            s.insert(pos, b'0' + rng.random_range(0..10u8));
        }
        if s[0] != b'0' {
            return String::from_utf8(s).expect("ascii digits");
        }
    }
}

/// Digit-count deltas from [`MAGNITUDE_DELTAS`] that `value` can absorb.
pub fn feasible_magnitude_deltas(value: i64) -> Vec<i32> {
    let len = digits(value).len() as i32;
    MAGNITUDE_DELTAS
        .iter()
        .copied()
        .filter(|&d| d > 0 || (value != 0 && len > -d))
        .collect()
}

fn apply_shift(value: i64, delta: i32, rng: &mut impl Rng) -> Result<PerturbationResult, PerturbError> {
    let infeasible = |reason| PerturbError::Infeasible {
        value,
        kind: PerturbationKind::MagnitudeShift,
        reason,
    };
    check_magnitude(value, PerturbationKind::MagnitudeShift)?;
    if !MAGNITUDE_DELTAS.contains(&delta) {
        return Err(infeasible("digit delta outside {-2, -1, +1, +2, +3}"));
    }
    let s = if delta > 0 {
        insert_digits(value, delta as usize, rng)
    } else {
        if value == 0 {
            return Err(infeasible("zero has no digits to remove"));
        }
        remove_digits(value, (-delta) as usize, rng).ok_or_else(|| infeasible("too few digits to remove"))?
    };
    Ok(PerturbationResult {
        original: value,
        perturbed: from_digits(value < 0, &s),
        kind: PerturbationKind::MagnitudeShift,
        detail: Some(delta),
    })
}

/// Magnitude shift by an explicit digit-count delta.
pub fn shift_magnitude(value: i64, digit_delta: i32, seed: u64) -> Result<PerturbationResult, PerturbError> {
    apply_shift(value, digit_delta, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Corrupts `value` with the given kind. Deterministic in `(value, kind, seed)`.
///
/// Magnitude shifts draw their delta uniformly from the deltas `value` can
/// absorb, so only sign inversion of zero is infeasible here.
pub fn perturb(value: i64, kind: PerturbationKind, seed: u64) -> Result<PerturbationResult, PerturbError> {
    check_magnitude(value, kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        PerturbationKind::SignInversion => {
            if value == 0 {
                return Err(PerturbError::Infeasible {
                    value,
                    kind,
                    reason: "negating zero leaves it unchanged",
                });
            }
            Ok(PerturbationResult {
                original: value,
                perturbed: -value,
                kind,
                detail: None,
            })
        }
        PerturbationKind::DigitReplacement => Ok(replace_digit(value, &mut rng)),
        PerturbationKind::MagnitudeShift => {
            let deltas = feasible_magnitude_deltas(value);
            let delta = deltas[rng.random_range(0..deltas.len())];
            apply_shift(value, delta, &mut rng)
        }
    }
}

/// Kinds that can be applied to `value`.
pub fn feasible_kinds(value: i64) -> Vec<PerturbationKind> {
    PerturbationKind::ALL
        .iter()
        .copied()
        .filter(|k| *k != PerturbationKind::SignInversion || value != 0)
        .collect()
}

/// Uniform draw over [`feasible_kinds`].
pub fn sample_kind(value: i64, seed: u64) -> PerturbationKind {
    let kinds = feasible_kinds(value);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kinds[rng.random_range(0..kinds.len())]
}

/// SplitMix64 finalizer; derives independent per-item seeds from one run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One broken-calculator output per equation, in dataset order. The answer
/// suite's broken-tool condition and the detection set share these outputs.
pub fn perturb_dataset(dataset: &[EquationInstance], seed: u64) -> Result<Vec<PerturbationResult>, PerturbError> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, eq)| {
            let i = i as u64;
            let kind = sample_kind(eq.ground_truth, derive_seed(seed, 2 * i));
            perturb(eq.ground_truth, kind, derive_seed(seed, 2 * i + 1))
        })
        .collect()
}

/// An equation paired with a calculator output and its gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "DetectionRow", try_from = "DetectionRow")]
pub struct DetectionSample {
    pub equation: EquationInstance,
    pub tool_output: i64,
    pub gold: Verdict,
    pub perturbation: Option<PerturbationResult>,
}

impl DetectionSample {
    pub fn correct(equation: EquationInstance) -> Self {
        Self {
            tool_output: equation.ground_truth,
            equation,
            gold: Verdict::Accept,
            perturbation: None,
        }
    }

    pub fn broken(equation: EquationInstance, perturbation: PerturbationResult) -> Self {
        Self {
            tool_output: perturbation.perturbed,
            equation,
            gold: Verdict::Reject,
            perturbation: Some(perturbation),
        }
    }

    /// Unique key within a detection set: the equation id plus the label,
    /// e.g. `e042:reject`.
    pub fn sample_id(&self) -> String {
        format!("{}:{}", self.equation.id, self.gold.as_str())
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        let invalid = |message: String| PerturbError::InvalidSample {
            id: self.sample_id(),
            message,
        };
        self.equation.validate()?;
        let truth = self.equation.ground_truth;
        match (&self.gold, &self.perturbation) {
            (Verdict::Accept, None) if self.tool_output == truth => Ok(()),
            (Verdict::Reject, Some(p)) if self.tool_output != truth => {
                if p.original != truth || p.perturbed != self.tool_output {
                    return Err(invalid("perturbation does not match the sample values".into()));
                }
                p.check().map_err(invalid)
            }
            _ => Err(invalid(
                "gold label, perturbation and tool output disagree".into(),
            )),
        }
    }
}

/// Flat JSONL layout of a detection sample.
#[derive(Serialize, Deserialize)]
struct DetectionRow {
    #[serde(flatten)]
    equation: EquationInstance,
    tool_output: i64,
    gold: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<PerturbationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detail: Option<i32>,
}

impl From<DetectionSample> for DetectionRow {
    fn from(s: DetectionSample) -> Self {
        Self {
            equation: s.equation,
            tool_output: s.tool_output,
            gold: s.gold,
            kind: s.perturbation.map(|p| p.kind),
            detail: s.perturbation.and_then(|p| p.detail),
        }
    }
}

impl TryFrom<DetectionRow> for DetectionSample {
    type Error = PerturbError;

    fn try_from(row: DetectionRow) -> Result<Self, Self::Error> {
        let perturbation = row.kind.map(|kind| PerturbationResult {
            original: row.equation.ground_truth,
            perturbed: row.tool_output,
            kind,
            detail: row.detail,
        });
        let sample = DetectionSample {
            equation: row.equation,
            tool_output: row.tool_output,
            gold: row.gold,
            perturbation,
        };
        sample.validate()?;
        Ok(sample)
    }
}

/// Every equation once with the correct output (Accept) and once with its
/// broken output (Reject), shuffled. Deterministic in `seed`.
pub fn build_detection_set(dataset: &[EquationInstance], seed: u64) -> Result<Vec<DetectionSample>, PerturbError> {
    if dataset.is_empty() {
        return Err(PerturbError::EmptyDataset);
    }
    let broken = perturb_dataset(dataset, seed)?;
    let mut samples = Vec::with_capacity(dataset.len() * 2);
    for (eq, p) in dataset.iter().zip(broken) {
        samples.push(DetectionSample::correct(eq.clone()));
        samples.push(DetectionSample::broken(eq.clone(), p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    samples.shuffle(&mut rng);
    Ok(samples)
}

/// Held-out exemplars for few-shot prompts: `count` equations generated from
/// `seed` whose rendered form does not occur in `exclude`, cycling through the
/// difficulty bands. Even positions carry a broken output, odd ones the
/// correct output. Ids are prefixed `fs`.
pub fn holdout_pool(seed: u64, exclude: &[EquationInstance], count: usize) -> Result<Vec<DetectionSample>, PerturbError> {
    let taken: HashSet<&str> = exclude.iter().map(|e| e.rendered.as_str()).collect();
    let candidates = exprcore::generate_dataset(seed, count.max(1) * 2)?;
    let mut by_band: Vec<Vec<EquationInstance>> = vec![Vec::new(); 3];
    for (band, bucket) in exprcore::Difficulty::ALL.iter().zip(by_band.iter_mut()) {
        bucket.extend(
            candidates
                .iter()
                .filter(|c| c.difficulty == *band && !taken.contains(c.rendered.as_str()))
                .cloned(),
        );
        bucket.reverse();
    }
    let mut pool = Vec::with_capacity(count);
    let mut band = 0;
    while pool.len() < count {
        let Some(mut eq) = (0..3).find_map(|k| by_band[(band + k) % 3].pop()) else {
            break;
        };
        band = (band + 1) % 3;
        eq.id = format!("fs{}", pool.len());
        let i = pool.len() as u64;
        let sample = if i.is_multiple_of(2) {
            let kind = sample_kind(eq.ground_truth, derive_seed(seed, 2 * i));
            let p = perturb(eq.ground_truth, kind, derive_seed(seed, 2 * i + 1))?;
            DetectionSample::broken(eq, p)
        } else {
            DetectionSample::correct(eq)
        };
        pool.push(sample);
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deviation::levenshtein;
    use std::collections::HashMap;

    #[test]
    fn documented_examples() {
        let r = perturb(25, PerturbationKind::SignInversion, 0).unwrap();
        assert_eq!(r.perturbed, -25);
        assert_eq!(r.detail, None);

        let r = perturb(25, PerturbationKind::DigitReplacement, 3).unwrap();
        r.check().unwrap();
        assert_eq!(digits(r.perturbed).len(), 2);

        let r = shift_magnitude(25, 1, 0).unwrap();
        r.check().unwrap();
        assert_eq!(digits(r.perturbed).len(), 3);
    }

    #[test]
    fn zero_cannot_be_negated() {
        assert!(matches!(
            perturb(0, PerturbationKind::SignInversion, 1),
            Err(PerturbError::Infeasible { value: 0, .. })
        ));
        for seed in 0..200 {
            assert_ne!(sample_kind(0, seed), PerturbationKind::SignInversion);
        }
    }

    #[test]
    fn short_values_cannot_lose_digits() {
        assert!(shift_magnitude(7, -1, 0).is_err());
        assert!(shift_magnitude(42, -2, 0).is_err());
        assert!(shift_magnitude(0, -1, 0).is_err());
        assert!(shift_magnitude(25, 4, 0).is_err());
        assert!(perturb(i64::MIN, PerturbationKind::SignInversion, 0).is_err());
        assert!(perturb(i64::MAX, PerturbationKind::DigitReplacement, 0).is_err());
        assert_eq!(feasible_magnitude_deltas(7), vec![1, 2, 3]);
        assert_eq!(feasible_magnitude_deltas(42), vec![-1, 1, 2, 3]);
        assert_eq!(feasible_magnitude_deltas(-420), vec![-2, -1, 1, 2, 3]);
    }

    #[test]
    fn removal_never_leaves_a_leading_zero() {
        for seed in 0..500 {
            let r = shift_magnitude(1005, -1, seed).unwrap();
            r.check().unwrap();
            assert!(!digits(r.perturbed).starts_with('0'));
            let r = shift_magnitude(-100, -2, seed).unwrap();
            assert_eq!(r.perturbed, -1);
        }
    }

    #[test]
    fn single_digit_replacement_avoids_zero() {
        for seed in 0..300 {
            for v in [-9, -1, 0, 1, 5, 9] {
                let r = perturb(v, PerturbationKind::DigitReplacement, seed).unwrap();
                r.check().unwrap();
                assert_ne!(r.perturbed, 0);
            }
        }
    }

    #[test]
    fn perturbation_is_deterministic() {
        for kind in PerturbationKind::ALL {
            assert_eq!(perturb(123456, kind, 9), perturb(123456, kind, 9));
        }
        assert_eq!(sample_kind(25, 11), sample_kind(25, 11));
    }

    #[test]
    fn edit_distance_of_replacement_and_sign_is_one() {
        for seed in 0..1000 {
            let v = (seed as i64 * 7919) % 200_001 - 100_000;
            let r = perturb(v, PerturbationKind::DigitReplacement, seed).unwrap();
            assert_eq!(levenshtein(&v.to_string(), &r.perturbed.to_string()), 1);
            if v != 0 {
                let r = perturb(v, PerturbationKind::SignInversion, seed).unwrap();
                assert_eq!(levenshtein(&v.to_string(), &r.perturbed.to_string()), 1);
            }
        }
    }

    #[test]
    fn kinds_are_uniform_for_a_two_digit_value() {
        // n = 6000, p = 1/3: sigma = sqrt(n p (1 - p)) ~= 36.5, so 3 sigma ~= 110.
        let mut counts: HashMap<PerturbationKind, usize> = HashMap::new();
        for seed in 0..6000 {
            *counts.entry(sample_kind(25, seed)).or_default() += 1;
        }
        let sigma = (6000.0_f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for kind in PerturbationKind::ALL {
            let c = counts[&kind] as f64;
            assert!((c - 2000.0).abs() < 3.0 * sigma, "{kind}: {c}");
        }
    }

    #[test]
    fn detection_set_is_balanced_and_paired() {
        let data = exprcore::generate_dataset(7, 100).unwrap();
        let set = build_detection_set(&data, 11).unwrap();
        assert_eq!(set.len(), 600);
        assert_eq!(set.iter().filter(|s| s.gold == Verdict::Accept).count(), 300);
        let mut by_id: HashMap<&str, Vec<&DetectionSample>> = HashMap::new();
        for s in &set {
            s.validate().unwrap();
            by_id.entry(&s.equation.id).or_default().push(s);
        }
        assert_eq!(by_id.len(), 300);
        let pair = &by_id["e042"];
        assert_eq!(pair.len(), 2);
        assert_eq!(pair[0].equation.rendered, pair[1].equation.rendered);
        assert_ne!(pair[0].gold, pair[1].gold);
        for s in set.iter().filter(|s| s.gold == Verdict::Reject) {
            assert_ne!(s.tool_output, s.equation.ground_truth);
        }
        assert_eq!(set, build_detection_set(&data, 11).unwrap());
        assert_ne!(set, build_detection_set(&data, 12).unwrap());
        assert!(matches!(build_detection_set(&[], 1), Err(PerturbError::EmptyDataset)));
    }

    #[test]
    fn detection_rows_round_trip_and_reject_inconsistency() {
        let data = exprcore::generate_dataset(2, 5).unwrap();
        for s in build_detection_set(&data, 3).unwrap() {
            let line = serde_json::to_string(&s).unwrap();
            let v: serde_json::Value = serde_json::from_str(&line).unwrap();
            assert_eq!(v.get("kind").is_some(), s.gold == Verdict::Reject);
            assert_eq!(serde_json::from_str::<DetectionSample>(&line).unwrap(), s);
        }
        let bad = r#"{"id":"e0","rendered":"(2 + 3) * 5","ground_truth":25,"difficulty":"easy","shape":"left_nested","operands":[2,3,5],"operators":["add","mul"],"tool_output":21,"gold":"accept"}"#;
        assert!(serde_json::from_str::<DetectionSample>(bad).is_err());
    }

    #[test]
    fn holdout_pool_avoids_evaluated_equations() {
        let data = exprcore::generate_dataset(7, 100).unwrap();
        let pool = holdout_pool(1007, &data, 5).unwrap();
        assert_eq!(pool.len(), 5);
        let taken: HashSet<_> = data.iter().map(|d| d.rendered.clone()).collect();
        for (i, s) in pool.iter().enumerate() {
            assert!(!taken.contains(&s.equation.rendered));
            assert_eq!(s.gold == Verdict::Reject, i % 2 == 0);
            s.validate().unwrap();
        }
        let bands: HashSet<_> = pool.iter().map(|s| s.equation.difficulty).collect();
        assert_eq!(bands.len(), 3);
    }
}
