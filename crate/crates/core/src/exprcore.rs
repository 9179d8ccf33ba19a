//! Three-operand integer arithmetic: generation, rendering, parsing and
//! exact evaluation.
//!
//! Every expression has exactly three operands and two operators drawn from
//! `{+, -, *}`. The inner binary node is always parenthesized when rendered,
//! so the string shown to a model never depends on precedence rules.

use std::collections::HashSet;
use std::fmt;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest operand magnitude accepted by [`Expression::new`] and [`parse`].
///
/// Three operands of this size multiply to at most 10^18, which fits `i64`.
pub const MAX_OPERAND: i64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported expression shape: {0}")]
    Shape(String),
    #[error("operand {0} outside the supported range ±{MAX_OPERAND}")]
    OperandRange(i64),
    #[error("could not draw {wanted} distinct {band} expressions after {attempts} attempts")]
    Exhausted {
        band: Difficulty,
        wanted: usize,
        attempts: usize,
    },
    #[error("instance {id}: {message}")]
    Inconsistent { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    /// Inclusive interval operands are sampled from.
    pub fn operand_range(self) -> RangeInclusive<i64> {
        match self {
            Difficulty::Easy => -20..=20,
            Difficulty::Medium => -100..=100,
            Difficulty::Hard => -1000..=1000,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Add, Op::Sub, Op::Mul];

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
        }
    }

    pub fn apply(self, lhs: i64, rhs: i64) -> i64 {
        match self {
            Op::Add => lhs + rhs,
            Op::Sub => lhs - rhs,
            Op::Mul => lhs * rhs,
        }
    }
}

/// Which side of the top-level operator holds the parenthesized pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `(a op0 b) op1 c`
    LeftNested,
    /// `a op0 (b op1 c)`
    RightNested,
}

/// A three-operand expression. `operators[0]` sits between operands 0 and 1,
/// `operators[1]` between operands 1 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawExpression")]
pub struct Expression {
    shape: Shape,
    operands: [i64; 3],
    operators: [Op; 2],
}

#[derive(Deserialize)]
struct RawExpression {
    shape: Shape,
    operands: [i64; 3],
    operators: [Op; 2],
}

impl TryFrom<RawExpression> for Expression {
    type Error = ExprError;

    fn try_from(raw: RawExpression) -> Result<Self, Self::Error> {
        Expression::new(raw.shape, raw.operands, raw.operators)
    }
}

impl Expression {
    pub fn new(shape: Shape, operands: [i64; 3], operators: [Op; 2]) -> Result<Self, ExprError> {
        if let Some(&bad) = operands.iter().find(|v| v.abs() > MAX_OPERAND) {
            return Err(ExprError::OperandRange(bad));
        }
        Ok(Self {
            shape,
            operands,
            operators,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn operands(&self) -> [i64; 3] {
        self.operands
    }

    pub fn operators(&self) -> [Op; 2] {
        self.operators
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self))
    }
}

/// Exact value of the expression.
pub fn evaluate(expr: &Expression) -> i64 {
    let [a, b, c] = expr.operands;
    let [op0, op1] = expr.operators;
    match expr.shape {
        Shape::LeftNested => op1.apply(op0.apply(a, b), c),
        Shape::RightNested => op0.apply(a, op1.apply(b, c)),
    }
}

fn operand(value: i64, after_operator: bool) -> String {
    if value < 0 && after_operator {
        format!("({value})")
    } else {
        value.to_string()
    }
}

/// Renders with single spaces between tokens, `*` for multiplication, and
/// negative operands wrapped as `(-n)` whenever an operator precedes them.
pub fn render(expr: &Expression) -> String {
    let [a, b, c] = expr.operands;
    let [op0, op1] = expr.operators;
    match expr.shape {
        Shape::LeftNested => format!(
            "({} {} {}) {} {}",
            operand(a, false),
            op0.symbol(),
            operand(b, true),
            op1.symbol(),
            operand(c, true)
        ),
        Shape::RightNested => format!(
            "{} {} ({} {} {})",
            operand(a, false),
            op0.symbol(),
            operand(b, false),
            op1.symbol(),
            operand(c, true)
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    Int(i64),
    Op(Op),
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let ch = bytes[i];
        match ch {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                out.push((i, Token::Op(Op::Add)));
                i += 1;
            }
            b'-' => {
                out.push((i, Token::Op(Op::Sub)));
                i += 1;
            }
            b'*' => {
                out.push((i, Token::Op(Op::Mul)));
                i += 1;
            }
            b'(' => {
                out.push((i, Token::LParen));
                i += 1;
            }
            b')' => {
                out.push((i, Token::RParen));
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let value: i64 = text[start..i].parse().map_err(|_| ExprError::Parse {
                    offset: start,
                    message: "integer literal too large".into(),
                })?;
                out.push((start, Token::Int(value)));
            }
            _ => {
                let bad = text[i..].chars().next().unwrap_or('?');
                return Err(ExprError::Parse {
                    offset: i,
                    message: format!("unexpected character {bad:?}"),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
enum Node {
    Lit(i64),
    Bin(Box<Node>, Op, Box<Node>),
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).map(|(_, t)| *t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error(&self, message: &str) -> ExprError {
        ExprError::Parse {
            offset: self.offset(),
            message: message.to_string(),
        }
    }

    // additive := term (('+' | '-') term)*
    fn additive(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ (Op::Add | Op::Sub))) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(Box::new(lhs), op, Box::new(rhs));
        }
        Ok(lhs)
    }

    // term := primary ('*' primary)*
    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.primary()?;
        while let Some(Token::Op(Op::Mul)) = self.peek() {
            self.pos += 1;
            let rhs = self.primary()?;
            lhs = Node::Bin(Box::new(lhs), Op::Mul, Box::new(rhs));
        }
        Ok(lhs)
    }

    // primary := INT | '-' INT | '(' additive ')'
    fn primary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(Token::Int(v)) => {
                self.pos += 1;
                Ok(Node::Lit(v))
            }
            Some(Token::Op(Op::Sub)) => {
                self.pos += 1;
                match self.peek() {
                    Some(Token::Int(v)) => {
                        self.pos += 1;
                        Ok(Node::Lit(-v))
                    }
                    _ => Err(self.error("expected integer after unary minus")),
                }
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.additive()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.error("expected ')'")),
                }
            }
            Some(_) => Err(self.error("expected operand")),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

fn literal(node: &Node) -> Option<i64> {
    match node {
        Node::Lit(v) => Some(*v),
        Node::Bin(..) => None,
    }
}

/// Parses the renderer's grammar back into an [`Expression`].
///
/// Standard precedence applies when the input omits the grouping parentheses,
/// so `5 - (-3) + 1` is read as `(5 - (-3)) + 1`.
pub fn parse(text: &str) -> Result<Expression, ExprError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let tree = parser.additive()?;
    if parser.pos != parser.tokens.len() {
        return Err(parser.error("trailing input"));
    }

    let shape_error = || ExprError::Shape("expected exactly three operands and two operators".into());
    let Node::Bin(lhs, top, rhs) = tree else {
        return Err(shape_error());
    };
    match (&*lhs, &*rhs) {
        (Node::Bin(a, op0, b), c) => {
            let (a, b, c) = (literal(a), literal(b), literal(c));
            match (a, b, c) {
                (Some(a), Some(b), Some(c)) => Expression::new(Shape::LeftNested, [a, b, c], [*op0, top]),
                _ => Err(shape_error()),
            }
        }
        (a, Node::Bin(b, op1, c)) => match (literal(a), literal(b), literal(c)) {
            (Some(a), Some(b), Some(c)) => Expression::new(Shape::RightNested, [a, b, c], [top, *op1]),
            _ => Err(shape_error()),
        },
        _ => Err(shape_error()),
    }
}

/// One generated equation with its exact answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquationInstance {
    pub id: String,
    pub rendered: String,
    pub ground_truth: i64,
    pub difficulty: Difficulty,
    #[serde(flatten)]
    pub expression: Expression,
}

impl EquationInstance {
    pub fn new(id: impl Into<String>, expression: Expression, difficulty: Difficulty) -> Self {
        Self {
            id: id.into(),
            rendered: render(&expression),
            ground_truth: evaluate(&expression),
            difficulty,
            expression,
        }
    }

    /// Checks that `rendered` and `ground_truth` agree with `expression`.
    /// Useful after loading instances from disk.
    pub fn validate(&self) -> Result<(), ExprError> {
        let inconsistent = |message: String| ExprError::Inconsistent {
            id: self.id.clone(),
            message,
        };
        if render(&self.expression) != self.rendered {
            return Err(inconsistent(format!(
                "rendered {:?} does not match its expression",
                self.rendered
            )));
        }
        let value = evaluate(&parse(&self.rendered)?);
        if value != self.ground_truth {
            return Err(inconsistent(format!(
                "ground_truth {} but expression evaluates to {value}",
                self.ground_truth
            )));
        }
        Ok(())
    }
}

fn sample_expression(rng: &mut impl Rng, band: Difficulty) -> Expression {
    let range = band.operand_range();
    let shape = if rng.random_bool(0.5) {
        Shape::LeftNested
    } else {
        Shape::RightNested
    };
    let operands = [
        rng.random_range(range.clone()),
        rng.random_range(range.clone()),
        rng.random_range(range),
    ];
    let operators = [
        Op::ALL[rng.random_range(0..Op::ALL.len())],
        Op::ALL[rng.random_range(0..Op::ALL.len())],
    ];
    Expression::new(shape, operands, operators).expect("band ranges are within MAX_OPERAND")
}

/// Generates `counts[b]` distinct equations for each band, in band order
/// Easy, Medium, Hard. Ids are `e000`, `e001`, ... over the whole dataset.
pub fn generate_with_counts(seed: u64, counts: [usize; 3]) -> Result<Vec<EquationInstance>, ExprError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = counts.iter().sum();
    let width = total.saturating_sub(1).to_string().len().max(3);
    let mut seen = HashSet::with_capacity(total);
    let mut out = Vec::with_capacity(total);

    for (band, &wanted) in Difficulty::ALL.iter().zip(counts.iter()) {
        let max_attempts = wanted.saturating_mul(100).max(1000);
        let mut attempts = 0;
        let mut produced = 0;
        while produced < wanted {
            if attempts == max_attempts {
                return Err(ExprError::Exhausted {
                    band: *band,
                    wanted,
                    attempts,
                });
            }
            attempts += 1;
            let expr = sample_expression(&mut rng, *band);
            let rendered = render(&expr);
            if !seen.insert(rendered) {
                continue;
            }
            let id = format!("e{:0width$}", out.len());
            out.push(EquationInstance::new(id, expr, *band));
            produced += 1;
        }
    }
    Ok(out)
}

/// Even split: `per_difficulty` equations in each of the three bands.
pub fn generate_dataset(seed: u64, per_difficulty: usize) -> Result<Vec<EquationInstance>, ExprError> {
    generate_with_counts(seed, [per_difficulty; 3])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expr(shape: Shape, operands: [i64; 3], operators: [Op; 2]) -> Expression {
        Expression::new(shape, operands, operators).unwrap()
    }

    // Independent oracle: char-level recursive descent that evaluates as it
    // reads, sharing nothing with the tokenizer or parser above.
    fn oracle_eval(text: &str) -> i64 {
        fn skip(s: &[u8], i: &mut usize) {
            while *i < s.len() && s[*i] == b' ' {
                *i += 1;
            }
        }
        fn atom(s: &[u8], i: &mut usize) -> i64 {
            skip(s, i);
            if s[*i] == b'(' {
                *i += 1;
                let v = sum(s, i);
                skip(s, i);
                assert_eq!(s[*i], b')');
                *i += 1;
                return v;
            }
            let neg = s[*i] == b'-';
            if neg {
                *i += 1;
            }
            let mut v = 0i64;
            while *i < s.len() && s[*i].is_ascii_digit() {
                v = v * 10 + i64::from(s[*i] - b'0');
                *i += 1;
            }
            if neg {
                -v
            } else {
                v
            }
        }
        fn product(s: &[u8], i: &mut usize) -> i64 {
            let mut v = atom(s, i);
            loop {
                skip(s, i);
                if *i < s.len() && s[*i] == b'*' {
                    *i += 1;
                    v *= atom(s, i);
                } else {
                    return v;
                }
            }
        }
        fn sum(s: &[u8], i: &mut usize) -> i64 {
            let mut v = product(s, i);
            loop {
                skip(s, i);
                match s.get(*i) {
                    Some(b'+') => {
                        *i += 1;
                        v += product(s, i);
                    }
                    Some(b'-') => {
                        *i += 1;
                        v -= product(s, i);
                    }
                    _ => return v,
                }
            }
        }
        let mut i = 0;
        sum(text.as_bytes(), &mut i)
    }

    #[test]
    fn renders_reference_examples() {
        let fig = expr(Shape::LeftNested, [2, 3, 5], [Op::Add, Op::Mul]);
        assert_eq!(render(&fig), "(2 + 3) * 5");
        assert_eq!(evaluate(&fig), 25);

        let example = expr(Shape::RightNested, [9, 20, 7], [Op::Mul, Op::Add]);
        assert_eq!(render(&example), "9 * (20 + 7)");
        assert_eq!(evaluate(&example), 243);
        assert_eq!(oracle_eval("9 * (20 + 7)"), 243);
    }

    #[test]
    fn negative_operands_are_wrapped_after_operators() {
        let e = expr(Shape::RightNested, [5, -3, 1], [Op::Sub, Op::Add]);
        assert_eq!(render(&e), "5 - (-3 + 1)");
        let e = expr(Shape::LeftNested, [5, -3, -1], [Op::Sub, Op::Add]);
        assert_eq!(render(&e), "(5 - (-3)) + (-1)");
        let e = expr(Shape::LeftNested, [-4, 2, 1], [Op::Mul, Op::Add]);
        assert_eq!(render(&e), "(-4 * 2) + 1");
    }

    #[test]
    fn zero_annihilates() {
        let e = expr(Shape::RightNested, [0, 17, -4], [Op::Mul, Op::Add]);
        assert_eq!(evaluate(&e), 0);
    }

    #[test]
    fn parses_without_grouping() {
        let e = parse("5 - (-3) + 1").unwrap();
        assert_eq!(evaluate(&e), 9);
        assert_eq!(e.shape(), Shape::LeftNested);

        let e = parse("2 + 3 * 4").unwrap();
        assert_eq!(e.shape(), Shape::RightNested);
        assert_eq!(evaluate(&e), 14);
    }

    #[test]
    fn parse_round_trips_renderer_output() {
        let e = parse("(2 + 3) * 5").unwrap();
        assert_eq!(e, expr(Shape::LeftNested, [2, 3, 5], [Op::Add, Op::Mul]));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        assert_eq!(
            parse("2 + "),
            Err(ExprError::Parse {
                offset: 4,
                message: "unexpected end of input".into()
            })
        );
        match parse("2 + ? 3") {
            Err(ExprError::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("unexpected {other:?}"),
        }
        match parse("(2 + 3 * 5") {
            Err(ExprError::Parse { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_other_shapes() {
        assert!(matches!(parse("2 + 3"), Err(ExprError::Shape(_))));
        assert!(matches!(parse("1 + 2 + 3 + 4"), Err(ExprError::Shape(_))));
        assert!(matches!(parse("7"), Err(ExprError::Shape(_))));
        assert!(matches!(parse("(1 + 2) * (3 + 4)"), Err(ExprError::Shape(_))));
        assert!(matches!(parse("1 + 2 + 3000000"), Err(ExprError::OperandRange(3_000_000))));
    }

    #[test]
    fn dataset_has_even_split_and_ranges() {
        let data = generate_dataset(7, 100).unwrap();
        assert_eq!(data.len(), 300);
        for band in Difficulty::ALL {
            let members: Vec<_> = data.iter().filter(|d| d.difficulty == band).collect();
            assert_eq!(members.len(), 100);
            let range = band.operand_range();
            for m in members {
                assert!(m.expression.operands().iter().all(|v| range.contains(v)));
            }
        }
        let distinct: HashSet<_> = data.iter().map(|d| d.rendered.as_str()).collect();
        assert_eq!(distinct.len(), 300);
        assert_eq!(data[42].id, "e042");
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = serde_json::to_string(&generate_dataset(7, 100).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_dataset(7, 100).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_dataset(8, 100).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uneven_counts_are_supported() {
        let data = generate_with_counts(1, [2, 0, 5]).unwrap();
        assert_eq!(data.len(), 7);
        assert_eq!(data.iter().filter(|d| d.difficulty == Difficulty::Hard).count(), 5);
    }

    #[test]
    fn instances_validate_and_roundtrip_json() {
        for inst in generate_dataset(3, 20).unwrap() {
            inst.validate().unwrap();
            let line = serde_json::to_string(&inst).unwrap();
            let back: EquationInstance = serde_json::from_str(&line).unwrap();
            assert_eq!(back, inst);
        }
        let mut bad = generate_dataset(3, 1).unwrap().remove(0);
        bad.ground_truth += 1;
        assert!(matches!(bad.validate(), Err(ExprError::Inconsistent { .. })));
    }

    #[test]
    fn json_field_names() {
        let inst = EquationInstance::new("e000", expr(Shape::LeftNested, [2, 3, 5], [Op::Add, Op::Mul]), Difficulty::Easy);
        let v: serde_json::Value = serde_json::to_value(&inst).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "id": "e000",
                "rendered": "(2 + 3) * 5",
                "ground_truth": 25,
                "difficulty": "easy",
                "shape": "left_nested",
                "operands": [2, 3, 5],
                "operators": ["add", "mul"],
            })
        );
    }

    #[test]
    fn evaluator_agrees_with_string_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let band = Difficulty::ALL[rng.random_range(0..3)];
            let e = sample_expression(&mut rng, band);
            let rendered = render(&e);
            assert_eq!(evaluate(&e), oracle_eval(&rendered), "{rendered}");
            assert_eq!(parse(&rendered).unwrap(), e);
        }
    }
}
