//! Fault injection and silent-error detection for tool-augmented language
//! models.
//!
//! The crate covers the full offline pipeline: generate arithmetic tasks
//! ([`exprcore`]), corrupt calculator outputs ([`perturb`]), measure how far an
//! output deviates from the truth ([`deviation`]), render intervention prompts
//! ([`promptkit`]), query real or scripted models ([`modelio`]), run and score
//! the experiment suites ([`runner`]) and write result artifacts ([`report`]).

pub mod exprcore;
pub mod perturb;
pub mod deviation;
pub mod trajectory;
pub mod promptkit;
pub mod modelio;
pub mod runner;
pub mod report;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Gold label or model judgement on a tool output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Accept => "Accept",
            Verdict::Reject => "Reject",
        })
    }
}
