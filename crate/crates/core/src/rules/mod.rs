//! The restricted rule language eligibility checkers are written in.
//!
//! Programs are parsed once, then evaluated against a [`FeatureStore`] any
//! number of times. An evaluation either decides eligibility, recording the
//! set of node ids it executed, or stops at the first feature the store does
//! not hold yet.
//!
//! [`FeatureStore`]: crate::features::FeatureStore

mod ast;
mod eval;
mod lexer;
mod parser;
mod pretty;

use std::fmt;

use thiserror::Error;

pub use ast::*;
pub use eval::{evaluate, EvalError, EvalOutcome, FeatureLookup, Trace};
pub use parser::parse_program;
pub use pretty::{node_summary, pretty_print};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: Position, message: String },
    #[error("forbidden construct at {pos}: {construct}")]
    ForbiddenConstruct { pos: Position, construct: String },
    #[error("missing return: execution can reach the end of the program near line {} without returning", pos.line)]
    MissingReturn { pos: Position },
}

impl ParseError {
    pub(crate) fn syntax(pos: Position, message: impl Into<String>) -> Self {
        ParseError::Syntax {
            pos,
            message: message.into(),
        }
    }

    pub fn position(&self) -> Position {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::ForbiddenConstruct { pos, .. }
            | ParseError::MissingReturn { pos } => *pos,
        }
    }
}

/// Read the `#opportunity: <id>` header of a checker file, if present.
pub fn opportunity_header(source: &str) -> Option<&str> {
    source
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .and_then(|l| l.strip_prefix('#'))
        .and_then(|l| l.trim_start().strip_prefix("opportunity:"))
        .map(str::trim)
        .filter(|id| !id.is_empty())
}

/// Render a program as a checker file: header line plus canonical source.
pub fn to_checker_file(program: &RuleProgram) -> String {
    format!(
        "#opportunity: {}\n{}\n",
        program.opportunity_id,
        pretty_print(program)
    )
}
