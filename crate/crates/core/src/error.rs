use std::path::PathBuf;

use thiserror::Error;

use crate::hypothesis::PatternId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which vocabulary an id refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdKind {
    Entity,
    Relation,
}

impl std::fmt::Display for IdKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IdKind::Entity => f.write_str("entity"),
            IdKind::Relation => f.write_str("relation"),
        }
    }
}

/// What went wrong while parsing hypothesis text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyntaxErrorKind {
    UnknownToken(String),
    UnbalancedParens,
    UnexpectedEnd,
    TrailingInput,
    Arity { op: char, found: usize },
    NegationPlacement,
    NoPositiveConjunct,
    Expected(&'static str),
}

impl std::fmt::Display for SyntaxErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SyntaxErrorKind::UnknownToken(t) => write!(f, "unknown token `{t}`"),
            SyntaxErrorKind::UnbalancedParens => f.write_str("unbalanced parentheses"),
            SyntaxErrorKind::UnexpectedEnd => f.write_str("unexpected end of input"),
            SyntaxErrorKind::TrailingInput => f.write_str("trailing input after hypothesis"),
            SyntaxErrorKind::Arity { op, found } => {
                write!(f, "operator `{op}` cannot take {found} argument(s)")
            }
            SyntaxErrorKind::NegationPlacement => {
                f.write_str("negation may only appear as a direct child of an intersection")
            }
            SyntaxErrorKind::NoPositiveConjunct => {
                f.write_str("intersection needs at least one non-negated child")
            }
            SyntaxErrorKind::Expected(what) => write!(f, "expected {what}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: {kind} id {id} is not present in the id map")]
    DanglingReference {
        path: PathBuf,
        line: usize,
        kind: IdKind,
        id: u64,
    },

    #[error("{kind} id {id} out of range (vocabulary size {size})")]
    OutOfRange { kind: IdKind, id: u32, size: usize },

    #[error("syntax error at byte {offset}: {kind}")]
    Syntax { offset: usize, kind: SyntaxErrorKind },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("failed to sample a `{pattern}` pair after {attempts} attempts")]
    SamplingFailure { pattern: PatternId, attempts: u32 },

    #[error("pattern `{0}` has no sub-logic decomposition")]
    UnsupportedPattern(PatternId),

    #[error(
        "graph too large for exhaustive search ({entities} entities, {triples} triples; \
         bound is {max_entities} entities and {max_triples} triples)"
    )]
    SizeBound {
        entities: usize,
        triples: usize,
        max_entities: usize,
        max_triples: usize,
    },

    #[error("invalid condition `{input}`: {message}")]
    Condition { input: String, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
