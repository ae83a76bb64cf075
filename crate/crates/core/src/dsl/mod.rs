//! Strategy DSL: program model, text format, indicators, and evaluation.

pub mod baselines;
pub mod eval;
pub mod indicators;
pub mod parse;
pub mod program;

pub use baselines::{builtin_baseline, BaselineKind};
pub use eval::{evaluate_targets, EvaluationError, Evaluator};
pub use parse::{parse_program, parse_program_with};
pub use program::{DslOptions, Program, ProgramParseError};
