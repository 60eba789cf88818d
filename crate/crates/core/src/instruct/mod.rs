//! Natural-language instructions to plan programs: generation, parsing and
//! interpretation of a restricted, Python-like navigation language.

mod ast;
mod exec;
mod generate;
mod lexer;
mod parser;

use thiserror::Error;

use crate::providers::ProviderError;

pub use ast::{format_num, BinOp, Call, Expr, Program, Stmt};
pub use exec::{execute_program, ExecError, ExecTrace, SceneWorld, SubgoalRecord, Value, World};
pub use generate::{fallback_program, generate_plan, prompt_examples, split_clauses, PlanSource, MULTIMODAL_PROMPT, SPATIAL_PROMPT};
pub use lexer::{tokenize, Tok, Token};
pub use parser::{canonical_name, parse_program, WHITELIST};

#[derive(Debug, Error)]
pub enum InstructError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: call to {name:?} is not allowed")]
    NotWhitelisted { name: String, line: usize, col: usize },
    #[error("{line}:{col}: {what:?} statements are not allowed")]
    Forbidden { what: String, line: usize, col: usize },
    #[error("unsupported instruction {0:?}")]
    Unsupported(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[cfg(test)]
mod tests;
