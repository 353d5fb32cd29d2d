//! MiniLang: the small imperative language the toolkit mutates.
//!
//! A file is a list of functions over `int`, `bool` and `unit` values with
//! `let`, assignment, `+=`/`-=`, `if`/`else`, `while`, `return` and expression
//! statements. Parsing yields a [`Program`]: a flat arena of [`Node`]s whose
//! ids are assigned in preorder, so every subtree is a contiguous id range.

mod ast;
pub mod lexer;
mod parser;
mod printer;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use ast::{Node, NodeId, NodeKind, Program, Span, Type};
pub use parser::{parse, parse_fragment, Fragment};
pub use printer::print;

/// A source file inside a revision, identified by its path relative to the
/// revision's `src/` directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        SourceFile {
            path: path.into(),
            text: text.into(),
        }
    }

    pub fn parse(&self) -> Result<Program, ParseError> {
        parse(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: u32,
    pub column: u32,
    pub expected: String,
    pub found: String,
}

impl ParseError {
    pub fn new(line: u32, column: u32, expected: &str, found: &str) -> Self {
        ParseError {
            line,
            column,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

/// Parse raw bytes; invalid UTF-8 is reported as a parse error at the
/// offending position rather than rejected up front.
pub fn parse_bytes(bytes: &[u8]) -> Result<Program, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse(s),
        Err(e) => {
            let valid = std::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or_default();
            let line = valid.matches('\n').count() as u32 + 1;
            let col = valid.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u32 + 1;
            Err(ParseError::new(line, col, "UTF-8 text", "invalid byte sequence"))
        }
    }
}

/// Style-normalized form of a file: the token stream joined by single
/// spaces. Comments and all whitespace differences disappear, so two files
/// are style-equivalent iff their normalized strings are equal.
pub fn normalize(text: &str) -> Result<String, ParseError> {
    let program = parse(text)?;
    Ok(join_tokens(&program.tokens))
}

pub(crate) fn join_tokens(tokens: &[lexer::Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.text);
    }
    out
}

/// Normalized token text of every source line that carries at least one
/// token, keyed by 1-based line number.
pub fn line_texts(program: &Program) -> BTreeMap<u32, String> {
    let mut lines: BTreeMap<u32, String> = BTreeMap::new();
    for t in &program.tokens {
        let entry = lines.entry(t.span.start_line).or_default();
        if !entry.is_empty() {
            entry.push(' ');
        }
        entry.push_str(&t.text);
    }
    lines
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}
