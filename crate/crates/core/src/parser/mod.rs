//! Textual front end: lexing, parsing, canonical formatting and pipeline
//! desugaring.

pub mod ast;
mod desugar;
mod format;
mod lexer;
mod parse;

use std::fmt;

pub use desugar::{desugar_pipeline, pipe_name, Declaration};
pub use format::{format, format_library};
pub use parse::{parse, parse_file, parse_library, MAX_INPUT};

use crate::diag::{Code, Diagnostic};
use crate::span::{FileId, Span};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    Oversize,
}

/// The first syntax error in a source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub span: Span,
    pub expected: Vec<String>,
    pub found: String,
    pub message: String,
}

impl ParseError {
    pub(crate) fn syntax(
        span: Span,
        expected: Vec<String>,
        found: String,
        message: impl Into<String>,
    ) -> Self {
        ParseError {
            kind: ParseErrorKind::Syntax,
            span,
            expected,
            found,
            message: message.into(),
        }
    }

    pub(crate) fn oversize(file: FileId, len: usize) -> Self {
        ParseError {
            kind: ParseErrorKind::Oversize,
            span: Span::new(file, 0, 0),
            expected: vec![],
            found: format!("{len} bytes"),
            message: format!("input is {len} bytes; the limit is {MAX_INPUT}"),
        }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        let code = match self.kind {
            ParseErrorKind::Syntax => Code::ParseError,
            ParseErrorKind::Oversize => Code::OversizeInput,
        };
        Diagnostic::error(code, self.message.clone()).with_span(self.span)
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ParseError {}
