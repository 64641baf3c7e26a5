//! Check findings and their text/JSON renderings.

use std::fmt;

use serde::Serialize;

use crate::span::{SourceMap, Span};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Note,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Error => "ERROR",
            Severity::Warning => "WARNING",
            Severity::Note => "NOTE",
        }
    }
}

macro_rules! codes {
    ($($name:ident),* $(,)?) => {
        /// Stable machine-readable diagnostic codes.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Code { $($name),* }

        impl Code {
            pub fn as_str(self) -> &'static str {
                match self { $(Code::$name => stringify!($name)),* }
            }
        }
    };
}

codes! {
    // type tables and architecture graphs
    DuplicateType,
    BadPortSpec,
    BadRoleSpec,
    UnknownPortType,
    UnknownInstance,
    UnknownPort,
    UnknownConnector,
    UnknownRole,
    DuplicateAttachment,
    PortMultiplicityExceeded,
    RoleUnderfilled,
    RoleOverfilled,
    // syntax
    ParseError,
    OversizeInput,
    StageNotAFilter,
    EmptyPipeline,
    // name binding and checks
    UnknownType,
    DuplicateName,
    TypeMismatch,
    UnboundExternalInput,
    UnboundExternalOutput,
    StyleViolation,
    UnknownStyle,
    // lowering
    MissingImplementation,
    NotStateless,
    UnsupportedLowering,
    TooManySites,
    // relay registry
    DuplicateLogicalName,
    NotFound,
    AmbiguousName,
    InvalidName,
    // driver
    LibraryNotFound,
    Io,
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Code {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// One check finding.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: Code,
    pub span: Option<Span>,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: Code, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            span: None,
            message: message.into(),
        }
    }

    pub fn warning(code: Code, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(code, message)
        }
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = Some(span);
        self
    }

    /// Attaches `span` only if none is set yet.
    pub fn or_span(mut self, span: Option<Span>) -> Self {
        if self.span.is_none() {
            self.span = span;
        }
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// `SEVERITY CODE file:line:col message`
    pub fn render(&self, sources: &SourceMap) -> String {
        let (file, line, col) = match self.span {
            Some(span) => {
                let (line, col) = sources.line_col(span.file, span.start);
                (sources.name(span.file), line, col)
            }
            None => ("-", 0, 0),
        };
        format!(
            "{} {} {}:{}:{} {}",
            self.severity.as_str(),
            self.code,
            file,
            line,
            col,
            self.message
        )
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}",
            self.severity.as_str(),
            self.code,
            self.message
        )
    }
}

impl std::error::Error for Diagnostic {}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

#[derive(Serialize)]
struct JsonSpan<'a> {
    file: &'a str,
    line: usize,
    col: usize,
    start: u32,
    end: u32,
}

#[derive(Serialize)]
struct JsonDiagnostic<'a> {
    severity: Severity,
    code: Code,
    span: Option<JsonSpan<'a>>,
    message: &'a str,
}

/// JSON array with keys in the order severity, code, span, message.
pub fn to_json(diags: &[Diagnostic], sources: &SourceMap) -> String {
    let items: Vec<JsonDiagnostic<'_>> = diags
        .iter()
        .map(|d| JsonDiagnostic {
            severity: d.severity,
            code: d.code,
            span: d.span.map(|s| {
                let (line, col) = sources.line_col(s.file, s.start);
                JsonSpan {
                    file: sources.name(s.file),
                    line,
                    col,
                    start: s.start,
                    end: s.end,
                }
            }),
            message: &d.message,
        })
        .collect();
    serde_json::to_string_pretty(&items).expect("diagnostics serialize")
}
