//! Expansion of the `input | A() | B() | output` shorthand into explicit
//! instances, pipes and attachments.

use std::collections::BTreeMap;

use crate::diag::{Code, Diagnostic};
use crate::model::{ExternalStream, TypeTable, FILTER, PIPE};
use crate::parser::ast::PipelineDecl;
use crate::span::Span;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Declaration {
    Instance {
        name: String,
        type_name: String,
        span: Span,
    },
    Connector {
        name: String,
        type_name: String,
        span: Span,
    },
    Attach {
        instance: String,
        port: String,
        connector: String,
        role: String,
        span: Span,
    },
    External {
        stream: ExternalStream,
        connector: String,
        role: String,
        span: Span,
    },
}

pub fn pipe_name(pipeline: &str, index: usize) -> String {
    format!("{pipeline}_p{index}")
}

/// `declared` maps already-declared instance names to their component type.
/// Stages not in it become fresh `Filter` instances.
pub fn desugar_pipeline(
    stmt: &PipelineDecl,
    table: &TypeTable,
    declared: &BTreeMap<String, String>,
) -> Result<Vec<Declaration>, Diagnostic> {
    if stmt.stages.is_empty() {
        return Err(Diagnostic::error(
            Code::EmptyPipeline,
            format!("pipeline `{}` has no stages", stmt.name.text),
        )
        .with_span(stmt.span));
    }

    let mut out = Vec::new();
    for stage in &stmt.stages {
        match declared.get(&stage.text) {
            Some(type_name) => {
                let filter_like = table
                    .component_type(type_name)
                    .is_some_and(|t| t.is_filter_like());
                if !filter_like {
                    return Err(Diagnostic::error(
                        Code::StageNotAFilter,
                        format!(
                            "stage `{}` has type `{type_name}`, which lacks stdin/stdout stream ports",
                            stage.text
                        ),
                    )
                    .with_span(stage.span));
                }
            }
            None => {
                let already = out.iter().any(
                    |d| matches!(d, Declaration::Instance { name, .. } if *name == stage.text),
                );
                if !already {
                    out.push(Declaration::Instance {
                        name: stage.text.clone(),
                        type_name: FILTER.to_string(),
                        span: stage.span,
                    });
                }
            }
        }
    }

    let span = stmt.span;
    let n = stmt.stages.len();
    for i in 0..=n {
        out.push(Declaration::Connector {
            name: pipe_name(&stmt.name.text, i),
            type_name: PIPE.to_string(),
            span,
        });
    }
    let attach = |instance: &str, port: &str, pipe: usize, role: &str| Declaration::Attach {
        instance: instance.to_string(),
        port: port.to_string(),
        connector: pipe_name(&stmt.name.text, pipe),
        role: role.to_string(),
        span,
    };
    out.push(Declaration::External {
        stream: ExternalStream::Input,
        connector: pipe_name(&stmt.name.text, 0),
        role: "source".to_string(),
        span,
    });
    for (i, stage) in stmt.stages.iter().enumerate() {
        out.push(attach(&stage.text, "stdin", i, "sink"));
        out.push(attach(&stage.text, "stdout", i + 1, "source"));
    }
    out.push(Declaration::External {
        stream: ExternalStream::Output,
        connector: pipe_name(&stmt.name.text, n),
        role: "sink".to_string(),
        span,
    });
    Ok(out)
}
