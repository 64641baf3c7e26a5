//! Name resolution, type-matching, completeness, topology and style checks.
//!
//! Every check returns its findings instead of stopping at the first one, so
//! a driver can run all of them and report the union.

mod resolve;
mod style;
mod topology;

pub use resolve::{apply_typedef, load_library, resolve};
pub use style::{
    builtin_styles, check_style, check_style_with, ComponentRule, ConnectorRule, RequiredAttribute,
    StyleRule, StyleTable, TopologyRule, EVENT_BASED, LAYERED, PIPES_AND_FILTERS,
};
pub use topology::{classify_graph, classify_topology, DataflowGraph, Topology, TopologyReport};

use crate::diag::{Code, Diagnostic};
use crate::model::{Architecture, ExternalStream, TypeTable};

/// One `TypeMismatch` per attachment whose port type the role does not accept.
pub fn check_types(arch: &Architecture, table: &TypeTable) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for a in &arch.attachments {
        let (Ok(port), Ok(role)) = (
            arch.port_spec(table, &a.instance, &a.port),
            arch.role_spec(table, &a.connector, &a.role),
        ) else {
            continue;
        };
        match table.compatible(&port.port_type, role) {
            Ok(true) => {}
            Ok(false) => {
                let accepts: Vec<&str> = role.accepts.iter().map(|p| p.as_str()).collect();
                diags.push(
                    Diagnostic::error(
                        Code::TypeMismatch,
                        format!(
                            "{}.{} has port type {}, but {}.{} accepts {{{}}}",
                            a.instance,
                            a.port,
                            port.port_type,
                            a.connector,
                            a.role,
                            accepts.join(", ")
                        ),
                    )
                    .or_span(a.span),
                );
            }
            Err(d) => diags.push(d.or_span(a.span)),
        }
    }
    diags
}

/// Arity of every connector role, plus binding of the external streams that
/// pipelines read from and write to.
pub fn check_completeness(arch: &Architecture, table: &TypeTable) -> Vec<Diagnostic> {
    let mut diags = arch.validate_arity(table);
    for stream in [ExternalStream::Input, ExternalStream::Output] {
        if arch.io.get(stream).is_some() {
            continue;
        }
        if let Some(binding) = arch.externals.iter().find(|e| e.stream == stream) {
            let code = match stream {
                ExternalStream::Input => Code::UnboundExternalInput,
                ExternalStream::Output => Code::UnboundExternalOutput,
            };
            diags.push(
                Diagnostic::error(
                    code,
                    format!(
                        "`{}` used by {}.{} is not bound; declare `{0} \"path\";` or pass --{0}",
                        stream.as_str(),
                        binding.connector,
                        binding.role
                    ),
                )
                .or_span(binding.span),
            );
        }
    }
    diags
}

/// Types, completeness and style, in that order.
pub fn check_all(arch: &Architecture, table: &TypeTable, styles: &StyleTable) -> Vec<Diagnostic> {
    let mut diags = check_types(arch, table);
    diags.extend(check_completeness(arch, table));
    diags.extend(check_style_with(arch, table, styles));
    diags
}
