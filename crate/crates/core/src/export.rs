//! DOT and JSON renderings of an architecture.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::model::{Architecture, Attributes, ExternalStream, TypeTable};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
    pub attrs: Attributes,
}

/// One filled role. `instance` is absent for the external streams, whose
/// name then stands in `port`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeEnd {
    pub role: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub instance: Option<String>,
    pub port: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub connector: String,
    #[serde(rename = "type")]
    pub type_name: String,
    pub ends: Vec<EdgeEnd>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub name: String,
    pub style: Option<String>,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl GraphDoc {
    pub fn from_arch(arch: &Architecture) -> GraphDoc {
        let nodes = arch
            .instances
            .values()
            .map(|i| GraphNode {
                name: i.name.clone(),
                type_name: i.type_name.clone(),
                attrs: i.attrs.clone(),
            })
            .collect();
        let edges =
            arch.connectors
                .values()
                .map(|c| {
                    let mut ends: Vec<EdgeEnd> =
                        arch.attachments
                            .iter()
                            .filter(|a| a.connector == c.name)
                            .map(|a| EdgeEnd {
                                role: a.role.clone(),
                                instance: Some(a.instance.clone()),
                                port: a.port.clone(),
                            })
                            .chain(arch.externals.iter().filter(|e| e.connector == c.name).map(
                                |e| EdgeEnd {
                                    role: e.role.clone(),
                                    instance: None,
                                    port: e.stream.as_str().to_string(),
                                },
                            ))
                            .collect();
                    ends.sort();
                    GraphEdge {
                        connector: c.name.clone(),
                        type_name: c.type_name.clone(),
                        ends,
                    }
                })
                .collect();
        GraphDoc {
            name: arch.name.clone(),
            style: arch.style.clone(),
            nodes,
            edges,
        }
    }
}

pub fn to_json(arch: &Architecture) -> String {
    let mut s = serde_json::to_string_pretty(&GraphDoc::from_arch(arch)).expect("graph serializes");
    s.push('\n');
    s
}

pub fn load_json(text: &str) -> Result<GraphDoc, serde_json::Error> {
    serde_json::from_str(text)
}

/// A DOT ID: bare when it is a plain identifier, quoted otherwise.
fn quote(s: &str) -> String {
    let bare = s
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !["node", "edge", "graph", "digraph", "subgraph", "strict"]
            .iter()
            .any(|k| k.eq_ignore_ascii_case(s));
    if bare {
        return s.to_string();
    }
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' | '\\' => {
                q.push('\\');
                q.push(c);
            }
            '\n' => q.push_str("\\n"),
            _ => q.push(c),
        }
    }
    q.push('"');
    q
}

fn end_node(e: &EdgeEnd) -> String {
    quote(e.instance.as_deref().unwrap_or(&e.port))
}

/// Roles in declaration order when the type is known, else by name.
fn role_order(table: Option<&TypeTable>, edge: &GraphEdge) -> Vec<String> {
    if let Some(ct) = table.and_then(|t| t.connector_type(&edge.type_name)) {
        return ct.roles.iter().map(|r| r.name.clone()).collect();
    }
    let mut roles: Vec<String> = edge.ends.iter().map(|e| e.role.clone()).collect();
    roles.dedup();
    roles
}

/// Binary connectors draw as one edge; everything else as a diamond hub.
fn is_binary(table: Option<&TypeTable>, edge: &GraphEdge) -> bool {
    let single_roles = match table.and_then(|t| t.connector_type(&edge.type_name)) {
        Some(ct) => ct.roles.len() == 2 && ct.roles.iter().all(|r| r.max_fill == Some(1)),
        None => false,
    };
    let roles = role_order(table, edge);
    single_roles
        && roles
            .iter()
            .all(|r| edge.ends.iter().filter(|e| &e.role == r).count() == 1)
}

pub fn to_dot(arch: &Architecture, table: &TypeTable) -> String {
    doc_to_dot(&GraphDoc::from_arch(arch), Some(table))
}

pub fn doc_to_dot(doc: &GraphDoc, table: Option<&TypeTable>) -> String {
    let mut lines: Vec<String> = Vec::new();
    for n in &doc.nodes {
        lines.push(format!(
            "{} [shape=box, label={}];",
            quote(&n.name),
            quote(&format!("{} : {}", n.name, n.type_name))
        ));
    }
    for stream in [ExternalStream::Input, ExternalStream::Output] {
        let name = stream.as_str();
        if doc
            .edges
            .iter()
            .flat_map(|e| &e.ends)
            .any(|e| e.instance.is_none() && e.port == name)
        {
            lines.push(format!("{} [shape=plaintext];", quote(name)));
        }
    }
    let mut edges: Vec<String> = Vec::new();
    for edge in &doc.edges {
        let roles = role_order(table, edge);
        if is_binary(table, edge) {
            let from = edge.ends.iter().find(|e| e.role == roles[0]).unwrap();
            let to = edge.ends.iter().find(|e| e.role == roles[1]).unwrap();
            edges.push(format!(
                "{} -> {} [label={}];",
                end_node(from),
                end_node(to),
                quote(&edge.connector)
            ));
            continue;
        }
        let hub = quote(&edge.connector);
        lines.push(format!(
            "{hub} [shape=diamond, label={}];",
            quote(&format!("{} : {}", edge.connector, edge.type_name))
        ));
        // the first role feeds the hub, the others read from it
        for e in &edge.ends {
            let label = quote(&e.role);
            if Some(&e.role) == roles.first() {
                edges.push(format!("{} -> {hub} [label={label}];", end_node(e)));
            } else {
                edges.push(format!("{hub} -> {} [label={label}];", end_node(e)));
            }
        }
    }
    lines.sort();
    edges.sort();
    lines.extend(edges);

    let mut out = String::new();
    if lines.is_empty() {
        let _ = writeln!(out, "digraph {} {{ }}", quote(&doc.name));
        return out;
    }
    let _ = writeln!(out, "digraph {} {{", quote(&doc.name));
    for l in lines {
        let _ = writeln!(out, "  {l}");
    }
    out.push_str("}\n");
    out
}
