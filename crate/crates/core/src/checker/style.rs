//! Architectural styles as table-driven rules.

use std::collections::BTreeMap;

use crate::checker::topology::DataflowGraph;
use crate::diag::{Code, Diagnostic};
use crate::model::{Architecture, TypeTable, EVENT, FILTER, PIPE, RPC};

pub const PIPES_AND_FILTERS: &str = "pipes-and-filters";
pub const LAYERED: &str = "layered";
pub const EVENT_BASED: &str = "event-based";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ComponentRule {
    /// Any component type.
    Any,
    /// The named types, plus developer types whose ports are all streams
    /// when `stream_only` is set.
    Types {
        names: Vec<String>,
        stream_only: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConnectorRule {
    Any,
    Types(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopologyRule {
    /// Every dataflow cycle passes through an instance with a `seed`.
    CyclesNeedSeed,
    /// Every RPC caller sits one layer above its definer (or any layer above
    /// when the system allows skips).
    AdjacentLayerCalls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequiredAttribute {
    Layer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StyleRule {
    pub name: String,
    pub components: ComponentRule,
    pub connectors: ConnectorRule,
    pub topology: Vec<TopologyRule>,
    pub required: Vec<RequiredAttribute>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StyleTable {
    rules: BTreeMap<String, StyleRule>,
}

impl Default for StyleTable {
    fn default() -> Self {
        builtin_styles()
    }
}

pub fn builtin_styles() -> StyleTable {
    let rules = [
        StyleRule {
            name: PIPES_AND_FILTERS.into(),
            components: ComponentRule::Types {
                names: vec![FILTER.into()],
                stream_only: true,
            },
            connectors: ConnectorRule::Types(vec![PIPE.into()]),
            topology: vec![TopologyRule::CyclesNeedSeed],
            required: vec![],
        },
        StyleRule {
            name: LAYERED.into(),
            components: ComponentRule::Any,
            connectors: ConnectorRule::Any,
            topology: vec![TopologyRule::AdjacentLayerCalls],
            required: vec![RequiredAttribute::Layer],
        },
        StyleRule {
            name: EVENT_BASED.into(),
            components: ComponentRule::Any,
            connectors: ConnectorRule::Types(vec![EVENT.into()]),
            topology: vec![],
            required: vec![],
        },
    ];
    StyleTable {
        rules: rules.into_iter().map(|r| (r.name.clone(), r)).collect(),
    }
}

impl StyleTable {
    pub fn get(&self, name: &str) -> Option<&StyleRule> {
        self.rules.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }

    pub fn with_style(&self, rule: StyleRule) -> Result<StyleTable, Diagnostic> {
        if self.rules.contains_key(&rule.name) {
            return Err(Diagnostic::error(
                Code::DuplicateType,
                format!("style `{}` is already defined", rule.name),
            ));
        }
        let empty = matches!(&rule.components, ComponentRule::Types { names, stream_only: false } if names.is_empty())
            || matches!(&rule.connectors, ConnectorRule::Types(t) if t.is_empty());
        if empty {
            return Err(Diagnostic::error(
                Code::UnknownStyle,
                format!(
                    "style `{}` allows no components or no connectors",
                    rule.name
                ),
            ));
        }
        let mut next = self.clone();
        next.rules.insert(rule.name.clone(), rule);
        Ok(next)
    }
}

fn violation(message: String, span: Option<crate::span::Span>) -> Diagnostic {
    Diagnostic::error(Code::StyleViolation, message).or_span(span)
}

pub fn check_style(arch: &Architecture, table: &TypeTable) -> Vec<Diagnostic> {
    check_style_with(arch, table, &builtin_styles())
}

pub fn check_style_with(
    arch: &Architecture,
    table: &TypeTable,
    styles: &StyleTable,
) -> Vec<Diagnostic> {
    let Some(style) = &arch.style else {
        return vec![];
    };
    let Some(rule) = styles.get(style) else {
        let known: Vec<&str> = styles.names().collect();
        return vec![Diagnostic::error(
            Code::UnknownStyle,
            format!("unknown style `{style}` (known: {})", known.join(", ")),
        )];
    };
    let mut diags = Vec::new();

    if let ComponentRule::Types { names, stream_only } = &rule.components {
        for inst in arch.instances.values() {
            let ok = names.contains(&inst.type_name)
                || (*stream_only
                    && table
                        .component_type(&inst.type_name)
                        .is_some_and(|t| !t.ports.is_empty() && t.is_stream_only()));
            if !ok {
                diags.push(violation(
                    format!(
                        "{style}: component `{}` has type `{}`, which the style does not allow",
                        inst.name, inst.type_name
                    ),
                    inst.span,
                ));
            }
        }
    }

    if let ConnectorRule::Types(allowed) = &rule.connectors {
        for conn in arch.connectors.values() {
            if !allowed.contains(&conn.type_name) {
                diags.push(violation(
                    format!(
                        "{style}: connector `{}` has kind `{}`, which the style does not allow",
                        conn.name, conn.type_name
                    ),
                    conn.span,
                ));
            }
        }
    }

    for req in &rule.required {
        match req {
            RequiredAttribute::Layer => {
                for inst in arch.instances.values().filter(|i| i.attrs.layer.is_none()) {
                    diags.push(violation(
                        format!(
                            "{style}: component `{}` has no `layer` attribute",
                            inst.name
                        ),
                        inst.span,
                    ));
                }
            }
        }
    }

    for topo in &rule.topology {
        match topo {
            TopologyRule::CyclesNeedSeed => diags.extend(unseeded_cycles(arch, style)),
            TopologyRule::AdjacentLayerCalls => diags.extend(layer_calls(arch, style)),
        }
    }
    diags
}

/// Removing every seeded instance must leave the dataflow graph acyclic.
fn unseeded_cycles(arch: &Architecture, style: &str) -> Vec<Diagnostic> {
    let full = DataflowGraph::from_arch(arch);
    let seeded: Vec<bool> = full
        .nodes
        .iter()
        .map(|n| arch.instances[n].attrs.seed.is_some())
        .collect();
    let pruned = DataflowGraph {
        nodes: full.nodes.clone(),
        edges: full
            .edges
            .iter()
            .copied()
            .filter(|&(a, b)| !seeded[a] && !seeded[b])
            .collect(),
    };
    pruned
        .cyclic_components()
        .into_iter()
        .map(|comp| {
            let names: Vec<&str> = comp.iter().map(|&v| full.nodes[v].as_str()).collect();
            violation(
                format!(
                    "{style}: cycle through {} has no instance with a `seed` attribute",
                    names.join(", ")
                ),
                arch.instances[names[0]].span,
            )
        })
        .collect()
}

fn layer_calls(arch: &Architecture, style: &str) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for conn in arch.connectors.values().filter(|c| c.type_name == RPC) {
        for caller in arch.attachments_of(&conn.name, "caller") {
            for definer in arch.attachments_of(&conn.name, "definer") {
                let (Some(up), Some(down)) = (
                    arch.instances
                        .get(&caller.instance)
                        .and_then(|i| i.attrs.layer),
                    arch.instances
                        .get(&definer.instance)
                        .and_then(|i| i.attrs.layer),
                ) else {
                    continue;
                };
                let ok = if arch.allow_skip {
                    up > down
                } else {
                    up == down + 1
                };
                if !ok {
                    let expect = if arch.allow_skip {
                        "a lower layer".to_string()
                    } else {
                        format!("layer {}", up.wrapping_sub(1))
                    };
                    diags.push(violation(
                        format!(
                            "{style}: `{}` in layer {up} calls `{}` in layer {down} via `{}`; calls must target {expect}",
                            caller.instance, definer.instance, conn.name
                        ),
                        caller.span.or(conn.span),
                    ));
                }
            }
        }
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::resolve;
    use crate::model::builtin_type_table;
    use crate::parser::parse;

    fn style_codes(src: &str) -> Vec<String> {
        let (arch, table) = resolve(&parse(src).unwrap(), &builtin_type_table()).unwrap();
        check_style(&arch, &table)
            .into_iter()
            .map(|d| d.message)
            .collect()
    }

    const SERVER_TYPES: &str = "componenttype Svc { port call : RpcCall; port serve : RpcDef; }";

    #[test]
    fn pipes_and_filters_rejects_rpc() {
        let src = format!(
            "system S style pipes-and-filters {{ {SERVER_TYPES}
             pipeline P: input | A() | output;
             connector r : RPC; }}"
        );
        let msgs = style_codes(&src);
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].contains("connector `r` has kind `RPC`"));
    }

    #[test]
    fn pipes_and_filters_admits_stream_only_types() {
        let src = "system S style pipes-and-filters {
             componenttype Fan { port stdin : StreamIn; port stdout : StreamOut many; }
             component F : Fan; component D : DataStore; }";
        let msgs = style_codes(src);
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].contains("`D`"));
    }

    #[test]
    fn layer_skip_is_a_violation() {
        let src = format!(
            "system S style layered {{ {SERVER_TYPES}
             component Top : Svc layer 3; component Bottom : Svc layer 1;
             connector r : RPC;
             attach Top.call to r.caller; attach Bottom.serve to r.definer; }}"
        );
        let msgs = style_codes(&src);
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].contains("layer 3 calls `Bottom` in layer 1"));

        let relaxed = src.replace("style layered", "style layered allow-skip");
        assert!(style_codes(&relaxed).is_empty());
    }

    #[test]
    fn layered_needs_layers_and_downward_calls() {
        let src = format!(
            "system S style layered {{ {SERVER_TYPES}
             component Low : Svc layer 1; component High : Svc layer 2; component X : Svc;
             connector r : RPC;
             attach Low.call to r.caller; attach High.serve to r.definer; }}"
        );
        let msgs = style_codes(&src);
        assert_eq!(msgs.len(), 2);
        assert!(msgs.iter().any(|m| m.contains("`X` has no `layer`")));
    }

    #[test]
    fn event_based_requires_events() {
        let src = "system S style event-based { connector p : Pipe; }";
        assert_eq!(style_codes(src).len(), 1);
    }

    #[test]
    fn unknown_style() {
        let (arch, table) = resolve(
            &parse("system S style baroque { }").unwrap(),
            &builtin_type_table(),
        )
        .unwrap();
        let diags = check_style(&arch, &table);
        assert_eq!(diags[0].code, Code::UnknownStyle);
    }

    fn cycle_src(seed: &str) -> String {
        format!(
            "system S style pipes-and-filters {{
               component A : Filter {seed}; component B : Filter;
               connector ab : Pipe; connector ba : Pipe;
               attach A.stdout to ab.source; attach B.stdin to ab.sink;
               attach B.stdout to ba.source; attach A.stdin to ba.sink; }}"
        )
    }

    #[test]
    fn seeded_cycle_conforms() {
        assert!(style_codes(&cycle_src("seed \"0\\n\"")).is_empty());
    }

    #[test]
    fn unseeded_cycle_violates() {
        let msgs = style_codes(&cycle_src(""));
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].contains("cycle through A, B"));
    }

    #[test]
    fn custom_styles_join_the_table() {
        let styles = builtin_styles()
            .with_style(StyleRule {
                name: "rpc-only".into(),
                components: ComponentRule::Any,
                connectors: ConnectorRule::Types(vec![RPC.into()]),
                topology: vec![],
                required: vec![],
            })
            .unwrap();
        let (arch, table) = resolve(
            &parse("system S style rpc-only { connector p : Pipe; }").unwrap(),
            &builtin_type_table(),
        )
        .unwrap();
        assert_eq!(check_style_with(&arch, &table, &styles).len(), 1);
        assert!(builtin_styles()
            .with_style(StyleRule {
                name: "none".into(),
                components: ComponentRule::Any,
                connectors: ConnectorRule::Types(vec![]),
                topology: vec![],
                required: vec![],
            })
            .is_err());
    }
}
