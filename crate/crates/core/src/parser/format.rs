//! Canonical rendering: 2-space indentation, one declaration per line, LF endings.

use std::fmt::Write;

use crate::model::ExternalStream;
use crate::parser::ast::*;

pub fn format(ast: &SystemAst) -> String {
    let mut out = String::new();
    write!(out, "system {}", ast.name.text).unwrap();
    if let Some(style) = &ast.style {
        write!(out, " style {}", style.text).unwrap();
        if ast.allow_skip {
            out.push_str(" allow-skip");
        }
    }
    out.push_str(" {\n");
    for item in &ast.items {
        format_item(&mut out, item, "  ");
    }
    out.push_str("}\n");
    out
}

pub fn format_library(lib: &LibraryAst) -> String {
    let mut out = String::new();
    for item in &lib.items {
        format_typedef(&mut out, item, "");
    }
    out
}

fn format_item(out: &mut String, item: &Item, indent: &str) {
    match item {
        Item::Type(t) => format_typedef(out, t, indent),
        Item::Component(c) => {
            write!(
                out,
                "{indent}component {} : {}",
                c.name.text, c.type_name.text
            )
            .unwrap();
            for attr in &c.attrs {
                match &attr.kind {
                    AttrKind::Impl(s) => write!(out, " impl {}", quote(s)),
                    AttrKind::Replicas(n) => write!(out, " replicas {n}"),
                    AttrKind::Layer(n) => write!(out, " layer {n}"),
                    AttrKind::Stateless => write!(out, " stateless"),
                    AttrKind::Seed(s) => write!(out, " seed {}", quote(s)),
                    AttrKind::Site(s) => write!(out, " site {}", quote(s)),
                }
                .unwrap();
            }
            out.push_str(";\n");
        }
        Item::Connector(c) => {
            writeln!(
                out,
                "{indent}connector {} : {};",
                c.name.text, c.type_name.text
            )
            .unwrap();
        }
        Item::Attach(a) => {
            writeln!(
                out,
                "{indent}attach {}.{} to {}.{};",
                a.instance.text, a.port.text, a.connector.text, a.role.text
            )
            .unwrap();
        }
        Item::Pipeline(p) => {
            write!(out, "{indent}pipeline {}: input", p.name.text).unwrap();
            for stage in &p.stages {
                write!(out, " | {}()", stage.text).unwrap();
            }
            out.push_str(" | output;\n");
        }
        Item::Io(io) => {
            let kw = match io.stream {
                ExternalStream::Input => "input",
                ExternalStream::Output => "output",
            };
            writeln!(out, "{indent}{kw} {};", quote(&io.path)).unwrap();
        }
    }
}

fn format_typedef(out: &mut String, def: &TypeDef, indent: &str) {
    match def {
        TypeDef::Port { name, .. } => writeln!(out, "{indent}porttype {};", name.text).unwrap(),
        TypeDef::Component(c) => {
            writeln!(out, "{indent}componenttype {} {{", c.name.text).unwrap();
            for p in &c.ports {
                write!(out, "{indent}  port {} : {}", p.name.text, p.port_type.text).unwrap();
                if p.many {
                    out.push_str(" many");
                }
                out.push_str(";\n");
            }
            writeln!(out, "{indent}}}").unwrap();
        }
        TypeDef::Connector(c) => {
            writeln!(out, "{indent}connectortype {} {{", c.name.text).unwrap();
            for r in &c.roles {
                let accepts: Vec<&str> = r.accepts.iter().map(|a| a.text.as_str()).collect();
                let max = r.max.map_or("*".to_string(), |m| m.to_string());
                writeln!(
                    out,
                    "{indent}  role {} accepts {} fill {}..{};",
                    r.name.text,
                    accepts.join(", "),
                    r.min,
                    max
                )
                .unwrap();
            }
            writeln!(out, "{indent}}}").unwrap();
        }
    }
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            '\t' => q.push_str("\\t"),
            '\r' => q.push_str("\\r"),
            '\0' => q.push_str("\\0"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    #[test]
    fn minimal_system_renders_canonically() {
        assert_eq!(format(&parse("system S { }").unwrap()), "system S {\n}\n");
    }

    #[test]
    fn canonical_layout() {
        let src = "system  P style pipes-and-filters{pipeline P : input|A()|B( )|output; \
                   component A:Filter impl \"./a\" seed \"0\\n\";input \"in.txt\";}";
        let expected = "system P style pipes-and-filters {\n  \
                        pipeline P: input | A() | B() | output;\n  \
                        component A : Filter impl \"./a\" seed \"0\\n\";\n  \
                        input \"in.txt\";\n}\n";
        assert_eq!(format(&parse(src).unwrap()), expected);
    }

    #[test]
    fn typedef_layout() {
        let src = "system T { componenttype Fan { port stdin : StreamIn; port stdout : StreamOut many; } \
                   connectortype Bus { role a accepts EventEmit, EventRecv fill 0..*; } }";
        let expected = "system T {\n  componenttype Fan {\n    port stdin : StreamIn;\n    \
                        port stdout : StreamOut many;\n  }\n  connectortype Bus {\n    \
                        role a accepts EventEmit, EventRecv fill 0..*;\n  }\n}\n";
        assert_eq!(format(&parse(src).unwrap()), expected);
    }
}
