use std::collections::BTreeMap;

use crate::diag::{Code, Diagnostic};
use crate::model::{
    Architecture, Attachment, Attributes, ExternalStream, IoTarget, Multiplicity, Origin, PortSpec,
    PortType, RoleSpec, TypeTable,
};
use crate::parser::ast::{AttrKind, ComponentDecl, Item, LibraryAst, SystemAst, TypeDef};
use crate::parser::{desugar_pipeline, Declaration};

/// Folds type declarations into `table`, returning the extended table.
pub fn apply_typedef(
    table: &TypeTable,
    def: &TypeDef,
    origin: Origin,
) -> Result<TypeTable, Diagnostic> {
    match def {
        TypeDef::Port { name, span } => table
            .define_port_type(&name.text, origin)
            .map_err(|d| d.with_span(*span)),
        TypeDef::Component(c) => {
            let ports: Vec<PortSpec> = c
                .ports
                .iter()
                .map(|p| {
                    PortSpec::new(
                        &p.name.text,
                        PortType::named(&p.port_type.text),
                        if p.many {
                            Multiplicity::Many
                        } else {
                            Multiplicity::One
                        },
                    )
                })
                .collect();
            table
                .define_component_type(&c.name.text, &ports, origin)
                .map_err(|d| d.with_span(c.name.span))
        }
        TypeDef::Connector(c) => {
            let roles: Vec<RoleSpec> = c
                .roles
                .iter()
                .map(|r| RoleSpec {
                    name: r.name.text.clone(),
                    accepts: r.accepts.iter().map(|a| PortType::named(&a.text)).collect(),
                    min_fill: r.min,
                    max_fill: r.max,
                })
                .collect();
            table
                .define_connector_type(&c.name.text, &roles, origin)
                .map_err(|d| d.with_span(c.name.span))
        }
    }
}

pub fn load_library(table: &TypeTable, lib: &LibraryAst) -> Result<TypeTable, Vec<Diagnostic>> {
    let mut table = table.clone();
    let mut diags = Vec::new();
    for def in &lib.items {
        match apply_typedef(&table, def, Origin::Library) {
            Ok(t) => table = t,
            Err(d) => diags.push(d),
        }
    }
    if diags.is_empty() {
        Ok(table)
    } else {
        Err(diags)
    }
}

fn attributes(decl: &ComponentDecl, diags: &mut Vec<Diagnostic>) -> Attributes {
    let mut attrs = Attributes::default();
    let mut seen: Vec<&'static str> = Vec::new();
    for attr in &decl.attrs {
        let key = match &attr.kind {
            AttrKind::Impl(s) => {
                attrs.implementation = Some(s.clone());
                "impl"
            }
            AttrKind::Replicas(n) => {
                attrs.replicas = Some(*n);
                "replicas"
            }
            AttrKind::Layer(n) => {
                attrs.layer = Some(*n);
                "layer"
            }
            AttrKind::Stateless => {
                attrs.stateless = true;
                "stateless"
            }
            AttrKind::Seed(s) => {
                attrs.seed = Some(s.clone());
                "seed"
            }
            AttrKind::Site(s) => {
                attrs.site = Some(s.clone());
                "site"
            }
        };
        if seen.contains(&key) {
            diags.push(
                Diagnostic::error(
                    Code::DuplicateName,
                    format!("attribute `{key}` given twice on `{}`", decl.name.text),
                )
                .with_span(attr.span),
            );
        }
        seen.push(key);
    }
    attrs
}

/// Binds every name in `ast`, expanding pipelines and folding inline type
/// declarations into a working copy of `table`.
pub fn resolve(
    ast: &SystemAst,
    table: &TypeTable,
) -> Result<(Architecture, TypeTable), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut table = table.clone();
    let mut arch = Architecture::new(&ast.name.text);
    arch.style = ast.style.as_ref().map(|s| s.text.clone());
    arch.allow_skip = ast.allow_skip;

    for item in &ast.items {
        if let Item::Type(def) = item {
            match apply_typedef(&table, def, Origin::Inline) {
                Ok(t) => table = t,
                Err(d) => diags.push(d),
            }
        }
    }

    // instances and connectors first, so attachments may precede declarations
    for item in &ast.items {
        match item {
            Item::Component(c) => {
                let attrs = attributes(c, &mut diags);
                if table.component_type(&c.type_name.text).is_none() {
                    diags.push(
                        Diagnostic::error(
                            Code::UnknownType,
                            format!("unknown component type `{}`", c.type_name.text),
                        )
                        .with_span(c.type_name.span),
                    );
                    continue;
                }
                if let Err(d) =
                    arch.add_instance(&c.name.text, &c.type_name.text, attrs, Some(c.name.span))
                {
                    diags.push(d);
                }
            }
            Item::Connector(c) => {
                if table.connector_type(&c.type_name.text).is_none() {
                    diags.push(
                        Diagnostic::error(
                            Code::UnknownType,
                            format!("unknown connector type `{}`", c.type_name.text),
                        )
                        .with_span(c.type_name.span),
                    );
                    continue;
                }
                if let Err(d) =
                    arch.add_connector(&c.name.text, &c.type_name.text, Some(c.name.span))
                {
                    diags.push(d);
                }
            }
            _ => {}
        }
    }

    let mut pending: Vec<Declaration> = Vec::new();
    for item in &ast.items {
        match item {
            Item::Pipeline(p) => {
                let declared: BTreeMap<String, String> = arch
                    .instances
                    .values()
                    .map(|i| (i.name.clone(), i.type_name.clone()))
                    .collect();
                match desugar_pipeline(p, &table, &declared) {
                    Ok(decls) => {
                        for d in decls {
                            let res = match &d {
                                Declaration::Instance {
                                    name,
                                    type_name,
                                    span,
                                } => arch.add_instance(
                                    name,
                                    type_name,
                                    Attributes::default(),
                                    Some(*span),
                                ),
                                Declaration::Connector {
                                    name,
                                    type_name,
                                    span,
                                } => arch.add_connector(name, type_name, Some(*span)),
                                _ => {
                                    pending.push(d);
                                    Ok(())
                                }
                            };
                            if let Err(e) = res {
                                diags.push(e);
                            }
                        }
                    }
                    Err(d) => diags.push(d),
                }
            }
            Item::Attach(a) => pending.push(Declaration::Attach {
                instance: a.instance.text.clone(),
                port: a.port.text.clone(),
                connector: a.connector.text.clone(),
                role: a.role.text.clone(),
                span: a.span,
            }),
            Item::Io(io) => {
                let slot = match io.stream {
                    ExternalStream::Input => &mut arch.io.input,
                    ExternalStream::Output => &mut arch.io.output,
                };
                if slot.is_some() {
                    diags.push(
                        Diagnostic::error(
                            Code::DuplicateName,
                            format!("`{}` is bound more than once", io.stream.as_str()),
                        )
                        .with_span(io.span),
                    );
                }
                *slot = Some(IoTarget::parse(&io.path));
            }
            _ => {}
        }
    }

    for d in pending {
        let res = match d {
            Declaration::Attach {
                instance,
                port,
                connector,
                role,
                span,
            } => arch.attach_in_place(
                &table,
                Attachment {
                    instance,
                    port,
                    connector,
                    role,
                    span: Some(span),
                },
            ),
            Declaration::External {
                stream,
                connector,
                role,
                span,
            } => arch.bind_external(&table, stream, &connector, &role, Some(span)),
            _ => Ok(()),
        };
        if let Err(e) = res {
            diags.push(e);
        }
    }

    if diags.is_empty() {
        Ok((arch, table))
    } else {
        Err(diags)
    }
}
