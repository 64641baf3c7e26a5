//! The resolved component-and-connector graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diag::{Code, Diagnostic};
use crate::model::types::{PortSpec, RoleSpec, TypeTable};
use crate::span::Span;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attributes {
    #[serde(rename = "impl", skip_serializing_if = "Option::is_none")]
    pub implementation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<u32>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub stateless: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub name: String,
    pub type_name: String,
    pub attrs: Attributes,
    pub span: Option<Span>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectorInstance {
    pub name: String,
    pub type_name: String,
    pub span: Option<Span>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attachment {
    pub instance: String,
    pub port: String,
    pub connector: String,
    pub role: String,
    pub span: Option<Span>,
}

impl Attachment {
    fn same_pair(&self, other: &Attachment) -> bool {
        self.instance == other.instance
            && self.port == other.port
            && self.connector == other.connector
            && self.role == other.role
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalStream {
    Input,
    Output,
}

impl ExternalStream {
    pub fn as_str(self) -> &'static str {
        match self {
            ExternalStream::Input => "input",
            ExternalStream::Output => "output",
        }
    }
}

/// A connector role filled by the system's external input or output rather
/// than by a component port.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalBinding {
    pub stream: ExternalStream,
    pub connector: String,
    pub role: String,
    pub span: Option<Span>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoTarget {
    Path(String),
    /// The stream inherited from the invoking process.
    Inherit,
}

impl IoTarget {
    pub fn parse(text: &str) -> IoTarget {
        if text == "-" {
            IoTarget::Inherit
        } else {
            IoTarget::Path(text.to_string())
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoBindings {
    pub input: Option<IoTarget>,
    pub output: Option<IoTarget>,
}

impl IoBindings {
    pub fn get(&self, stream: ExternalStream) -> Option<&IoTarget> {
        match stream {
            ExternalStream::Input => self.input.as_ref(),
            ExternalStream::Output => self.output.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub name: String,
    pub style: Option<String>,
    /// Relaxes the layered style to any strictly downward call.
    pub allow_skip: bool,
    pub instances: BTreeMap<String, Instance>,
    pub connectors: BTreeMap<String, ConnectorInstance>,
    pub attachments: Vec<Attachment>,
    pub externals: Vec<ExternalBinding>,
    pub io: IoBindings,
}

impl Architecture {
    pub fn new(name: &str) -> Self {
        Architecture {
            name: name.to_string(),
            style: None,
            allow_skip: false,
            instances: BTreeMap::new(),
            connectors: BTreeMap::new(),
            attachments: Vec::new(),
            externals: Vec::new(),
            io: IoBindings::default(),
        }
    }

    fn name_in_use(&self, name: &str) -> bool {
        self.instances.contains_key(name) || self.connectors.contains_key(name)
    }

    pub fn add_instance(
        &mut self,
        name: &str,
        type_name: &str,
        attrs: Attributes,
        span: Option<Span>,
    ) -> Result<(), Diagnostic> {
        if self.name_in_use(name) {
            return Err(Diagnostic::error(
                Code::DuplicateName,
                format!("`{name}` is declared more than once"),
            )
            .or_span(span));
        }
        self.instances.insert(
            name.to_string(),
            Instance {
                name: name.to_string(),
                type_name: type_name.to_string(),
                attrs,
                span,
            },
        );
        Ok(())
    }

    pub fn add_connector(
        &mut self,
        name: &str,
        type_name: &str,
        span: Option<Span>,
    ) -> Result<(), Diagnostic> {
        if self.name_in_use(name) {
            return Err(Diagnostic::error(
                Code::DuplicateName,
                format!("`{name}` is declared more than once"),
            )
            .or_span(span));
        }
        self.connectors.insert(
            name.to_string(),
            ConnectorInstance {
                name: name.to_string(),
                type_name: type_name.to_string(),
                span,
            },
        );
        Ok(())
    }

    /// Looks up the declared port of an instance.
    pub fn port_spec<'t>(
        &self,
        table: &'t TypeTable,
        instance: &str,
        port: &str,
    ) -> Result<&'t PortSpec, Diagnostic> {
        let inst = self.instances.get(instance).ok_or_else(|| {
            Diagnostic::error(
                Code::UnknownInstance,
                format!("unknown instance `{instance}`"),
            )
        })?;
        let ctype = table.component_type(&inst.type_name).ok_or_else(|| {
            Diagnostic::error(
                Code::UnknownType,
                format!("unknown component type `{}`", inst.type_name),
            )
        })?;
        ctype.port(port).ok_or_else(|| {
            Diagnostic::error(
                Code::UnknownPort,
                format!(
                    "`{instance}` of type `{}` has no port `{port}`",
                    inst.type_name
                ),
            )
        })
    }

    pub fn role_spec<'t>(
        &self,
        table: &'t TypeTable,
        connector: &str,
        role: &str,
    ) -> Result<&'t RoleSpec, Diagnostic> {
        let conn = self.connectors.get(connector).ok_or_else(|| {
            Diagnostic::error(
                Code::UnknownConnector,
                format!("unknown connector `{connector}`"),
            )
        })?;
        let ctype = table.connector_type(&conn.type_name).ok_or_else(|| {
            Diagnostic::error(
                Code::UnknownType,
                format!("unknown connector type `{}`", conn.type_name),
            )
        })?;
        ctype.role(role).ok_or_else(|| {
            Diagnostic::error(
                Code::UnknownRole,
                format!(
                    "`{connector}` of type `{}` has no role `{role}`",
                    conn.type_name
                ),
            )
        })
    }

    pub fn attach(
        &self,
        table: &TypeTable,
        instance: &str,
        port: &str,
        connector: &str,
        role: &str,
    ) -> Result<Architecture, Diagnostic> {
        let mut next = self.clone();
        next.attach_in_place(
            table,
            Attachment {
                instance: instance.to_string(),
                port: port.to_string(),
                connector: connector.to_string(),
                role: role.to_string(),
                span: None,
            },
        )?;
        Ok(next)
    }

    pub(crate) fn attach_in_place(
        &mut self,
        table: &TypeTable,
        attachment: Attachment,
    ) -> Result<(), Diagnostic> {
        let span = attachment.span;
        let port = self
            .port_spec(table, &attachment.instance, &attachment.port)
            .map_err(|d| d.or_span(span))?;
        self.role_spec(table, &attachment.connector, &attachment.role)
            .map_err(|d| d.or_span(span))?;
        if self.attachments.iter().any(|a| a.same_pair(&attachment)) {
            return Err(Diagnostic::error(
                Code::DuplicateAttachment,
                format!(
                    "{}.{} is already attached to {}.{}",
                    attachment.instance, attachment.port, attachment.connector, attachment.role
                ),
            )
            .or_span(span));
        }
        if port.multiplicity == crate::model::Multiplicity::One {
            if let Some(existing) = self
                .attachments
                .iter()
                .find(|a| a.instance == attachment.instance && a.port == attachment.port)
            {
                return Err(Diagnostic::error(
                    Code::PortMultiplicityExceeded,
                    format!(
                        "port {}.{} admits one attachment and is already attached to {}.{}",
                        attachment.instance, attachment.port, existing.connector, existing.role
                    ),
                )
                .or_span(span));
            }
        }
        self.attachments.push(attachment);
        Ok(())
    }

    /// Inverse of [`Architecture::attach`].
    pub fn detach(
        &self,
        instance: &str,
        port: &str,
        connector: &str,
        role: &str,
    ) -> Result<Architecture, Diagnostic> {
        let pos = self
            .attachments
            .iter()
            .position(|a| {
                a.instance == instance
                    && a.port == port
                    && a.connector == connector
                    && a.role == role
            })
            .ok_or_else(|| {
                Diagnostic::error(
                    Code::UnknownConnector,
                    format!("{instance}.{port} is not attached to {connector}.{role}"),
                )
            })?;
        let mut next = self.clone();
        next.attachments.remove(pos);
        Ok(next)
    }

    pub fn bind_external(
        &mut self,
        table: &TypeTable,
        stream: ExternalStream,
        connector: &str,
        role: &str,
        span: Option<Span>,
    ) -> Result<(), Diagnostic> {
        self.role_spec(table, connector, role)
            .map_err(|d| d.or_span(span))?;
        self.externals.push(ExternalBinding {
            stream,
            connector: connector.to_string(),
            role: role.to_string(),
            span,
        });
        Ok(())
    }

    pub fn attachments_of<'a>(
        &'a self,
        connector: &'a str,
        role: &'a str,
    ) -> impl Iterator<Item = &'a Attachment> + 'a {
        self.attachments
            .iter()
            .filter(move |a| a.connector == connector && a.role == role)
    }

    pub fn externals_of<'a>(
        &'a self,
        connector: &'a str,
        role: &'a str,
    ) -> impl Iterator<Item = &'a ExternalBinding> + 'a {
        self.externals
            .iter()
            .filter(move |e| e.connector == connector && e.role == role)
    }

    /// One diagnostic per connector role whose fill count falls outside its
    /// declared range. External bindings count toward the fill.
    pub fn validate_arity(&self, table: &TypeTable) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        for conn in self.connectors.values() {
            let Some(ctype) = table.connector_type(&conn.type_name) else {
                continue;
            };
            for role in &ctype.roles {
                let fill = self.attachments_of(&conn.name, &role.name).count()
                    + self.externals_of(&conn.name, &role.name).count();
                let fill = fill as u32;
                if fill < role.min_fill {
                    diags.push(
                        Diagnostic::error(
                            Code::RoleUnderfilled,
                            format!(
                                "{}.{} has {fill} attachment(s), needs {}",
                                conn.name,
                                role.name,
                                role.fill_range()
                            ),
                        )
                        .or_span(conn.span),
                    );
                } else if role.max_fill.is_some_and(|max| fill > max) {
                    diags.push(
                        Diagnostic::error(
                            Code::RoleOverfilled,
                            format!(
                                "{}.{} has {fill} attachment(s), allows {}",
                                conn.name,
                                role.name,
                                role.fill_range()
                            ),
                        )
                        .or_span(conn.span),
                    );
                }
            }
        }
        diags
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::types::*;

    fn two_filters() -> Architecture {
        let mut arch = Architecture::new("S");
        arch.add_instance("A", FILTER, Attributes::default(), None)
            .unwrap();
        arch.add_instance("B", FILTER, Attributes::default(), None)
            .unwrap();
        arch.add_connector("p1", PIPE, None).unwrap();
        arch.add_connector("p2", PIPE, None).unwrap();
        arch
    }

    #[test]
    fn first_attachment_is_legal() {
        let table = builtin_type_table();
        let arch = two_filters()
            .attach(&table, "A", "stdout", "p1", "source")
            .unwrap();
        assert_eq!(arch.attachments.len(), 1);
    }

    #[test]
    fn duplicate_attachment_is_rejected() {
        let table = builtin_type_table();
        let arch = two_filters()
            .attach(&table, "A", "stdout", "p1", "source")
            .unwrap();
        let err = arch
            .attach(&table, "A", "stdout", "p1", "source")
            .unwrap_err();
        assert_eq!(err.code, Code::DuplicateAttachment);
    }

    #[test]
    fn multiplicity_one_port_attaches_once() {
        let table = builtin_type_table();
        let arch = two_filters()
            .attach(&table, "A", "stdin", "p1", "sink")
            .unwrap();
        let err = arch.attach(&table, "A", "stdin", "p2", "sink").unwrap_err();
        assert_eq!(err.code, Code::PortMultiplicityExceeded);
    }

    #[test]
    fn many_port_attaches_repeatedly() {
        let table = builtin_type_table()
            .define_component_type(
                "Fan",
                &[
                    PortSpec::one("stdin", PortType::StreamIn),
                    PortSpec::many("stdout", PortType::StreamOut),
                ],
                Origin::Inline,
            )
            .unwrap();
        let mut arch = two_filters();
        arch.add_instance("F", "Fan", Attributes::default(), None)
            .unwrap();
        let arch = arch
            .attach(&table, "F", "stdout", "p1", "source")
            .and_then(|a| a.attach(&table, "F", "stdout", "p2", "source"))
            .unwrap();
        assert_eq!(arch.attachments.len(), 2);
    }

    #[test]
    fn unresolved_names_are_reported() {
        let table = builtin_type_table();
        let arch = two_filters();
        let code = |r: Result<Architecture, Diagnostic>| r.unwrap_err().code;
        assert_eq!(
            code(arch.attach(&table, "Q", "stdout", "p1", "source")),
            Code::UnknownInstance
        );
        assert_eq!(
            code(arch.attach(&table, "A", "out", "p1", "source")),
            Code::UnknownPort
        );
        assert_eq!(
            code(arch.attach(&table, "A", "stdout", "p9", "source")),
            Code::UnknownConnector
        );
        assert_eq!(
            code(arch.attach(&table, "A", "stdout", "p1", "src")),
            Code::UnknownRole
        );
    }

    #[test]
    fn attach_then_detach_restores() {
        let table = builtin_type_table();
        let base = two_filters()
            .attach(&table, "B", "stdin", "p1", "sink")
            .unwrap();
        let edited = base.attach(&table, "A", "stdout", "p1", "source").unwrap();
        assert_eq!(edited.detach("A", "stdout", "p1", "source").unwrap(), base);
    }

    #[test]
    fn arity_findings() {
        let table = builtin_type_table();
        let arch = two_filters()
            .attach(&table, "A", "stdout", "p1", "source")
            .unwrap();
        let mut one = arch.clone();
        one.connectors.remove("p2");
        let diags = one.validate_arity(&table);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, Code::RoleUnderfilled);
        assert!(diags[0].message.starts_with("p1.sink"));

        let mut over = one.attach(&table, "B", "stdin", "p1", "sink").unwrap();
        over.add_instance("C", FILTER, Attributes::default(), None)
            .unwrap();
        let over = over.attach(&table, "C", "stdout", "p1", "source").unwrap();
        let diags = over.validate_arity(&table);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, Code::RoleOverfilled);
        assert!(diags[0].message.starts_with("p1.source"));
    }

    #[test]
    fn event_without_listeners_is_complete() {
        let table = builtin_type_table()
            .define_component_type(
                "Ticker",
                &[PortSpec::one("tick", PortType::EventEmit)],
                Origin::Inline,
            )
            .unwrap();
        let mut arch = Architecture::new("E");
        arch.add_instance("T", "Ticker", Attributes::default(), None)
            .unwrap();
        arch.add_connector("e", EVENT, None).unwrap();
        let arch = arch.attach(&table, "T", "tick", "e", "announcer").unwrap();
        assert!(arch.validate_arity(&table).is_empty());
    }

    #[test]
    fn no_connectors_no_findings() {
        let mut arch = Architecture::new("S");
        arch.add_instance("A", FILTER, Attributes::default(), None)
            .unwrap();
        assert!(arch.validate_arity(&builtin_type_table()).is_empty());
    }

    #[test]
    fn external_bindings_fill_roles() {
        let table = builtin_type_table();
        let mut arch = two_filters();
        arch.connectors.remove("p2");
        let mut arch = arch.attach(&table, "A", "stdin", "p1", "sink").unwrap();
        arch.bind_external(&table, ExternalStream::Input, "p1", "source", None)
            .unwrap();
        assert!(arch.validate_arity(&table).is_empty());
    }
}
