//! Unresolved syntax tree. Every node carries the span it was parsed from.

use crate::model::ExternalStream;
use crate::span::Span;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ident {
    pub text: String,
    pub span: Span,
}

impl Ident {
    pub fn new(text: &str) -> Self {
        Ident {
            text: text.to_string(),
            span: Span::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemAst {
    pub name: Ident,
    pub style: Option<Ident>,
    pub allow_skip: bool,
    pub items: Vec<Item>,
    pub span: Span,
}

/// Type declarations loaded from a library file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LibraryAst {
    pub items: Vec<TypeDef>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Item {
    Type(TypeDef),
    Component(ComponentDecl),
    Connector(ConnectorDecl),
    Attach(AttachDecl),
    Pipeline(PipelineDecl),
    Io(IoDecl),
}

impl Item {
    pub fn span(&self) -> Span {
        match self {
            Item::Type(t) => t.span(),
            Item::Component(c) => c.span,
            Item::Connector(c) => c.span,
            Item::Attach(a) => a.span,
            Item::Pipeline(p) => p.span,
            Item::Io(io) => io.span,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TypeDef {
    Port { name: Ident, span: Span },
    Component(ComponentTypeDecl),
    Connector(ConnectorTypeDecl),
}

impl TypeDef {
    pub fn span(&self) -> Span {
        match self {
            TypeDef::Port { span, .. } => *span,
            TypeDef::Component(c) => c.span,
            TypeDef::Connector(c) => c.span,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentTypeDecl {
    pub name: Ident,
    pub ports: Vec<PortDecl>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PortDecl {
    pub name: Ident,
    pub port_type: Ident,
    pub many: bool,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectorTypeDecl {
    pub name: Ident,
    pub roles: Vec<RoleDecl>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleDecl {
    pub name: Ident,
    pub accepts: Vec<Ident>,
    pub min: u32,
    pub max: Option<u32>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentDecl {
    pub name: Ident,
    pub type_name: Ident,
    pub attrs: Vec<Attr>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attr {
    pub kind: AttrKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttrKind {
    Impl(String),
    Replicas(u32),
    Layer(u32),
    Stateless,
    Seed(String),
    Site(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectorDecl {
    pub name: Ident,
    pub type_name: Ident,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttachDecl {
    pub instance: Ident,
    pub port: Ident,
    pub connector: Ident,
    pub role: Ident,
    pub span: Span,
}

/// `pipeline P: input | A() | B() | output;`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineDecl {
    pub name: Ident,
    pub stages: Vec<Ident>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IoDecl {
    pub stream: ExternalStream,
    pub path: String,
    pub span: Span,
}

/// Span erasure, for comparing trees parsed from different texts.
pub trait StripSpans {
    fn strip_spans(&self) -> Self;
}

impl StripSpans for Ident {
    fn strip_spans(&self) -> Self {
        Ident::new(&self.text)
    }
}

impl StripSpans for SystemAst {
    fn strip_spans(&self) -> Self {
        SystemAst {
            name: self.name.strip_spans(),
            style: self.style.as_ref().map(Ident::strip_spans),
            allow_skip: self.allow_skip,
            items: self.items.iter().map(Item::strip_spans).collect(),
            span: Span::default(),
        }
    }
}

impl StripSpans for LibraryAst {
    fn strip_spans(&self) -> Self {
        LibraryAst {
            items: self.items.iter().map(TypeDef::strip_spans).collect(),
        }
    }
}

impl StripSpans for Item {
    fn strip_spans(&self) -> Self {
        let z = Span::default();
        match self {
            Item::Type(t) => Item::Type(t.strip_spans()),
            Item::Component(c) => Item::Component(ComponentDecl {
                name: c.name.strip_spans(),
                type_name: c.type_name.strip_spans(),
                attrs: c
                    .attrs
                    .iter()
                    .map(|a| Attr {
                        kind: a.kind.clone(),
                        span: z,
                    })
                    .collect(),
                span: z,
            }),
            Item::Connector(c) => Item::Connector(ConnectorDecl {
                name: c.name.strip_spans(),
                type_name: c.type_name.strip_spans(),
                span: z,
            }),
            Item::Attach(a) => Item::Attach(AttachDecl {
                instance: a.instance.strip_spans(),
                port: a.port.strip_spans(),
                connector: a.connector.strip_spans(),
                role: a.role.strip_spans(),
                span: z,
            }),
            Item::Pipeline(p) => Item::Pipeline(PipelineDecl {
                name: p.name.strip_spans(),
                stages: p.stages.iter().map(Ident::strip_spans).collect(),
                span: z,
            }),
            Item::Io(io) => Item::Io(IoDecl {
                stream: io.stream,
                path: io.path.clone(),
                span: z,
            }),
        }
    }
}

impl StripSpans for TypeDef {
    fn strip_spans(&self) -> Self {
        let z = Span::default();
        match self {
            TypeDef::Port { name, .. } => TypeDef::Port {
                name: name.strip_spans(),
                span: z,
            },
            TypeDef::Component(c) => TypeDef::Component(ComponentTypeDecl {
                name: c.name.strip_spans(),
                ports: c
                    .ports
                    .iter()
                    .map(|p| PortDecl {
                        name: p.name.strip_spans(),
                        port_type: p.port_type.strip_spans(),
                        many: p.many,
                        span: z,
                    })
                    .collect(),
                span: z,
            }),
            TypeDef::Connector(c) => TypeDef::Connector(ConnectorTypeDecl {
                name: c.name.strip_spans(),
                roles: c
                    .roles
                    .iter()
                    .map(|r| RoleDecl {
                        name: r.name.strip_spans(),
                        accepts: r.accepts.iter().map(Ident::strip_spans).collect(),
                        min: r.min,
                        max: r.max,
                        span: z,
                    })
                    .collect(),
                span: z,
            }),
        }
    }
}
