//! Component and connector type vocabulary.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diag::{Code, Diagnostic};

pub const FILTER: &str = "Filter";
pub const PROCESS: &str = "Process";
pub const DATA_STORE: &str = "DataStore";
pub const PIPE: &str = "Pipe";
pub const RPC: &str = "RPC";
pub const EVENT: &str = "Event";
pub const DATA_ACCESS: &str = "DataAccess";

pub const BUILTIN_COMPONENTS: [&str; 3] = [FILTER, PROCESS, DATA_STORE];
pub const BUILTIN_CONNECTORS: [&str; 4] = [PIPE, RPC, EVENT, DATA_ACCESS];

/// Names a port type. The eight builtins have dedicated variants; anything
/// else is a developer-defined bare name compared by equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortType {
    StreamIn,
    StreamOut,
    RpcCall,
    RpcDef,
    EventEmit,
    EventRecv,
    StoreAccess,
    StoreProvide,
    Custom(Arc<str>),
}

impl PortType {
    pub const BUILTINS: [PortType; 8] = [
        PortType::StreamIn,
        PortType::StreamOut,
        PortType::RpcCall,
        PortType::RpcDef,
        PortType::EventEmit,
        PortType::EventRecv,
        PortType::StoreAccess,
        PortType::StoreProvide,
    ];

    pub fn named(name: &str) -> PortType {
        match name {
            "StreamIn" => PortType::StreamIn,
            "StreamOut" => PortType::StreamOut,
            "RpcCall" => PortType::RpcCall,
            "RpcDef" => PortType::RpcDef,
            "EventEmit" => PortType::EventEmit,
            "EventRecv" => PortType::EventRecv,
            "StoreAccess" => PortType::StoreAccess,
            "StoreProvide" => PortType::StoreProvide,
            other => PortType::Custom(other.into()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            PortType::StreamIn => "StreamIn",
            PortType::StreamOut => "StreamOut",
            PortType::RpcCall => "RpcCall",
            PortType::RpcDef => "RpcDef",
            PortType::EventEmit => "EventEmit",
            PortType::EventRecv => "EventRecv",
            PortType::StoreAccess => "StoreAccess",
            PortType::StoreProvide => "StoreProvide",
            PortType::Custom(name) => name,
        }
    }

    pub fn is_builtin(&self) -> bool {
        !matches!(self, PortType::Custom(_))
    }

    pub fn is_stream(&self) -> bool {
        matches!(self, PortType::StreamIn | PortType::StreamOut)
    }
}

impl fmt::Display for PortType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for PortType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PortType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Ok(PortType::named(&name))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplicity {
    One,
    Many,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Builtin,
    Library,
    Inline,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub port_type: PortType,
    pub multiplicity: Multiplicity,
}

impl PortSpec {
    pub fn new(name: &str, port_type: PortType, multiplicity: Multiplicity) -> Self {
        PortSpec {
            name: name.to_string(),
            port_type,
            multiplicity,
        }
    }

    pub fn one(name: &str, port_type: PortType) -> Self {
        Self::new(name, port_type, Multiplicity::One)
    }

    pub fn many(name: &str, port_type: PortType) -> Self {
        Self::new(name, port_type, Multiplicity::Many)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleSpec {
    pub name: String,
    pub accepts: Vec<PortType>,
    pub min_fill: u32,
    /// `None` means unbounded.
    pub max_fill: Option<u32>,
}

impl RoleSpec {
    pub fn new(name: &str, accepts: &[PortType], min_fill: u32, max_fill: Option<u32>) -> Self {
        RoleSpec {
            name: name.to_string(),
            accepts: accepts.to_vec(),
            min_fill,
            max_fill,
        }
    }

    pub fn accepts(&self, port_type: &PortType) -> bool {
        self.accepts.contains(port_type)
    }

    pub fn fill_range(&self) -> String {
        match self.max_fill {
            Some(max) => format!("{}..{}", self.min_fill, max),
            None => format!("{}..*", self.min_fill),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentType {
    pub name: String,
    pub ports: Vec<PortSpec>,
    pub origin: Origin,
}

impl ComponentType {
    pub fn port(&self, name: &str) -> Option<&PortSpec> {
        self.ports.iter().find(|p| p.name == name)
    }

    /// True when every port carries a byte stream.
    pub fn is_stream_only(&self) -> bool {
        self.ports.iter().all(|p| p.port_type.is_stream())
    }

    pub fn is_filter_like(&self) -> bool {
        self.port("stdin")
            .is_some_and(|p| p.port_type == PortType::StreamIn)
            && self
                .port("stdout")
                .is_some_and(|p| p.port_type == PortType::StreamOut)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorType {
    pub name: String,
    pub roles: Vec<RoleSpec>,
    pub origin: Origin,
}

impl ConnectorType {
    pub fn role(&self, name: &str) -> Option<&RoleSpec> {
        self.roles.iter().find(|r| r.name == name)
    }
}

/// Registry of component types, connector types and port types.
///
/// Tables are values: every `define_*` returns a new table and leaves the
/// receiver untouched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeTable {
    port_types: BTreeMap<PortType, Origin>,
    component_types: BTreeMap<String, ComponentType>,
    connector_types: BTreeMap<String, ConnectorType>,
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn builtin_type_table() -> TypeTable {
    use PortType::*;

    let port_types = PortType::BUILTINS
        .iter()
        .cloned()
        .map(|p| (p, Origin::Builtin))
        .collect();

    let component = |name: &str, ports: Vec<PortSpec>| {
        (
            name.to_string(),
            ComponentType {
                name: name.to_string(),
                ports,
                origin: Origin::Builtin,
            },
        )
    };
    let component_types = [
        component(
            FILTER,
            vec![
                PortSpec::one("stdin", StreamIn),
                PortSpec::one("stdout", StreamOut),
            ],
        ),
        component(PROCESS, vec![]),
        component(DATA_STORE, vec![PortSpec::one("store", StoreProvide)]),
    ]
    .into_iter()
    .collect();

    let connector = |name: &str, roles: Vec<RoleSpec>| {
        (
            name.to_string(),
            ConnectorType {
                name: name.to_string(),
                roles,
                origin: Origin::Builtin,
            },
        )
    };
    let connector_types = [
        connector(
            PIPE,
            vec![
                RoleSpec::new("source", &[StreamOut], 1, Some(1)),
                RoleSpec::new("sink", &[StreamIn], 1, Some(1)),
            ],
        ),
        connector(
            RPC,
            vec![
                RoleSpec::new("caller", &[RpcCall], 1, Some(1)),
                RoleSpec::new("definer", &[RpcDef], 1, Some(1)),
            ],
        ),
        connector(
            EVENT,
            vec![
                RoleSpec::new("announcer", &[EventEmit], 1, None),
                RoleSpec::new("listener", &[EventRecv], 0, None),
            ],
        ),
        connector(
            DATA_ACCESS,
            vec![
                RoleSpec::new("client", &[StoreAccess], 1, None),
                RoleSpec::new("store", &[StoreProvide], 1, Some(1)),
            ],
        ),
    ]
    .into_iter()
    .collect();

    TypeTable {
        port_types,
        component_types,
        connector_types,
    }
}

impl Default for TypeTable {
    fn default() -> Self {
        builtin_type_table()
    }
}

impl TypeTable {
    pub fn component_type(&self, name: &str) -> Option<&ComponentType> {
        self.component_types.get(name)
    }

    pub fn connector_type(&self, name: &str) -> Option<&ConnectorType> {
        self.connector_types.get(name)
    }

    pub fn has_port_type(&self, port_type: &PortType) -> bool {
        self.port_types.contains_key(port_type)
    }

    pub fn port_types(&self) -> impl Iterator<Item = (&PortType, Origin)> {
        self.port_types.iter().map(|(p, o)| (p, *o))
    }

    pub fn component_types(&self) -> impl Iterator<Item = &ComponentType> {
        self.component_types.values()
    }

    pub fn connector_types(&self) -> impl Iterator<Item = &ConnectorType> {
        self.connector_types.values()
    }

    fn name_taken(&self, name: &str) -> bool {
        self.component_types.contains_key(name) || self.connector_types.contains_key(name)
    }

    fn check_new_name(&self, name: &str) -> Result<(), Diagnostic> {
        if !is_identifier(name) {
            return Err(Diagnostic::error(
                Code::InvalidName,
                format!("`{name}` is not a valid identifier"),
            ));
        }
        if self.name_taken(name) {
            let what = if BUILTIN_COMPONENTS.contains(&name) || BUILTIN_CONNECTORS.contains(&name) {
                "builtin type"
            } else {
                "type"
            };
            return Err(Diagnostic::error(
                Code::DuplicateType,
                format!("{what} `{name}` is already defined"),
            ));
        }
        Ok(())
    }

    pub fn define_port_type(&self, name: &str, origin: Origin) -> Result<TypeTable, Diagnostic> {
        if !is_identifier(name) {
            return Err(Diagnostic::error(
                Code::InvalidName,
                format!("`{name}` is not a valid identifier"),
            ));
        }
        let port_type = PortType::named(name);
        if self.port_types.contains_key(&port_type) {
            return Err(Diagnostic::error(
                Code::DuplicateType,
                format!("port type `{name}` is already defined"),
            ));
        }
        let mut table = self.clone();
        table.port_types.insert(port_type, origin);
        Ok(table)
    }

    /// Port types not yet known to the table are registered alongside the
    /// component type.
    pub fn define_component_type(
        &self,
        name: &str,
        ports: &[PortSpec],
        origin: Origin,
    ) -> Result<TypeTable, Diagnostic> {
        self.check_new_name(name)?;
        for (i, port) in ports.iter().enumerate() {
            if !is_identifier(&port.name) {
                return Err(Diagnostic::error(
                    Code::BadPortSpec,
                    format!("`{}` is not a valid port name", port.name),
                ));
            }
            if ports[..i].iter().any(|p| p.name == port.name) {
                return Err(Diagnostic::error(
                    Code::BadPortSpec,
                    format!("port `{}` repeats in component type `{name}`", port.name),
                ));
            }
        }
        let mut table = self.clone();
        for port in ports {
            table
                .port_types
                .entry(port.port_type.clone())
                .or_insert(origin);
        }
        table.component_types.insert(
            name.to_string(),
            ComponentType {
                name: name.to_string(),
                ports: ports.to_vec(),
                origin,
            },
        );
        Ok(table)
    }

    pub fn define_connector_type(
        &self,
        name: &str,
        roles: &[RoleSpec],
        origin: Origin,
    ) -> Result<TypeTable, Diagnostic> {
        self.check_new_name(name)?;
        let bad = |msg: String| Err(Diagnostic::error(Code::BadRoleSpec, msg));
        for (i, role) in roles.iter().enumerate() {
            if !is_identifier(&role.name) {
                return bad(format!("`{}` is not a valid role name", role.name));
            }
            if roles[..i].iter().any(|r| r.name == role.name) {
                return bad(format!(
                    "role `{}` repeats in connector type `{name}`",
                    role.name
                ));
            }
            if role.accepts.is_empty() {
                return bad(format!("role `{}` accepts no port types", role.name));
            }
            if let Some(max) = role.max_fill {
                if max == 0 {
                    return bad(format!("role `{}` has a maximum fill of 0", role.name));
                }
                if role.min_fill > max {
                    return bad(format!(
                        "role `{}` has minimum fill {} above maximum {}",
                        role.name, role.min_fill, max
                    ));
                }
            }
            if let Some(unknown) = role.accepts.iter().find(|p| !self.has_port_type(p)) {
                return Err(Diagnostic::error(
                    Code::UnknownPortType,
                    format!("role `{}` accepts unknown port type `{unknown}`", role.name),
                ));
            }
        }
        let mut table = self.clone();
        table.connector_types.insert(
            name.to_string(),
            ConnectorType {
                name: name.to_string(),
                roles: roles.to_vec(),
                origin,
            },
        );
        Ok(table)
    }

    /// Exact membership of `port_type` in the role's accepted set.
    pub fn compatible(&self, port_type: &PortType, role: &RoleSpec) -> Result<bool, Diagnostic> {
        if !self.has_port_type(port_type) {
            return Err(Diagnostic::error(
                Code::UnknownPortType,
                format!("unknown port type `{port_type}`"),
            ));
        }
        Ok(role.accepts(port_type))
    }

    /// Adds every entry of `other` not already present. Entries that exist in
    /// both with different definitions are reported as duplicates.
    pub fn merge(&self, other: &TypeTable) -> Result<TypeTable, Diagnostic> {
        let mut table = self.clone();
        for (p, o) in &other.port_types {
            table.port_types.entry(p.clone()).or_insert(*o);
        }
        for (name, ct) in &other.component_types {
            match table.component_types.get(name) {
                Some(existing) if existing == ct => {}
                Some(_) => {
                    return Err(Diagnostic::error(
                        Code::DuplicateType,
                        format!("type `{name}` is already defined"),
                    ))
                }
                None => {
                    table.check_new_name(name)?;
                    table.component_types.insert(name.clone(), ct.clone());
                }
            }
        }
        for (name, ct) in &other.connector_types {
            match table.connector_types.get(name) {
                Some(existing) if existing == ct => {}
                Some(_) => {
                    return Err(Diagnostic::error(
                        Code::DuplicateType,
                        format!("type `{name}` is already defined"),
                    ))
                }
                None => {
                    table.check_new_name(name)?;
                    table.connector_types.insert(name.clone(), ct.clone());
                }
            }
        }
        Ok(table)
    }
}
