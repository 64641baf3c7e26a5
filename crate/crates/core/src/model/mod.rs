//! Typed component/connector vocabulary and the architecture graph.

mod arch;
mod types;

pub use arch::{
    Architecture, Attachment, Attributes, ConnectorInstance, ExternalBinding, ExternalStream,
    Instance, IoBindings, IoTarget,
};
pub use types::{
    builtin_type_table, is_identifier, ComponentType, ConnectorType, Multiplicity, Origin,
    PortSpec, PortType, RoleSpec, TypeTable, BUILTIN_COMPONENTS, BUILTIN_CONNECTORS, DATA_ACCESS,
    DATA_STORE, EVENT, FILTER, PIPE, PROCESS, RPC,
};
