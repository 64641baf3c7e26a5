//! Logical-name connectivity between two simulated sites.
//!
//! Each site owns a directory that serves as its endpoint namespace. Sites
//! may register the same concrete endpoint; a service is reached by logical
//! name, either directly inside its own site or through the relay pair.

mod agent;

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use crate::diag::{Code, Diagnostic};
use crate::model::is_identifier;

pub use agent::{run_relay, RelayHandle, RelayStatus, INGRESS};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Site {
    pub name: String,
    pub root: PathBuf,
    /// Logical name → endpoint relative to `root`.
    registry: BTreeMap<String, String>,
}

impl Site {
    pub fn new(name: &str, root: impl Into<PathBuf>) -> Site {
        Site {
            name: name.to_string(),
            root: root.into(),
            registry: BTreeMap::new(),
        }
    }

    pub fn registry(&self) -> &BTreeMap<String, String> {
        &self.registry
    }

    pub fn endpoint(&self, name: &str) -> Option<PathBuf> {
        self.registry.get(name).map(|e| self.root.join(e))
    }

    pub fn register_service(&self, name: &str, endpoint: &str) -> Result<Site, Diagnostic> {
        if !is_identifier(name) {
            return Err(Diagnostic::error(
                Code::InvalidName,
                format!("`{name}` is not a valid logical name"),
            ));
        }
        let inside = !endpoint.is_empty()
            && Path::new(endpoint)
                .components()
                .all(|c| matches!(c, Component::Normal(_)));
        if !inside {
            return Err(Diagnostic::error(
                Code::InvalidName,
                format!(
                    "endpoint `{endpoint}` is not inside the namespace of site `{}`",
                    self.name
                ),
            ));
        }
        if self.registry.contains_key(name) {
            return Err(Diagnostic::error(
                Code::DuplicateLogicalName,
                format!("`{name}` is already registered in site `{}`", self.name),
            ));
        }
        let mut next = self.clone();
        next.registry.insert(name.to_string(), endpoint.to_string());
        Ok(next)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Route {
    Direct(PathBuf),
    /// The local relay proxy for the name; the remote endpoint stays hidden.
    ViaRelay(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelayLink {
    pub sites: [Site; 2],
}

/// Proxy path inside a site for a name owned by the peer.
pub fn proxy_path(name: &str) -> String {
    format!("relay/{name}.sock")
}

impl RelayLink {
    pub fn new(a: Site, b: Site) -> Result<RelayLink, Diagnostic> {
        if a.name == b.name {
            return Err(Diagnostic::error(
                Code::InvalidName,
                format!(
                    "a relay link needs two distinct sites, got `{}` twice",
                    a.name
                ),
            ));
        }
        Ok(RelayLink { sites: [a, b] })
    }

    pub fn site(&self, name: &str) -> Option<&Site> {
        self.sites.iter().find(|s| s.name == name)
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.name == name)
    }

    /// Names registered in exactly one of the two sites → owning site.
    pub fn forwarding_table(&self) -> BTreeMap<String, String> {
        let [a, b] = &self.sites;
        let mut table = BTreeMap::new();
        for (own, other) in [(a, b), (b, a)] {
            for name in own.registry.keys() {
                if !other.registry.contains_key(name) {
                    table.insert(name.clone(), own.name.clone());
                }
            }
        }
        table
    }

    pub fn resolve(&self, from: &str, name: &str) -> Result<Route, Diagnostic> {
        let Some(i) = self.index(from) else {
            return Err(Diagnostic::error(
                Code::NotFound,
                format!("site `{from}` is not part of this link"),
            ));
        };
        let (local, peer) = (&self.sites[i], &self.sites[1 - i]);
        match (local.endpoint(name), peer.registry.contains_key(name)) {
            (Some(_), true) => Err(Diagnostic::error(
                Code::AmbiguousName,
                format!(
                    "`{name}` is registered in both `{}` and `{}`",
                    local.name, peer.name
                ),
            )),
            (Some(ep), false) => Ok(Route::Direct(ep)),
            (None, true) => Ok(Route::ViaRelay(local.root.join(proxy_path(name)))),
            (None, false) => Err(Diagnostic::error(
                Code::NotFound,
                format!("no service named `{name}` is reachable from site `{from}`"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link() -> RelayLink {
        let a = Site::new("A", "/ns/a")
            .register_service("db", "db.sock")
            .unwrap();
        let b = Site::new("B", "/ns/b")
            .register_service("svc", "db.sock")
            .unwrap();
        RelayLink::new(a, b).unwrap()
    }

    #[test]
    fn register() {
        let a = Site::new("A", "/ns/a")
            .register_service("db", "ep1")
            .unwrap();
        assert_eq!(a.registry()["db"], "ep1");
        assert_eq!(
            a.register_service("db", "ep2").unwrap_err().code,
            Code::DuplicateLogicalName
        );
        assert_eq!(
            a.register_service("x", "../escape").unwrap_err().code,
            Code::InvalidName
        );
        assert_eq!(
            a.register_service("x", "/abs").unwrap_err().code,
            Code::InvalidName
        );
    }

    #[test]
    fn overlapping_endpoints_across_sites() {
        let a = Site::new("A", "/ns/a").register_service("db", "same.sock");
        let b = Site::new("B", "/ns/b").register_service("db", "same.sock");
        assert!(a.is_ok() && b.is_ok());
    }

    #[test]
    fn resolution() {
        let l = link();
        assert_eq!(
            l.resolve("A", "db").unwrap(),
            Route::Direct("/ns/a/db.sock".into())
        );
        assert_eq!(
            l.resolve("A", "svc").unwrap(),
            Route::ViaRelay("/ns/a/relay/svc.sock".into())
        );
        assert_eq!(l.resolve("A", "nope").unwrap_err().code, Code::NotFound);
        assert_eq!(l.resolve("C", "db").unwrap_err().code, Code::NotFound);
    }

    #[test]
    fn via_relay_never_names_the_remote_endpoint() {
        let l = link();
        let Route::ViaRelay(p) = l.resolve("A", "svc").unwrap() else {
            panic!()
        };
        assert!(p.starts_with("/ns/a"));
    }

    #[test]
    fn ambiguous_and_forwarding_table() {
        let a = Site::new("A", "/a")
            .register_service("x", "x.sock")
            .unwrap();
        let b = Site::new("B", "/b")
            .register_service("x", "x.sock")
            .unwrap();
        let b = b.register_service("y", "y.sock").unwrap();
        let l = RelayLink::new(a, b).unwrap();
        assert_eq!(l.resolve("A", "x").unwrap_err().code, Code::AmbiguousName);
        let table: Vec<_> = l.forwarding_table().into_iter().collect();
        assert_eq!(table, [("y".to_string(), "B".to_string())]);
    }
}
