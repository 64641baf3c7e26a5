//! Lowering of a checked architecture into an executable plan.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::diag::{Code, Diagnostic};
use crate::model::{
    Architecture, ExternalStream, IoBindings, TypeTable, DATA_ACCESS, EVENT, PIPE, RPC,
};

/// Site of instances without a `site` attribute.
pub const DEFAULT_SITE: &str = "local";
pub const BROKER_SERVICE: &str = "broker";

/// (logical name, owner site, importing site)
type Crossing = (String, String, String);

/// A socket path relative to the namespace root of one site.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub site: String,
    pub path: String,
}

impl Endpoint {
    pub fn new(site: &str, path: impl Into<String>) -> Self {
        Endpoint {
            site: site.to_string(),
            path: path.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PortBinding {
    /// Byte stream on a file descriptor of the child.
    Fd {
        fd: i32,
        channel: String,
    },
    /// The child listens here for RPC or data-access clients.
    Listen {
        endpoint: Endpoint,
    },
    /// The child connects here as an RPC caller or data-access client.
    Connect {
        endpoint: Endpoint,
    },
    Emit {
        endpoint: Endpoint,
        topic: String,
    },
    Receive {
        endpoint: Endpoint,
        topic: String,
    },
}

impl PortBinding {
    pub fn endpoint(&self) -> Option<&Endpoint> {
        match self {
            PortBinding::Fd { .. } => None,
            PortBinding::Listen { endpoint }
            | PortBinding::Connect { endpoint }
            | PortBinding::Emit { endpoint, .. }
            | PortBinding::Receive { endpoint, .. } => Some(endpoint),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub id: String,
    pub instance: String,
    pub program: String,
    pub args: Vec<String>,
    pub replica: u32,
    pub stateless: bool,
    pub site: String,
    pub ports: BTreeMap<String, Vec<PortBinding>>,
}

impl ProcessSpec {
    pub fn fd_channel(&self, port: &str) -> Option<&str> {
        self.ports.get(port)?.iter().find_map(|b| match b {
            PortBinding::Fd { channel, .. } => Some(channel.as_str()),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    /// Copies every record to every output.
    Tee,
    /// Interleaves records from every input in arrival order.
    Merge,
    /// Sends record `i` to output `i mod n`.
    Split,
    /// Writes seed bytes, then forwards its input.
    Seed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub id: String,
    pub kind: StageKind,
    pub instance: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelEnd {
    Process { id: String, port: String },
    Stage { id: String, index: usize },
    External { stream: ExternalStream },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub connector: Option<String>,
    pub from: ChannelEnd,
    pub to: ChannelEnd,
}

impl ChannelSpec {
    pub fn is_file(&self) -> bool {
        matches!(self.from, ChannelEnd::External { .. })
            || matches!(self.to, ChannelEnd::External { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerSpec {
    pub endpoint: Endpoint,
}

/// A listening endpoint owned by one process.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub connector: String,
    pub provider: String,
    pub endpoint: Endpoint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayExport {
    pub name: String,
    pub site: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayImport {
    pub name: String,
    pub site: String,
    pub proxy: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelaySpec {
    pub sites: [String; 2],
    pub exports: Vec<RelayExport>,
    pub imports: Vec<RelayImport>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildPlan {
    pub system: String,
    /// Relative program and I/O paths resolve against this directory.
    pub base_dir: String,
    pub processes: Vec<ProcessSpec>,
    pub stages: Vec<StageSpec>,
    pub channels: Vec<ChannelSpec>,
    pub broker: Option<BrokerSpec>,
    pub services: Vec<ServiceSpec>,
    pub relay: Option<RelaySpec>,
    /// Process and stage ids, consumers before producers.
    pub start_order: Vec<String>,
    pub io: IoBindings,
    /// Processes whose exit status becomes the overall status.
    pub primary: Vec<String>,
}

impl BuildPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<BuildPlan, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn process(&self, id: &str) -> Option<&ProcessSpec> {
        self.processes.iter().find(|p| p.id == id)
    }

    pub fn stage(&self, id: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.id == id)
    }

    pub fn channel(&self, id: &str) -> Option<&ChannelSpec> {
        self.channels.iter().find(|c| c.id == id)
    }

    pub fn stage_inputs(&self, id: &str) -> Vec<&ChannelSpec> {
        let mut v: Vec<&ChannelSpec> = self
            .channels
            .iter()
            .filter(|c| matches!(&c.to, ChannelEnd::Stage { id: s, .. } if s == id))
            .collect();
        v.sort_by_key(|c| match c.to {
            ChannelEnd::Stage { index, .. } => index,
            _ => 0,
        });
        v
    }

    pub fn stage_outputs(&self, id: &str) -> Vec<&ChannelSpec> {
        let mut v: Vec<&ChannelSpec> = self
            .channels
            .iter()
            .filter(|c| matches!(&c.from, ChannelEnd::Stage { id: s, .. } if s == id))
            .collect();
        v.sort_by_key(|c| match c.from {
            ChannelEnd::Stage { index, .. } => index,
            _ => 0,
        });
        v
    }

    pub fn count_stages(&self, kind: StageKind) -> usize {
        self.stages.iter().filter(|s| s.kind == kind).count()
    }
}

fn site_of(arch: &Architecture, instance: &str) -> String {
    arch.instances
        .get(instance)
        .and_then(|i| i.attrs.site.clone())
        .unwrap_or_else(|| DEFAULT_SITE.to_string())
}

/// Where a stream leaves or enters a component, before synthetic stages.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum StreamEnd {
    Port(String, String),
    External(ExternalStream),
}

impl StreamEnd {
    fn to_channel_end(&self) -> ChannelEnd {
        match self {
            StreamEnd::Port(i, p) => ChannelEnd::Process {
                id: i.clone(),
                port: p.clone(),
            },
            StreamEnd::External(s) => ChannelEnd::External { stream: *s },
        }
    }
}

struct Lowering<'a> {
    arch: &'a Architecture,
    table: &'a TypeTable,
    diags: Vec<Diagnostic>,
    processes: BTreeMap<String, ProcessSpec>,
    stages: Vec<StageSpec>,
    channels: Vec<ChannelSpec>,
}

impl Lowering<'_> {
    fn bind(&mut self, instance: &str, port: &str, binding: PortBinding) {
        if let Some(p) = self.processes.get_mut(instance) {
            p.ports.entry(port.to_string()).or_default().push(binding);
        }
    }

    /// File descriptor for a stream port: stdin 0, stdout 1, the rest from 3
    /// in declaration order.
    fn fd_for(&self, instance: &str, port: &str) -> i32 {
        match port {
            "stdin" => 0,
            "stdout" => 1,
            _ => {
                let ctype = self
                    .arch
                    .instances
                    .get(instance)
                    .and_then(|i| self.table.component_type(&i.type_name));
                let extra = ctype
                    .map(|t| {
                        t.ports
                            .iter()
                            .filter(|p| {
                                p.port_type.is_stream() && p.name != "stdin" && p.name != "stdout"
                            })
                            .position(|p| p.name == port)
                            .unwrap_or(0)
                    })
                    .unwrap_or(0);
                3 + extra as i32
            }
        }
    }

    fn add_channel(
        &mut self,
        id: String,
        connector: Option<String>,
        from: ChannelEnd,
        to: ChannelEnd,
    ) {
        for end in [&from, &to] {
            if let ChannelEnd::Process { id: pid, port } = end {
                let fd = self.fd_for(pid, port);
                let (pid, port) = (pid.clone(), port.clone());
                self.bind(
                    &pid,
                    &port,
                    PortBinding::Fd {
                        fd,
                        channel: id.clone(),
                    },
                );
            }
        }
        self.channels.push(ChannelSpec {
            id,
            connector,
            from,
            to,
        });
    }

    fn lower_pipes(&mut self) {
        let arch = self.arch;
        // (pipe, source end, sink end)
        let mut pipes: Vec<(String, Option<StreamEnd>, Option<StreamEnd>)> = Vec::new();
        for conn in arch.connectors.values().filter(|c| c.type_name == PIPE) {
            let end = |role: &str, ext: ExternalStream| {
                arch.attachments_of(&conn.name, role)
                    .next()
                    .map(|a| StreamEnd::Port(a.instance.clone(), a.port.clone()))
                    .or_else(|| {
                        arch.externals_of(&conn.name, role)
                            .next()
                            .map(|_| StreamEnd::External(ext))
                    })
            };
            pipes.push((
                conn.name.clone(),
                end("source", ExternalStream::Input),
                end("sink", ExternalStream::Output),
            ));
        }

        let mut by_source: BTreeMap<StreamEnd, Vec<usize>> = BTreeMap::new();
        let mut by_sink: BTreeMap<StreamEnd, Vec<usize>> = BTreeMap::new();
        for (i, (name, src, dst)) in pipes.iter().enumerate() {
            // underfilled roles are reported by the checker
            if let (Some(s), Some(d)) = (src, dst) {
                if matches!(s, StreamEnd::External(_)) && matches!(d, StreamEnd::External(_)) {
                    self.diags.push(
                        Diagnostic::error(
                            Code::UnsupportedLowering,
                            format!(
                                "pipe `{name}` connects external input directly to external output"
                            ),
                        )
                        .or_span(arch.connectors[name].span),
                    );
                    continue;
                }
                by_source.entry(s.clone()).or_default().push(i);
                by_sink.entry(d.clone()).or_default().push(i);
            }
        }

        let mut from_of: BTreeMap<usize, ChannelEnd> = BTreeMap::new();
        let mut to_of: BTreeMap<usize, ChannelEnd> = BTreeMap::new();

        for (src, idxs) in &by_source {
            if idxs.len() == 1 {
                from_of.insert(idxs[0], src.to_channel_end());
                continue;
            }
            let StreamEnd::Port(inst, port) = src else {
                // the same external input feeding several pipes
                self.diags.push(Diagnostic::error(
                    Code::UnsupportedLowering,
                    "external input feeds more than one pipe",
                ));
                continue;
            };
            let tee = format!("{inst}.{port}.tee");
            self.stages.push(StageSpec {
                id: tee.clone(),
                kind: StageKind::Tee,
                instance: inst.clone(),
                seed: None,
            });
            self.add_channel(
                format!("{tee}.in"),
                None,
                src.to_channel_end(),
                ChannelEnd::Stage {
                    id: tee.clone(),
                    index: 0,
                },
            );
            for (k, &i) in idxs.iter().enumerate() {
                from_of.insert(
                    i,
                    ChannelEnd::Stage {
                        id: tee.clone(),
                        index: k,
                    },
                );
            }
        }

        // seeded instances get a seed stage in front of stdin
        let mut seeded: BTreeMap<String, String> = BTreeMap::new();
        for inst in arch.instances.values() {
            if let Some(seed) = &inst.attrs.seed {
                let id = format!("{}.stdin.seed", inst.name);
                self.stages.push(StageSpec {
                    id: id.clone(),
                    kind: StageKind::Seed,
                    instance: inst.name.clone(),
                    seed: Some(seed.clone()),
                });
                self.add_channel(
                    format!("{id}.out"),
                    None,
                    ChannelEnd::Stage {
                        id: id.clone(),
                        index: 0,
                    },
                    ChannelEnd::Process {
                        id: inst.name.clone(),
                        port: "stdin".into(),
                    },
                );
                seeded.insert(inst.name.clone(), id);
            }
        }

        for (dst, idxs) in &by_sink {
            let seed_stage = match dst {
                StreamEnd::Port(inst, port) if port == "stdin" => seeded.get(inst).cloned(),
                _ => None,
            };
            let target = match &seed_stage {
                Some(id) => ChannelEnd::Stage {
                    id: id.clone(),
                    index: 0,
                },
                None => dst.to_channel_end(),
            };
            if idxs.len() == 1 {
                to_of.insert(idxs[0], target);
                continue;
            }
            let StreamEnd::Port(inst, port) = dst else {
                self.diags.push(Diagnostic::error(
                    Code::UnsupportedLowering,
                    "more than one pipe writes to the external output",
                ));
                continue;
            };
            let merge = format!("{inst}.{port}.merge");
            self.stages.push(StageSpec {
                id: merge.clone(),
                kind: StageKind::Merge,
                instance: inst.clone(),
                seed: None,
            });
            self.add_channel(
                format!("{merge}.out"),
                None,
                ChannelEnd::Stage {
                    id: merge.clone(),
                    index: 0,
                },
                target,
            );
            for (k, &i) in idxs.iter().enumerate() {
                to_of.insert(
                    i,
                    ChannelEnd::Stage {
                        id: merge.clone(),
                        index: k,
                    },
                );
            }
        }

        for (i, (name, _, _)) in pipes.iter().enumerate() {
            if let (Some(from), Some(to)) = (from_of.remove(&i), to_of.remove(&i)) {
                self.add_channel(name.clone(), Some(name.clone()), from, to);
            }
        }
    }

    fn lower_sockets(&mut self) -> (Option<BrokerSpec>, Vec<ServiceSpec>, Vec<Crossing>) {
        let arch = self.arch;
        let mut crossings: Vec<Crossing> = Vec::new();
        let mut services = Vec::new();

        let event_conns: Vec<_> = arch
            .connectors
            .values()
            .filter(|c| c.type_name == EVENT)
            .collect();
        let broker = if event_conns.is_empty() {
            None
        } else {
            let broker_site = event_conns
                .iter()
                .flat_map(|c| arch.attachments_of(&c.name, "announcer"))
                .map(|a| a.instance.as_str())
                .min()
                .map(|i| site_of(arch, i))
                .unwrap_or_else(|| DEFAULT_SITE.to_string());
            for conn in &event_conns {
                for (role, emit) in [("announcer", true), ("listener", false)] {
                    for a in arch.attachments_of(&conn.name, role) {
                        let site = site_of(arch, &a.instance);
                        let endpoint = if site == broker_site {
                            Endpoint::new(&site, "broker.sock")
                        } else {
                            crossings.push((
                                BROKER_SERVICE.into(),
                                broker_site.clone(),
                                site.clone(),
                            ));
                            Endpoint::new(&site, format!("relay/{BROKER_SERVICE}.sock"))
                        };
                        let topic = conn.name.clone();
                        let binding = if emit {
                            PortBinding::Emit { endpoint, topic }
                        } else {
                            PortBinding::Receive { endpoint, topic }
                        };
                        self.bind(&a.instance, &a.port, binding);
                    }
                }
            }
            Some(BrokerSpec {
                endpoint: Endpoint::new(&broker_site, "broker.sock"),
            })
        };

        for conn in arch.connectors.values() {
            let (server_role, client_role, dir) = match conn.type_name.as_str() {
                RPC => ("definer", "caller", "rpc"),
                DATA_ACCESS => ("store", "client", "store"),
                PIPE | EVENT => continue,
                other => {
                    self.diags.push(
                        Diagnostic::error(
                            Code::UnsupportedLowering,
                            format!("connector `{}` has developer-defined type `{other}`, which has no runtime realization", conn.name),
                        )
                        .or_span(conn.span),
                    );
                    continue;
                }
            };
            let Some(server) = arch.attachments_of(&conn.name, server_role).next() else {
                continue;
            };
            let server_site = site_of(arch, &server.instance);
            let endpoint = Endpoint::new(&server_site, format!("{dir}/{}.sock", conn.name));
            self.bind(
                &server.instance,
                &server.port,
                PortBinding::Listen {
                    endpoint: endpoint.clone(),
                },
            );
            services.push(ServiceSpec {
                name: conn.name.clone(),
                connector: conn.name.clone(),
                provider: server.instance.clone(),
                endpoint: endpoint.clone(),
            });
            for client in arch.attachments_of(&conn.name, client_role) {
                let site = site_of(arch, &client.instance);
                let target = if site == server_site {
                    endpoint.clone()
                } else {
                    crossings.push((conn.name.clone(), server_site.clone(), site.clone()));
                    Endpoint::new(&site, format!("relay/{}.sock", conn.name))
                };
                self.bind(
                    &client.instance,
                    &client.port,
                    PortBinding::Connect { endpoint: target },
                );
            }
        }
        (broker, services, crossings)
    }
}

fn relay_spec(
    crossings: Vec<(String, String, String)>,
    broker: &Option<BrokerSpec>,
    services: &[ServiceSpec],
) -> Option<RelaySpec> {
    if crossings.is_empty() {
        return None;
    }
    let sites: BTreeSet<&String> = crossings.iter().flat_map(|(_, a, b)| [a, b]).collect();
    let sites: Vec<String> = sites.into_iter().cloned().collect();
    let mut exports = BTreeMap::new();
    let mut imports = BTreeMap::new();
    for (name, owner, importer) in &crossings {
        let path = if name == BROKER_SERVICE {
            broker
                .as_ref()
                .map(|b| b.endpoint.path.clone())
                .unwrap_or_default()
        } else {
            services
                .iter()
                .find(|s| &s.name == name)
                .map(|s| s.endpoint.path.clone())
                .unwrap_or_default()
        };
        exports.insert(
            (owner.clone(), name.clone()),
            RelayExport {
                name: name.clone(),
                site: owner.clone(),
                path,
            },
        );
        imports.insert(
            (importer.clone(), name.clone()),
            RelayImport {
                name: name.clone(),
                site: importer.clone(),
                proxy: format!("relay/{name}.sock"),
            },
        );
    }
    Some(RelaySpec {
        sites: [sites[0].clone(), sites[1].clone()],
        exports: exports.into_values().collect(),
        imports: imports.into_values().collect(),
    })
}

/// Producer → consumer edges between plan nodes (process ids and stage ids).
fn plan_edges(plan: &BuildPlan) -> Vec<(String, String)> {
    let node = |end: &ChannelEnd| match end {
        ChannelEnd::Process { id, .. } | ChannelEnd::Stage { id, .. } => Some(id.clone()),
        ChannelEnd::External { .. } => None,
    };
    let mut edges: Vec<(String, String)> = plan
        .channels
        .iter()
        .filter_map(|c| Some((node(&c.from)?, node(&c.to)?)))
        .collect();
    // listeners start before announcers
    for p in &plan.processes {
        for topic in p.ports.values().flatten().filter_map(|b| match b {
            PortBinding::Emit { topic, .. } => Some(topic),
            _ => None,
        }) {
            for q in &plan.processes {
                let hears = q
                    .ports
                    .values()
                    .flatten()
                    .any(|b| matches!(b, PortBinding::Receive { topic: t, .. } if t == topic));
                if hears && q.id != p.id {
                    edges.push((p.id.clone(), q.id.clone()));
                }
            }
        }
    }
    // socket clients depend on their servers
    for p in &plan.processes {
        for binding in p.ports.values().flatten() {
            if let PortBinding::Connect { .. } = binding {
                for s in &plan.services {
                    if binding
                        .endpoint()
                        .is_some_and(|e| e.path.ends_with(&format!("/{}.sock", s.name)))
                    {
                        for q in plan.processes.iter().filter(|q| q.instance == s.provider) {
                            edges.push((p.id.clone(), q.id.clone()));
                        }
                    }
                }
            }
        }
    }
    edges
}

/// Reverse topological order with seed stages breaking cycles; any node left
/// on an unbroken cycle follows in name order.
fn start_order(plan: &BuildPlan) -> Vec<String> {
    let mut nodes: BTreeSet<String> = plan.processes.iter().map(|p| p.id.clone()).collect();
    nodes.extend(plan.stages.iter().map(|s| s.id.clone()));
    let seeds: BTreeSet<&str> = plan
        .stages
        .iter()
        .filter(|s| s.kind == StageKind::Seed)
        .map(|s| s.id.as_str())
        .collect();
    let edges: Vec<(String, String)> = plan_edges(plan)
        .into_iter()
        .filter(|(_, b)| !seeds.contains(b.as_str()))
        .collect();

    let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    for (_, b) in &edges {
        *indeg.get_mut(b.as_str()).unwrap() += 1;
    }
    let mut ready: BTreeSet<&str> = indeg
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::new();
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for (a, b) in &edges {
            if a == n {
                let d = indeg.get_mut(b.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(b.as_str());
                }
            }
        }
    }
    for n in &nodes {
        if !order.contains(n) {
            order.push(n.clone());
        }
    }
    order.reverse();
    order
}

/// Processes whose status decides the run: whoever writes the external
/// output, else every process with no downstream consumer.
fn primary_processes(plan: &BuildPlan) -> Vec<String> {
    fn producers(
        plan: &BuildPlan,
        end: &ChannelEnd,
        out: &mut BTreeSet<String>,
        seen: &mut BTreeSet<String>,
    ) {
        match end {
            ChannelEnd::Process { id, .. } => {
                out.insert(id.clone());
            }
            ChannelEnd::Stage { id, .. } => {
                if seen.insert(id.clone()) {
                    for c in plan.stage_inputs(id) {
                        producers(plan, &c.from, out, seen);
                    }
                }
            }
            ChannelEnd::External { .. } => {}
        }
    }
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for c in &plan.channels {
        if matches!(
            c.to,
            ChannelEnd::External {
                stream: ExternalStream::Output
            }
        ) {
            producers(plan, &c.from, &mut out, &mut seen);
        }
    }
    if out.is_empty() {
        let edges = plan_edges(plan);
        for p in &plan.processes {
            let feeds_process = edges.iter().any(|(a, _)| a == &p.id);
            if !feeds_process {
                out.insert(p.id.clone());
            }
        }
    }
    out.into_iter().collect()
}

/// Lowers `arch` into a deterministic plan. `io` supplies the external
/// stream bindings; `base_dir` anchors relative program and file paths.
pub fn plan(
    arch: &Architecture,
    table: &TypeTable,
    io: &IoBindings,
    base_dir: &str,
) -> Result<BuildPlan, Vec<Diagnostic>> {
    let mut low = Lowering {
        arch,
        table,
        diags: Vec::new(),
        processes: BTreeMap::new(),
        stages: Vec::new(),
        channels: Vec::new(),
    };

    for inst in arch.instances.values() {
        let Some(implementation) = &inst.attrs.implementation else {
            low.diags.push(
                Diagnostic::error(
                    Code::MissingImplementation,
                    format!("component `{}` has no `impl` attribute", inst.name),
                )
                .or_span(inst.span),
            );
            continue;
        };
        let words = shlex::split(implementation).filter(|w| !w.is_empty());
        let Some(mut words) = words else {
            low.diags.push(
                Diagnostic::error(
                    Code::MissingImplementation,
                    format!("cannot split `impl` of `{}` into a command line", inst.name),
                )
                .or_span(inst.span),
            );
            continue;
        };
        let program = words.remove(0);
        if inst.attrs.replicas.is_some_and(|n| n > 1) && !inst.attrs.stateless {
            low.diags.push(
                Diagnostic::error(
                    Code::NotStateless,
                    format!(
                        "component `{}` requests replicas but is not marked `stateless`",
                        inst.name
                    ),
                )
                .or_span(inst.span),
            );
        }
        low.processes.insert(
            inst.name.clone(),
            ProcessSpec {
                id: inst.name.clone(),
                instance: inst.name.clone(),
                program,
                args: words,
                replica: 0,
                stateless: inst.attrs.stateless,
                site: site_of(arch, &inst.name),
                ports: BTreeMap::new(),
            },
        );
    }

    let sites: BTreeSet<String> = arch.instances.keys().map(|i| site_of(arch, i)).collect();
    if sites.len() > 2 {
        let list: Vec<&str> = sites.iter().map(String::as_str).collect();
        low.diags.push(Diagnostic::error(
            Code::TooManySites,
            format!(
                "instances span {} sites ({}); one relay link joins at most two",
                sites.len(),
                list.join(", ")
            ),
        ));
    }

    for stream in [ExternalStream::Input, ExternalStream::Output] {
        if io.get(stream).is_none() && arch.externals.iter().any(|e| e.stream == stream) {
            let code = match stream {
                ExternalStream::Input => Code::UnboundExternalInput,
                ExternalStream::Output => Code::UnboundExternalOutput,
            };
            low.diags.push(Diagnostic::error(
                code,
                format!("`{}` is not bound", stream.as_str()),
            ));
        }
    }

    low.lower_pipes();
    let (broker, services, crossings) = low.lower_sockets();

    if !low.diags.is_empty() {
        return Err(low.diags);
    }

    let relay = relay_spec(crossings, &broker, &services);
    let mut plan = BuildPlan {
        system: arch.name.clone(),
        base_dir: base_dir.to_string(),
        processes: low.processes.into_values().collect(),
        stages: low.stages,
        channels: low.channels,
        broker,
        services,
        relay,
        start_order: Vec::new(),
        io: io.clone(),
        primary: Vec::new(),
    };
    plan.stages.sort_by(|a, b| a.id.cmp(&b.id));
    plan.channels.sort_by(|a, b| a.id.cmp(&b.id));
    plan.start_order = start_order(&plan);
    plan.primary = primary_processes(&plan);

    for inst in arch.instances.values() {
        if let Some(n) = inst.attrs.replicas.filter(|&n| n > 1) {
            plan = expand_fanout(&plan, &inst.name, n).map_err(|d| vec![d.or_span(inst.span)])?;
        }
    }
    Ok(plan)
}

/// Replaces a stateless stage by a splitter, `n` replicas and a merger.
pub fn expand_fanout(plan: &BuildPlan, stage: &str, n: u32) -> Result<BuildPlan, Diagnostic> {
    let Some(original) = plan
        .processes
        .iter()
        .find(|p| p.instance == stage && p.id == stage)
    else {
        return Err(Diagnostic::error(
            Code::UnknownInstance,
            format!("plan has no unreplicated process `{stage}`"),
        ));
    };
    if n <= 1 {
        return Ok(plan.clone());
    }
    if !original.stateless {
        return Err(Diagnostic::error(
            Code::NotStateless,
            format!("`{stage}` is not marked `stateless` and cannot be replicated"),
        ));
    }
    if let Some(port) = original
        .ports
        .keys()
        .find(|p| *p != "stdin" && *p != "stdout")
    {
        return Err(Diagnostic::error(
            Code::UnsupportedLowering,
            format!("`{stage}` uses port `{port}`; only stdin/stdout stages can be replicated"),
        ));
    }

    let split = format!("{stage}.split");
    let merge = format!("{stage}.merge");
    let mut next = plan.clone();
    next.processes.retain(|p| p.id != stage);
    next.stages.push(StageSpec {
        id: split.clone(),
        kind: StageKind::Split,
        instance: stage.to_string(),
        seed: None,
    });
    next.stages.push(StageSpec {
        id: merge.clone(),
        kind: StageKind::Merge,
        instance: stage.to_string(),
        seed: None,
    });

    for c in &mut next.channels {
        if matches!(&c.to, ChannelEnd::Process { id, port } if id == stage && port == "stdin") {
            c.to = ChannelEnd::Stage {
                id: split.clone(),
                index: 0,
            };
        }
        if matches!(&c.from, ChannelEnd::Process { id, port } if id == stage && port == "stdout") {
            c.from = ChannelEnd::Stage {
                id: merge.clone(),
                index: 0,
            };
        }
    }

    let mut replicas = Vec::new();
    for i in 0..n {
        let id = format!("{stage}#{i}");
        let input = format!("{split}.out{i}");
        let output = format!("{merge}.in{i}");
        let mut ports = BTreeMap::new();
        ports.insert(
            "stdin".to_string(),
            vec![PortBinding::Fd {
                fd: 0,
                channel: input.clone(),
            }],
        );
        ports.insert(
            "stdout".to_string(),
            vec![PortBinding::Fd {
                fd: 1,
                channel: output.clone(),
            }],
        );
        replicas.push(ProcessSpec {
            id: id.clone(),
            replica: i,
            ports,
            ..original.clone()
        });
        next.channels.push(ChannelSpec {
            id: input,
            connector: None,
            from: ChannelEnd::Stage {
                id: split.clone(),
                index: i as usize,
            },
            to: ChannelEnd::Process {
                id: id.clone(),
                port: "stdin".into(),
            },
        });
        next.channels.push(ChannelSpec {
            id: output,
            connector: None,
            from: ChannelEnd::Process {
                id: id.clone(),
                port: "stdout".into(),
            },
            to: ChannelEnd::Stage {
                id: merge.clone(),
                index: i as usize,
            },
        });
    }
    next.processes.extend(replicas);
    next.processes.sort_by(|a, b| a.id.cmp(&b.id));
    next.stages.sort_by(|a, b| a.id.cmp(&b.id));
    next.channels.sort_by(|a, b| a.id.cmp(&b.id));
    next.start_order = start_order(&next);
    next.primary = primary_processes(&next);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::resolve;
    use crate::model::{builtin_type_table, IoTarget};
    use crate::parser::parse;

    fn lowered(src: &str) -> Result<BuildPlan, Vec<Diagnostic>> {
        let (arch, table) = resolve(&parse(src).unwrap(), &builtin_type_table()).unwrap();
        plan(&arch, &table, &arch.io.clone(), "/base")
    }

    const THREE: &str = r#"system S {
        component A : Filter impl "a";
        component B : Filter impl "b --flag 'two words'";
        component C : Filter impl "c";
        pipeline P: input | A() | B() | C() | output;
        input "in.txt";
        output "out.txt";
    }"#;

    const DIAMOND: &str = r#"system D {
        componenttype Fan { port stdin : StreamIn; port stdout : StreamOut many; }
        componenttype Join { port stdin : StreamIn many; port stdout : StreamOut; }
        component A : Fan impl "a";
        component B : Filter impl "b";
        component C : Filter impl "c";
        component D : Join impl "d";
        connector ab : Pipe; connector ac : Pipe; connector bd : Pipe; connector cd : Pipe;
        attach A.stdout to ab.source; attach B.stdin to ab.sink;
        attach A.stdout to ac.source; attach C.stdin to ac.sink;
        attach B.stdout to bd.source; attach D.stdin to bd.sink;
        attach C.stdout to cd.source; attach D.stdin to cd.sink;
    }"#;

    #[test]
    fn three_stage_pipeline() {
        let p = lowered(THREE).unwrap();
        assert_eq!(p.processes.len(), 3);
        assert_eq!(p.channels.len(), 4);
        assert_eq!(p.channels.iter().filter(|c| c.is_file()).count(), 2);
        assert_eq!(p.process("B").unwrap().args, ["--flag", "two words"]);
        assert_eq!(p.start_order, ["C", "B", "A"]);
        assert_eq!(p.primary, ["C"]);
        assert_eq!(p.process("A").unwrap().fd_channel("stdout"), Some("P_p1"));
    }

    #[test]
    fn diamond_gets_one_tee_and_one_merge() {
        let p = lowered(DIAMOND).unwrap();
        assert_eq!(p.count_stages(StageKind::Tee), 1);
        assert_eq!(p.count_stages(StageKind::Merge), 1);
        assert_eq!(p.stage_outputs("A.stdout.tee").len(), 2);
        assert_eq!(p.stage_inputs("D.stdin.merge").len(), 2);
        assert_eq!(p.primary, ["D"]);
        let pos = |id: &str| p.start_order.iter().position(|s| s == id).unwrap();
        assert!(pos("D") < pos("D.stdin.merge"));
        assert!(pos("D.stdin.merge") < pos("B"));
        assert!(pos("A.stdout.tee") < pos("A"));
    }

    #[test]
    fn missing_impl() {
        let err = lowered("system S { component A : Filter; }").unwrap_err();
        assert_eq!(err[0].code, Code::MissingImplementation);
    }

    #[test]
    fn unbound_external() {
        let err =
            lowered(r#"system S { pipeline P: input | A() | output; output "o"; }"#).unwrap_err();
        assert!(err.iter().any(|d| d.code == Code::UnboundExternalInput));
    }

    #[test]
    fn serialization_is_deterministic() {
        let a = lowered(DIAMOND).unwrap().to_json();
        let b = lowered(DIAMOND).unwrap().to_json();
        assert_eq!(a, b);
        assert_eq!(BuildPlan::from_json(&a).unwrap(), lowered(DIAMOND).unwrap());
    }

    #[test]
    fn fanout_structure() {
        let base =
            lowered(&THREE.replace(r#"impl "b --flag 'two words'""#, r#"impl "b" stateless"#))
                .unwrap();
        let p = expand_fanout(&base, "B", 4).unwrap();
        let ids: Vec<&str> = p.processes.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["A", "B#0", "B#1", "B#2", "B#3", "C"]);
        assert_eq!(p.count_stages(StageKind::Split), 1);
        assert_eq!(p.count_stages(StageKind::Merge), 1);
        assert_eq!(p.stage_inputs("B.split").len(), 1);
        assert_eq!(p.stage_outputs("B.split").len(), 4);
        assert_eq!(p.stage_inputs("B.merge").len(), 4);
        assert_eq!(p.stage_outputs("B.merge").len(), 1);
        assert_eq!(p.process("B#2").unwrap().replica, 2);
        assert_eq!(expand_fanout(&base, "B", 1).unwrap(), base);
    }

    #[test]
    fn fanout_requires_stateless() {
        let base = lowered(THREE).unwrap();
        assert_eq!(
            expand_fanout(&base, "B", 2).unwrap_err().code,
            Code::NotStateless
        );
        let err = lowered(&THREE.replace(r#"impl "c""#, r#"impl "c" replicas 3"#)).unwrap_err();
        assert_eq!(err[0].code, Code::NotStateless);
    }

    #[test]
    fn replicas_attribute_expands_in_plan() {
        let p = lowered(&THREE.replace(r#"impl "c""#, r#"impl "c" stateless replicas 3"#)).unwrap();
        assert_eq!(p.primary, ["C#0", "C#1", "C#2"]);
        assert!(p.stage("C.merge").is_some());
    }

    #[test]
    fn seeded_cycle_breaks_start_order_at_seed() {
        let p = lowered(
            r#"system L {
                component A : Filter impl "a" seed "3\n";
                component B : Filter impl "b";
                connector ab : Pipe; connector ba : Pipe;
                attach A.stdout to ab.source; attach B.stdin to ab.sink;
                attach B.stdout to ba.source; attach A.stdin to ba.sink;
            }"#,
        )
        .unwrap();
        assert_eq!(p.count_stages(StageKind::Seed), 1);
        assert_eq!(
            p.channel("ba").unwrap().to,
            ChannelEnd::Stage {
                id: "A.stdin.seed".into(),
                index: 0
            }
        );
        assert_eq!(p.start_order, ["B", "A", "A.stdin.seed"]);
    }

    #[test]
    fn rpc_and_events_get_endpoints() {
        let p = lowered(
            r#"system R {
                componenttype Client { port call : RpcCall; port out : EventOut; }
                componenttype Server { port def : RpcDefine; port hear : EventIn; }
                component C : Client impl "c";
                component D : Server impl "d";
                connector r : RPC; connector e : Event;
                attach C.call to r.caller; attach D.def to r.definer;
                attach C.out to e.announcer; attach D.hear to e.listener;
            }"#,
        )
        .unwrap();
        let ep = Endpoint::new(DEFAULT_SITE, "rpc/r.sock");
        assert_eq!(
            p.process("D").unwrap().ports["def"],
            [PortBinding::Listen {
                endpoint: ep.clone()
            }]
        );
        assert_eq!(
            p.process("C").unwrap().ports["call"],
            [PortBinding::Connect { endpoint: ep }]
        );
        assert_eq!(p.broker.as_ref().unwrap().endpoint.path, "broker.sock");
        assert!(p.relay.is_none());
        assert!(
            p.start_order.iter().position(|s| s == "D")
                < p.start_order.iter().position(|s| s == "C")
        );
    }

    #[test]
    fn cross_site_rpc_goes_through_relay() {
        let p = lowered(
            r#"system R {
                componenttype Client { port call : RpcCall; }
                componenttype Server { port def : RpcDefine; }
                component C : Client impl "c" site "A";
                component D : Server impl "d" site "B";
                connector r : RPC;
                attach C.call to r.caller; attach D.def to r.definer;
            }"#,
        )
        .unwrap();
        let relay = p.relay.as_ref().unwrap();
        assert_eq!(relay.sites, ["A".to_string(), "B".to_string()]);
        assert_eq!(relay.exports[0].site, "B");
        assert_eq!(relay.imports[0].site, "A");
        let caller = p.process("C").unwrap();
        assert_eq!(
            caller.ports["call"],
            [PortBinding::Connect {
                endpoint: Endpoint::new("A", "relay/r.sock")
            }]
        );
    }

    #[test]
    fn three_sites_are_rejected() {
        let err = lowered(
            r#"system S {
                component A : Process impl "a" site "x";
                component B : Process impl "b" site "y";
                component C : Process impl "c" site "z";
            }"#,
        )
        .unwrap_err();
        assert_eq!(err[0].code, Code::TooManySites);
    }

    #[test]
    fn inherit_io() {
        let (arch, table) = resolve(&parse(THREE).unwrap(), &builtin_type_table()).unwrap();
        let io = IoBindings {
            input: Some(IoTarget::Inherit),
            output: Some(IoTarget::Inherit),
        };
        assert_eq!(plan(&arch, &table, &io, ".").unwrap().io, io);
    }
}
