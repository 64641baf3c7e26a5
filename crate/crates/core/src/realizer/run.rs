//! Execution of a plan: pipes, stage threads, child processes, reaping.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io;
use std::os::fd::{AsFd, AsRawFd, OwnedFd, RawFd};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::{ExternalStream, IoTarget};
use crate::realizer::broker::{run_event_broker, EventBroker};
use crate::realizer::plan::{
    BuildPlan, ChannelEnd, Endpoint, PortBinding, ProcessSpec, StageKind, StageSpec,
};
use crate::realizer::stages::{self, Counts, StageStats};
use crate::relay::{run_relay, RelayHandle, RelayLink, Site};

/// Exit status reported when the wall-clock limit is hit.
pub const TIMEOUT_STATUS: i32 = 124;
pub const SPAWN_FAILURE_STATUS: i32 = 127;
/// Stream ports beyond stdin/stdout that one child may receive.
const MAX_EXTRA_FDS: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Exited {
        code: i32,
    },
    Signaled {
        signal: i32,
    },
    /// Killed by SIGPIPE after its reader went away.
    EarlyClose,
    SpawnFailed {
        message: String,
    },
    TimedOut,
    NotStarted,
}

impl Outcome {
    pub fn status(&self) -> i32 {
        match self {
            Outcome::Exited { code } => *code,
            Outcome::Signaled { signal } => 128 + signal,
            Outcome::EarlyClose => 0,
            Outcome::SpawnFailed { .. } => SPAWN_FAILURE_STATUS,
            Outcome::TimedOut => TIMEOUT_STATUS,
            Outcome::NotStarted => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub id: String,
    pub instance: String,
    pub replica: u32,
    pub outcome: Outcome,
}

/// Traffic seen on a channel. Direct process-to-process pipes are not
/// observed, so their counts are absent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub id: String,
    pub bytes: Option<u64>,
    pub records: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub system: String,
    pub status: i32,
    pub timed_out: bool,
    pub duration_ms: u64,
    pub processes: Vec<ProcessReport>,
    pub channels: Vec<ChannelReport>,
    pub errors: Vec<String>,
}

impl RunReport {
    pub fn process(&self, id: &str) -> Option<&ProcessReport> {
        self.processes.iter().find(|p| p.id == id)
    }

    pub fn channel(&self, id: &str) -> Option<&ChannelReport> {
        self.channels.iter().find(|c| c.id == id)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub timeout: Option<Duration>,
    /// Namespace root for sockets; a fresh temporary directory when absent.
    pub run_dir: Option<PathBuf>,
    /// Extra environment for every child.
    pub env: Vec<(String, String)>,
}

pub fn run(plan: &BuildPlan, timeout: Option<Duration>) -> RunReport {
    run_with(
        plan,
        &RunOptions {
            timeout,
            ..RunOptions::default()
        },
    )
}

#[derive(Default)]
struct Ends {
    read: Option<OwnedFd>,
    write: Option<OwnedFd>,
}

struct Services {
    _broker: Option<EventBroker>,
    _relay: Option<RelayHandle>,
}

fn resolve_path(base: &str, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() || base.is_empty() {
        p.to_path_buf()
    } else {
        Path::new(base).join(p)
    }
}

fn site_root(run_dir: &Path, site: &str) -> PathBuf {
    run_dir.join("sites").join(site)
}

fn endpoint_path(run_dir: &Path, ep: &Endpoint) -> PathBuf {
    site_root(run_dir, &ep.site).join(&ep.path)
}

fn prepare_sites(plan: &BuildPlan, run_dir: &Path) -> io::Result<()> {
    let mut sites: BTreeSet<&str> = plan.processes.iter().map(|p| p.site.as_str()).collect();
    sites.extend(plan.services.iter().map(|s| s.endpoint.site.as_str()));
    sites.extend(plan.broker.iter().map(|b| b.endpoint.site.as_str()));
    for site in sites {
        for sub in ["rpc", "store", "relay"] {
            std::fs::create_dir_all(site_root(run_dir, site).join(sub))?;
        }
    }
    Ok(())
}

fn start_services(plan: &BuildPlan, run_dir: &Path) -> Result<Services, String> {
    let broker = match &plan.broker {
        Some(b) => Some(
            run_event_broker(&endpoint_path(run_dir, &b.endpoint)).map_err(|e| e.to_string())?,
        ),
        None => None,
    };
    let relay = match &plan.relay {
        Some(spec) => {
            let mut sites = [
                Site::new(&spec.sites[0], site_root(run_dir, &spec.sites[0])),
                Site::new(&spec.sites[1], site_root(run_dir, &spec.sites[1])),
            ];
            for export in &spec.exports {
                for site in sites.iter_mut().filter(|s| s.name == export.site) {
                    *site = site
                        .register_service(&export.name, &export.path)
                        .map_err(|d| d.message)?;
                }
            }
            let [a, b] = sites;
            let link = RelayLink::new(a, b).map_err(|d| d.message)?;
            Some(run_relay(&link).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    Ok(Services {
        _broker: broker,
        _relay: relay,
    })
}

fn dup_std(fd: impl AsFd) -> io::Result<OwnedFd> {
    fd.as_fd().try_clone_to_owned()
}

fn open_channels(plan: &BuildPlan) -> io::Result<HashMap<String, Ends>> {
    let mut ends = HashMap::new();
    for c in &plan.channels {
        let e = match (&c.from, &c.to) {
            (
                ChannelEnd::External {
                    stream: ExternalStream::Input,
                },
                _,
            ) => {
                let read = match &plan.io.input {
                    Some(IoTarget::Path(p)) => {
                        let path = resolve_path(&plan.base_dir, p);
                        File::open(&path)
                            .map_err(|e| {
                                io::Error::new(
                                    e.kind(),
                                    format!("cannot open input {}: {e}", path.display()),
                                )
                            })?
                            .into()
                    }
                    Some(IoTarget::Inherit) => dup_std(io::stdin())?,
                    None => return Err(io::Error::other("external input is not bound")),
                };
                Ends {
                    read: Some(read),
                    write: None,
                }
            }
            (
                _,
                ChannelEnd::External {
                    stream: ExternalStream::Output,
                },
            ) => {
                let write = match &plan.io.output {
                    Some(IoTarget::Path(p)) => {
                        let path = resolve_path(&plan.base_dir, p);
                        File::create(&path)
                            .map_err(|e| {
                                io::Error::new(
                                    e.kind(),
                                    format!("cannot create output {}: {e}", path.display()),
                                )
                            })?
                            .into()
                    }
                    Some(IoTarget::Inherit) => dup_std(io::stdout())?,
                    None => return Err(io::Error::other("external output is not bound")),
                };
                Ends {
                    read: None,
                    write: Some(write),
                }
            }
            _ => {
                let (r, w) = io::pipe()?;
                Ends {
                    read: Some(r.into()),
                    write: Some(w.into()),
                }
            }
        };
        ends.insert(c.id.clone(), e);
    }
    Ok(ends)
}

fn spawn_stage(
    plan: &BuildPlan,
    stage: &StageSpec,
    ends: &mut HashMap<String, Ends>,
) -> JoinHandle<io::Result<StageStats>> {
    let mut take_read = |id: &str| ends.get_mut(id).and_then(|e| e.read.take()).map(File::from);
    let inputs: Vec<File> = plan
        .stage_inputs(&stage.id)
        .iter()
        .filter_map(|c| take_read(&c.id))
        .collect();
    let mut take_write = |id: &str| {
        ends.get_mut(id)
            .and_then(|e| e.write.take())
            .map(File::from)
    };
    let outputs: Vec<File> = plan
        .stage_outputs(&stage.id)
        .iter()
        .filter_map(|c| take_write(&c.id))
        .collect();
    let kind = stage.kind;
    let seed = stage.seed.clone().unwrap_or_default();
    thread::spawn(move || match kind {
        StageKind::Tee => match inputs.into_iter().next() {
            Some(i) => stages::tee(i, outputs),
            None => Ok(StageStats::default()),
        },
        StageKind::Split => match inputs.into_iter().next() {
            Some(i) => stages::split(i, outputs),
            None => Ok(StageStats::default()),
        },
        StageKind::Merge => match outputs.into_iter().next() {
            Some(o) => stages::merge(inputs, o),
            None => Ok(StageStats::default()),
        },
        StageKind::Seed => match outputs.into_iter().next() {
            Some(o) => stages::seed(seed.as_bytes(), inputs.into_iter().next(), o),
            None => Ok(StageStats::default()),
        },
    })
}

fn env_name(port: &str) -> String {
    let mut s = String::from("ARCHON_PORT_");
    s.extend(port.chars().map(|c| {
        if c.is_ascii_alphanumeric() {
            c.to_ascii_uppercase()
        } else {
            '_'
        }
    }));
    s
}

fn binding_value(run_dir: &Path, b: &PortBinding) -> String {
    match b {
        PortBinding::Fd { fd, .. } => format!("fd:{fd}"),
        PortBinding::Listen { endpoint } => {
            format!("listen:{}", endpoint_path(run_dir, endpoint).display())
        }
        PortBinding::Connect { endpoint } => {
            format!("connect:{}", endpoint_path(run_dir, endpoint).display())
        }
        PortBinding::Emit { endpoint, topic } => format!(
            "emit:{}#{topic}",
            endpoint_path(run_dir, endpoint).display()
        ),
        PortBinding::Receive { endpoint, topic } => {
            format!(
                "recv:{}#{topic}",
                endpoint_path(run_dir, endpoint).display()
            )
        }
    }
}

/// Child environment for one process: identity plus one variable per port.
pub fn process_env(run_dir: &Path, p: &ProcessSpec) -> Vec<(String, String)> {
    let mut env = vec![
        ("ARCHON_INSTANCE".to_string(), p.instance.clone()),
        ("ARCHON_REPLICA".to_string(), p.replica.to_string()),
        ("ARCHON_SITE".to_string(), p.site.clone()),
    ];
    for (port, bindings) in &p.ports {
        let value: Vec<String> = bindings.iter().map(|b| binding_value(run_dir, b)).collect();
        env.push((env_name(port), value.join(",")));
    }
    env
}

fn build_command(
    plan: &BuildPlan,
    p: &ProcessSpec,
    run_dir: &Path,
    extra_env: &[(String, String)],
    ends: &mut HashMap<String, Ends>,
    pgid: Option<i32>,
) -> (Command, Vec<OwnedFd>) {
    let program = if p.program.contains('/') {
        resolve_path(&plan.base_dir, &p.program)
    } else {
        PathBuf::from(&p.program)
    };
    let mut cmd = Command::new(program);
    cmd.args(&p.args);
    if !plan.base_dir.is_empty() {
        cmd.current_dir(&plan.base_dir);
    }
    cmd.envs(extra_env.iter().map(|(k, v)| (k, v)));
    cmd.envs(process_env(run_dir, p));
    cmd.stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::inherit());

    let mut extra: Vec<(OwnedFd, RawFd)> = Vec::new();
    for bindings in p.ports.values() {
        for b in bindings {
            let PortBinding::Fd { fd, channel } = b else {
                continue;
            };
            let Some(c) = plan.channel(channel) else {
                continue;
            };
            let reads = matches!(&c.to, ChannelEnd::Process { id, .. } if *id == p.id);
            let end =
                ends.get_mut(channel)
                    .and_then(|e| if reads { e.read.take() } else { e.write.take() });
            let Some(end) = end else { continue };
            match fd {
                0 => {
                    cmd.stdin(Stdio::from(end));
                }
                1 => {
                    cmd.stdout(Stdio::from(end));
                }
                _ => extra.push((end, *fd)),
            }
        }
    }
    cmd.process_group(pgid.unwrap_or(0));
    if extra.len() > MAX_EXTRA_FDS {
        extra.truncate(MAX_EXTRA_FDS);
    }
    if !extra.is_empty() {
        let mut pairs = [(-1 as RawFd, -1 as RawFd); MAX_EXTRA_FDS];
        for (slot, (f, t)) in pairs.iter_mut().zip(&extra) {
            *slot = (f.as_raw_fd(), *t);
        }
        let n = extra.len();
        // SAFETY: only async-signal-safe calls (fcntl, dup2) on stack data
        // run between fork and exec. The caller keeps the source descriptors
        // open until after the spawn.
        unsafe {
            cmd.pre_exec(move || {
                let mut moved = [-1 as RawFd; MAX_EXTRA_FDS];
                for i in 0..n {
                    // out of the way of every target first
                    moved[i] = libc::fcntl(pairs[i].0, libc::F_DUPFD_CLOEXEC, 100);
                    if moved[i] < 0 {
                        return Err(io::Error::last_os_error());
                    }
                }
                for i in 0..n {
                    if libc::dup2(moved[i], pairs[i].1) < 0 {
                        return Err(io::Error::last_os_error());
                    }
                }
                Ok(())
            });
        }
    }
    (cmd, extra.into_iter().map(|(f, _)| f).collect())
}

fn outcome_of(status: std::process::ExitStatus) -> Outcome {
    match (status.code(), status.signal()) {
        (Some(code), _) => Outcome::Exited { code },
        (None, Some(libc::SIGPIPE)) => Outcome::EarlyClose,
        (None, Some(signal)) => Outcome::Signaled { signal },
        (None, None) => Outcome::Exited { code: 1 },
    }
}

/// Executes `plan` and reaps everything it started.
pub fn run_with(plan: &BuildPlan, opts: &RunOptions) -> RunReport {
    let start = Instant::now();
    let mut report = RunReport {
        system: plan.system.clone(),
        status: 0,
        timed_out: false,
        duration_ms: 0,
        processes: plan
            .processes
            .iter()
            .map(|p| ProcessReport {
                id: p.id.clone(),
                instance: p.instance.clone(),
                replica: p.replica,
                outcome: Outcome::NotStarted,
            })
            .collect(),
        channels: Vec::new(),
        errors: Vec::new(),
    };

    let tmp;
    let run_dir = match &opts.run_dir {
        Some(d) => d.clone(),
        None => match tempfile::Builder::new().prefix("archon-run-").tempdir() {
            Ok(t) => {
                tmp = t;
                tmp.path().to_path_buf()
            }
            Err(e) => {
                return fail_setup(report, start, format!("cannot create run directory: {e}"))
            }
        },
    };
    if let Err(e) = prepare_sites(plan, &run_dir) {
        return fail_setup(report, start, format!("cannot create site namespaces: {e}"));
    }
    let services = match start_services(plan, &run_dir) {
        Ok(s) => s,
        Err(e) => return fail_setup(report, start, e),
    };
    let mut ends = match open_channels(plan) {
        Ok(e) => e,
        Err(e) => return fail_setup(report, start, e.to_string()),
    };

    let mut stage_threads: Vec<(String, JoinHandle<io::Result<StageStats>>)> = Vec::new();
    let mut children: BTreeMap<String, Child> = BTreeMap::new();
    let mut pgid: Option<i32> = None;
    for id in &plan.start_order {
        if let Some(stage) = plan.stage(id) {
            stage_threads.push((id.clone(), spawn_stage(plan, stage, &mut ends)));
        } else if let Some(p) = plan.process(id) {
            let (mut cmd, held) = build_command(plan, p, &run_dir, &opts.env, &mut ends, pgid);
            let spawned = cmd.spawn();
            drop(cmd);
            drop(held);
            let r = report.processes.iter_mut().find(|r| r.id == *id).unwrap();
            match spawned {
                Ok(child) => {
                    pgid.get_or_insert(child.id() as i32);
                    r.outcome = Outcome::Exited { code: 0 };
                    children.insert(id.clone(), child);
                }
                Err(e) => {
                    r.outcome = Outcome::SpawnFailed {
                        message: format!("{}: {e}", p.program),
                    }
                }
            }
        }
    }
    // any end not claimed by a stage or process closes here
    drop(ends);

    let deadline = opts.timeout.map(|t| start + t);
    let mut outcomes: BTreeMap<String, Outcome> = BTreeMap::new();
    while !children.is_empty() {
        let mut done = Vec::new();
        for (id, child) in children.iter_mut() {
            if let Ok(Some(status)) = child.try_wait() {
                done.push((id.clone(), outcome_of(status)));
            }
        }
        for (id, o) in done {
            children.remove(&id);
            outcomes.insert(id, o);
        }
        if deadline.is_some_and(|d| Instant::now() >= d) && !children.is_empty() {
            report.timed_out = true;
            if let Some(g) = pgid {
                // SAFETY: plain syscall on a process group this run created.
                unsafe { libc::kill(-g, libc::SIGKILL) };
            }
            for (id, mut child) in std::mem::take(&mut children) {
                let _ = child.kill();
                let _ = child.wait();
                outcomes.insert(id, Outcome::TimedOut);
            }
            break;
        }
        thread::sleep(Duration::from_millis(2));
    }
    for r in &mut report.processes {
        if let Some(o) = outcomes.remove(&r.id) {
            r.outcome = o;
        }
    }

    let mut stage_stats: BTreeMap<String, StageStats> = BTreeMap::new();
    let grace = Instant::now() + Duration::from_secs(2);
    for (id, h) in stage_threads {
        if report.timed_out {
            while !h.is_finished() && Instant::now() < grace {
                thread::sleep(Duration::from_millis(5));
            }
            if !h.is_finished() {
                report
                    .errors
                    .push(format!("stage {id} still blocked after timeout"));
                continue;
            }
        }
        match h.join() {
            Ok(Ok(s)) => {
                stage_stats.insert(id, s);
            }
            Ok(Err(e)) => report.errors.push(format!("stage {id}: {e}")),
            Err(_) => report.errors.push(format!("stage {id} panicked")),
        }
    }
    drop(services);

    report.channels = channel_reports(plan, &stage_stats);
    report.status = overall_status(plan, &report);
    report.duration_ms = start.elapsed().as_millis() as u64;
    report
}

fn fail_setup(mut report: RunReport, start: Instant, message: String) -> RunReport {
    report.errors.push(message);
    report.status = 1;
    report.duration_ms = start.elapsed().as_millis() as u64;
    report
}

fn channel_reports(plan: &BuildPlan, stats: &BTreeMap<String, StageStats>) -> Vec<ChannelReport> {
    let counts = |end: &ChannelEnd, outgoing: bool| -> Option<Counts> {
        let ChannelEnd::Stage { id, index } = end else {
            return None;
        };
        let s = stats.get(id)?;
        let v = if outgoing { &s.outputs } else { &s.inputs };
        v.get(*index).copied()
    };
    plan.channels
        .iter()
        .map(|c| {
            let seen = counts(&c.from, true).or_else(|| counts(&c.to, false));
            let file_bytes = || {
                let target = match (&c.from, &c.to) {
                    (ChannelEnd::External { stream }, _) | (_, ChannelEnd::External { stream }) => {
                        plan.io.get(*stream)
                    }
                    _ => return None,
                };
                match target? {
                    IoTarget::Path(p) => std::fs::metadata(resolve_path(&plan.base_dir, p))
                        .ok()
                        .map(|m| m.len()),
                    IoTarget::Inherit => None,
                }
            };
            ChannelReport {
                id: c.id.clone(),
                bytes: seen.map(|s| s.bytes).or_else(file_bytes),
                records: seen.map(|s| s.records),
            }
        })
        .collect()
}

/// The first non-zero status among the primary processes, in id order.
fn overall_status(plan: &BuildPlan, report: &RunReport) -> i32 {
    if report.timed_out {
        return TIMEOUT_STATUS;
    }
    let status = plan
        .primary
        .iter()
        .filter_map(|id| report.process(id))
        .map(|p| p.outcome.status())
        .find(|&s| s != 0)
        .unwrap_or(0);
    if status == 0 && !report.errors.is_empty() && report.processes.is_empty() {
        1
    } else {
        status
    }
}
