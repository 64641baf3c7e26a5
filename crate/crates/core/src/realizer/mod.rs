//! Lowering to a build plan and execution of that plan.

pub mod broker;
mod plan;
pub mod rpc;
mod run;
pub mod stages;

use std::io::{self, ErrorKind};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::frame::FrameError;

pub use broker::{run_event_broker, BrokerClient, EventBroker};
pub use plan::{
    expand_fanout, plan, BrokerSpec, BuildPlan, ChannelEnd, ChannelSpec, Endpoint, PortBinding,
    ProcessSpec, RelayExport, RelayImport, RelaySpec, ServiceSpec, StageKind, StageSpec,
    BROKER_SERVICE, DEFAULT_SITE,
};
pub use rpc::{serve_rpc, PendingCall, RpcClient, RpcServer};
pub use run::{
    process_env, run, run_with, ChannelReport, Outcome, ProcessReport, RunOptions, RunReport,
    SPAWN_FAILURE_STATUS, TIMEOUT_STATUS,
};

#[derive(Clone, Debug, Error)]
pub enum RuntimeError {
    #[error("endpoint {0} is already in use")]
    EndpointInUse(String),
    #[error("definer at {endpoint} is unavailable: {source}")]
    DefinerUnavailable {
        endpoint: String,
        source: Arc<io::Error>,
    },
    #[error("endpoint {endpoint} is unavailable: {source}")]
    Unavailable {
        endpoint: String,
        source: Arc<io::Error>,
    },
    #[error("response carries {} correlation id {id}", if *duplicate { "an already answered" } else { "an unknown" })]
    CorrelationViolation { id: u64, duplicate: bool },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(Arc<io::Error>),
}

impl From<io::Error> for RuntimeError {
    fn from(e: io::Error) -> Self {
        RuntimeError::Io(Arc::new(e))
    }
}

impl From<FrameError> for RuntimeError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::Io(e) => RuntimeError::Io(Arc::new(e)),
            other => RuntimeError::Protocol(other.to_string()),
        }
    }
}

/// Binds a stream socket at `path`, replacing a stale socket file but
/// refusing one that still has a listener.
pub fn bind_endpoint(path: &Path) -> Result<UnixListener, RuntimeError> {
    let in_use = || RuntimeError::EndpointInUse(path.display().to_string());
    if path.exists() {
        if UnixStream::connect(path).is_ok() {
            return Err(in_use());
        }
        std::fs::remove_file(path)?;
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    UnixListener::bind(path).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => in_use(),
        _ => e.into(),
    })
}

/// Connects to `path`, retrying while the listener is not up yet.
pub fn connect_with_retry(path: &Path, wait: Duration) -> io::Result<UnixStream> {
    let deadline = Instant::now() + wait;
    let mut pause = Duration::from_millis(1);
    loop {
        match UnixStream::connect(path) {
            Ok(s) => return Ok(s),
            Err(e)
                if matches!(e.kind(), ErrorKind::NotFound | ErrorKind::ConnectionRefused)
                    && Instant::now() < deadline =>
            {
                thread::sleep(pause);
                pause = (pause * 2).min(Duration::from_millis(50));
            }
            Err(e) => return Err(e),
        }
    }
}
