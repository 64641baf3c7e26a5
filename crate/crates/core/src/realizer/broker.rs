//! Local event broker: REG subscribes a connection to a topic, EVT publishes.
//!
//! A REG whose topic starts with `?` is a query: the broker answers with a
//! REG for `?topic=N`, N being the current listener count, and registers
//! nothing.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, ErrorKind};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::frame::{read_frame, write_frame, Frame};
use crate::realizer::{bind_endpoint, connect_with_retry, RuntimeError};

#[derive(Debug, Default)]
pub struct BrokerStats {
    pub published: AtomicU64,
    pub delivered: AtomicU64,
}

type Registry = BTreeMap<String, Vec<(u64, Sender<Frame>)>>;

struct Shared {
    registry: Mutex<Registry>,
    stats: BrokerStats,
    stop: AtomicBool,
    conns: Mutex<Vec<UnixStream>>,
}

pub struct EventBroker {
    path: PathBuf,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

/// Starts a broker listening at `path`.
pub fn run_event_broker(path: &Path) -> Result<EventBroker, RuntimeError> {
    let listener = bind_endpoint(path)?;
    let shared = Arc::new(Shared {
        registry: Mutex::new(BTreeMap::new()),
        stats: BrokerStats::default(),
        stop: AtomicBool::new(false),
        conns: Mutex::new(Vec::new()),
    });
    let accept = {
        let shared = Arc::clone(&shared);
        thread::spawn(move || accept_loop(listener, shared))
    };
    Ok(EventBroker {
        path: path.to_path_buf(),
        shared,
        accept: Some(accept),
    })
}

impl EventBroker {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn published(&self) -> u64 {
        self.shared.stats.published.load(Ordering::SeqCst)
    }

    pub fn delivered(&self) -> u64 {
        self.shared.stats.delivered.load(Ordering::SeqCst)
    }

    pub fn listeners(&self, topic: &str) -> usize {
        self.shared
            .registry
            .lock()
            .unwrap()
            .get(topic)
            .map_or(0, Vec::len)
    }

    pub fn stop(&mut self) {
        if let Some(h) = self.accept.take() {
            self.shared.stop.store(true, Ordering::SeqCst);
            let _ = UnixStream::connect(&self.path);
            let _ = h.join();
            for c in self.shared.conns.lock().unwrap().drain(..) {
                let _ = c.shutdown(std::net::Shutdown::Both);
            }
            let _ = std::fs::remove_file(&self.path);
        }
    }
}

impl Drop for EventBroker {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: UnixListener, shared: Arc<Shared>) {
    let mut next_id = 0u64;
    for conn in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(conn) = conn else { continue };
        let (Ok(writer), Ok(keep)) = (conn.try_clone(), conn.try_clone()) else {
            continue;
        };
        shared.conns.lock().unwrap().push(keep);
        next_id += 1;
        let id = next_id;
        let (tx, rx) = mpsc::channel::<Frame>();
        thread::spawn(move || {
            let mut w = writer;
            for f in rx {
                if write_frame(&mut w, &f).is_err() {
                    break;
                }
            }
        });
        let shared = Arc::clone(&shared);
        thread::spawn(move || serve(conn, id, tx, shared));
    }
}

fn serve(mut conn: UnixStream, id: u64, tx: Sender<Frame>, shared: Arc<Shared>) {
    while let Ok(Some(frame)) = read_frame(&mut conn) {
        match frame {
            Frame::Register { topic } if topic.starts_with('?') => {
                let n = shared
                    .registry
                    .lock()
                    .unwrap()
                    .get(&topic[1..])
                    .map_or(0, Vec::len);
                let _ = tx.send(Frame::Register {
                    topic: format!("{topic}={n}"),
                });
            }
            Frame::Register { topic } => {
                shared
                    .registry
                    .lock()
                    .unwrap()
                    .entry(topic.clone())
                    .or_default()
                    .push((id, tx.clone()));
                let _ = tx.send(Frame::Register { topic });
            }
            Frame::Event { topic, payload } => {
                shared.stats.published.fetch_add(1, Ordering::SeqCst);
                let mut reg = shared.registry.lock().unwrap();
                if let Some(listeners) = reg.get_mut(&topic) {
                    listeners.retain(|(lid, ltx)| {
                        if *lid == id {
                            return true;
                        }
                        let ok = ltx
                            .send(Frame::Event {
                                topic: topic.clone(),
                                payload: payload.clone(),
                            })
                            .is_ok();
                        if ok {
                            shared.stats.delivered.fetch_add(1, Ordering::SeqCst);
                        }
                        ok
                    });
                }
            }
            _ => break,
        }
    }
    let mut reg = shared.registry.lock().unwrap();
    for listeners in reg.values_mut() {
        listeners.retain(|(lid, _)| *lid != id);
    }
}

/// Client side of the broker protocol.
pub struct BrokerClient {
    stream: UnixStream,
    pending: VecDeque<(String, Vec<u8>)>,
}

impl BrokerClient {
    pub fn connect(path: &Path, wait: Duration) -> Result<BrokerClient, RuntimeError> {
        let stream = connect_with_retry(path, wait).map_err(|e| RuntimeError::Unavailable {
            endpoint: path.display().to_string(),
            source: Arc::new(e),
        })?;
        Ok(BrokerClient::from_stream(stream))
    }

    pub fn from_stream(stream: UnixStream) -> BrokerClient {
        BrokerClient {
            stream,
            pending: VecDeque::new(),
        }
    }

    /// Registers for `topic` and waits for the broker's acknowledgement.
    pub fn subscribe(&mut self, topic: &str) -> Result<(), RuntimeError> {
        write_frame(
            &mut self.stream,
            &Frame::Register {
                topic: topic.into(),
            },
        )?;
        loop {
            match read_frame(&mut self.stream)? {
                Some(Frame::Register { topic: t }) if t == topic => return Ok(()),
                Some(Frame::Event { topic, payload }) => self.pending.push_back((topic, payload)),
                Some(other) => {
                    return Err(RuntimeError::Protocol(format!(
                        "unexpected frame kind {}",
                        other.kind()
                    )))
                }
                None => return Err(io::Error::from(ErrorKind::UnexpectedEof).into()),
            }
        }
    }

    /// Listeners currently registered for `topic`.
    pub fn listeners(&mut self, topic: &str) -> Result<usize, RuntimeError> {
        let query = format!("?{topic}");
        write_frame(
            &mut self.stream,
            &Frame::Register {
                topic: query.clone(),
            },
        )?;
        loop {
            match read_frame(&mut self.stream)? {
                Some(Frame::Register { topic: t }) if t.starts_with(&format!("{query}=")) => {
                    return t[query.len() + 1..].parse().map_err(|_| {
                        RuntimeError::Protocol(format!("bad listener count in `{t}`"))
                    });
                }
                Some(Frame::Event { topic, payload }) => self.pending.push_back((topic, payload)),
                Some(other) => {
                    return Err(RuntimeError::Protocol(format!(
                        "unexpected frame kind {}",
                        other.kind()
                    )))
                }
                None => return Err(io::Error::from(ErrorKind::UnexpectedEof).into()),
            }
        }
    }

    /// Polls until at least `n` listeners are registered for `topic`.
    pub fn wait_for_listeners(
        &mut self,
        topic: &str,
        n: usize,
        wait: Duration,
    ) -> Result<bool, RuntimeError> {
        let deadline = std::time::Instant::now() + wait;
        loop {
            if self.listeners(topic)? >= n {
                return Ok(true);
            }
            if std::time::Instant::now() >= deadline {
                return Ok(false);
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<(), RuntimeError> {
        write_frame(
            &mut self.stream,
            &Frame::Event {
                topic: topic.into(),
                payload: payload.to_vec(),
            },
        )?;
        Ok(())
    }

    /// Next delivered event, or `None` once the broker closes the connection
    /// or `timeout` passes.
    pub fn next_event(
        &mut self,
        timeout: Option<Duration>,
    ) -> Result<Option<(String, Vec<u8>)>, RuntimeError> {
        if let Some(e) = self.pending.pop_front() {
            return Ok(Some(e));
        }
        self.stream.set_read_timeout(timeout)?;
        let r = read_frame(&mut self.stream);
        self.stream.set_read_timeout(None)?;
        match r {
            Ok(Some(Frame::Event { topic, payload })) => Ok(Some((topic, payload))),
            Ok(Some(other)) => Err(RuntimeError::Protocol(format!(
                "unexpected frame kind {}",
                other.kind()
            ))),
            Ok(None) => Ok(None),
            Err(crate::frame::FrameError::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) =>
            {
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn close(self) -> io::Result<()> {
        self.stream.shutdown(std::net::Shutdown::Both)
    }
}
