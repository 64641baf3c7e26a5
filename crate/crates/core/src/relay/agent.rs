//! The relay pair. One agent per site; the agents share a link that carries
//! FWD frames, each tagged with a stream id chosen by the opening side.
//!
//! A site reaches a peer service in two ways:
//! - `relay.sock`, which speaks FWD frames with caller-chosen stream ids;
//! - `relay/<name>.sock`, a plain byte-stream proxy per peer-owned name.

use std::collections::{BTreeSet, HashMap};
use std::io::{ErrorKind, Read, Write};
use std::net::Shutdown;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::frame::{read_frame, write_frame, Frame, FWD_CLOSE, FWD_ERROR};
use crate::realizer::{bind_endpoint, connect_with_retry, RuntimeError};
use crate::relay::{proxy_path, RelayLink, Site};

/// Framed ingress socket inside each site namespace.
pub const INGRESS: &str = "relay.sock";

const CHUNK: usize = 64 * 1024;
const CONNECT_WAIT: Duration = Duration::from_secs(5);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelayStatus {
    Up,
    PeerDown,
}

enum SinkMsg {
    Data(Vec<u8>),
    Close,
    Error(String),
}

struct Agent {
    site: Site,
    peer_names: BTreeSet<String>,
    link: Mutex<UnixStream>,
    streams: Mutex<HashMap<u64, Sender<SinkMsg>>>,
    next_id: AtomicU64,
    id_tag: u64,
    peer_down: AtomicBool,
    stop: AtomicBool,
}

impl Agent {
    fn alloc(&self) -> u64 {
        self.id_tag | self.next_id.fetch_add(1, Ordering::SeqCst)
    }

    fn send_link(&self, frame: &Frame) {
        let mut link = self.link.lock().unwrap();
        if write_frame(&mut *link, frame).is_err() {
            self.peer_down.store(true, Ordering::SeqCst);
        }
    }

    fn deliver(&self, stream: u64, msg: SinkMsg) {
        let last = matches!(msg, SinkMsg::Error(_));
        let mut streams = self.streams.lock().unwrap();
        if let Some(tx) = streams.get(&stream) {
            let _ = tx.send(msg);
        }
        if last {
            streams.remove(&stream);
        }
    }

    /// Copies `src` onto the link as data frames for `stream`, then closes.
    fn pump(self: &Arc<Self>, mut src: UnixStream, stream: u64) {
        let mut buf = vec![0u8; CHUNK];
        loop {
            match src.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => self.send_link(&Frame::data(stream, buf[..n].to_vec())),
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
        self.send_link(&Frame::close(stream));
    }

    fn open_local(self: &Arc<Self>, name: String, stream: u64, payload: Vec<u8>) {
        let Some(path) = self.site.endpoint(&name) else {
            self.send_link(&Frame::fwd_error(
                stream,
                &format!("UnknownService: {name}"),
            ));
            return;
        };
        let (tx, rx) = mpsc::channel();
        if !payload.is_empty() {
            let _ = tx.send(SinkMsg::Data(payload));
        }
        self.streams.lock().unwrap().insert(stream, tx);
        let agent = Arc::clone(self);
        thread::spawn(move || match connect_with_retry(&path, CONNECT_WAIT) {
            Ok(conn) => {
                if let Ok(w) = conn.try_clone() {
                    spawn_raw_sink(w, rx);
                }
                agent.pump(conn, stream);
            }
            Err(e) => {
                agent.streams.lock().unwrap().remove(&stream);
                agent.send_link(&Frame::fwd_error(
                    stream,
                    &format!("ServiceUnavailable: {name}: {e}"),
                ));
            }
        });
    }

    fn read_link(self: Arc<Self>, mut link: UnixStream) {
        while let Ok(Some(frame)) = read_frame(&mut link) {
            let Frame::Forward {
                name,
                stream,
                payload,
            } = frame
            else {
                continue;
            };
            match name.as_str() {
                "" => self.deliver(stream, SinkMsg::Data(payload)),
                FWD_CLOSE => self.deliver(stream, SinkMsg::Close),
                FWD_ERROR => self.deliver(
                    stream,
                    SinkMsg::Error(String::from_utf8_lossy(&payload).into_owned()),
                ),
                _ => self.open_local(name, stream, payload),
            }
        }
        if !self.stop.load(Ordering::SeqCst) {
            self.peer_down.store(true, Ordering::SeqCst);
        }
        for (_, tx) in self.streams.lock().unwrap().drain() {
            let _ = tx.send(SinkMsg::Error("PeerDown".into()));
        }
    }

    /// Byte-stream proxy for a peer-owned name.
    fn serve_proxy(self: Arc<Self>, listener: UnixListener, name: String) {
        for conn in listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(conn) = conn else { continue };
            let Ok(w) = conn.try_clone() else { continue };
            let stream = self.alloc();
            let (tx, rx) = mpsc::channel();
            spawn_raw_sink(w, rx);
            self.streams.lock().unwrap().insert(stream, tx);
            self.send_link(&Frame::Forward {
                name: name.clone(),
                stream,
                payload: Vec::new(),
            });
            let agent = Arc::clone(&self);
            thread::spawn(move || agent.pump(conn, stream));
        }
    }

    fn serve_ingress(self: Arc<Self>, listener: UnixListener) {
        for conn in listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(conn) = conn else { continue };
            let agent = Arc::clone(&self);
            thread::spawn(move || agent.ingress_client(conn));
        }
    }

    fn ingress_client(self: Arc<Self>, mut conn: UnixStream) {
        enum Open {
            Link(u64),
            Local(UnixStream),
        }
        let Ok(writer) = conn.try_clone() else { return };
        let writer = Arc::new(Mutex::new(writer));
        let mut open: HashMap<u64, Open> = HashMap::new();
        let reply = |f: Frame| {
            let _ = write_frame(&mut *writer.lock().unwrap(), &f);
        };
        while let Ok(Some(frame)) = read_frame(&mut conn) {
            let Frame::Forward {
                name,
                stream: sid,
                payload,
            } = frame
            else {
                reply(Frame::fwd_error(0, "expected FWD frame"));
                break;
            };
            match name.as_str() {
                "" => match open.get_mut(&sid) {
                    Some(Open::Link(id)) => self.send_link(&Frame::data(*id, payload)),
                    Some(Open::Local(c)) => {
                        let _ = c.write_all(&payload);
                    }
                    None => reply(Frame::fwd_error(sid, "stream is not open")),
                },
                FWD_CLOSE | FWD_ERROR => match open.remove(&sid) {
                    Some(Open::Link(id)) => self.send_link(&Frame::close(id)),
                    Some(Open::Local(c)) => {
                        let _ = c.shutdown(Shutdown::Write);
                    }
                    None => {}
                },
                _ if open.contains_key(&sid) => {
                    reply(Frame::fwd_error(sid, "stream id already in use"))
                }
                _ if self.peer_names.contains(&name) => {
                    let id = self.alloc();
                    let (tx, rx) = mpsc::channel();
                    spawn_framed_sink(Arc::clone(&writer), sid, rx);
                    self.streams.lock().unwrap().insert(id, tx);
                    self.send_link(&Frame::Forward {
                        name,
                        stream: id,
                        payload,
                    });
                    open.insert(sid, Open::Link(id));
                }
                _ => match self
                    .site
                    .endpoint(&name)
                    .map(|p| connect_with_retry(&p, CONNECT_WAIT))
                {
                    Some(Ok(mut local)) => {
                        let (Ok(reader), true) =
                            (local.try_clone(), local.write_all(&payload).is_ok())
                        else {
                            reply(Frame::fwd_error(
                                sid,
                                &format!("ServiceUnavailable: {name}"),
                            ));
                            continue;
                        };
                        let writer = Arc::clone(&writer);
                        thread::spawn(move || copy_framed(reader, writer, sid));
                        open.insert(sid, Open::Local(local));
                    }
                    Some(Err(e)) => reply(Frame::fwd_error(
                        sid,
                        &format!("ServiceUnavailable: {name}: {e}"),
                    )),
                    None => reply(Frame::fwd_error(sid, &format!("UnknownService: {name}"))),
                },
            }
        }
        for (_, o) in open {
            match o {
                Open::Link(id) => self.send_link(&Frame::close(id)),
                Open::Local(c) => {
                    let _ = c.shutdown(Shutdown::Write);
                }
            }
        }
    }
}

fn spawn_raw_sink(mut w: UnixStream, rx: mpsc::Receiver<SinkMsg>) {
    thread::spawn(move || {
        for msg in rx {
            match msg {
                SinkMsg::Data(d) => {
                    if w.write_all(&d).is_err() {
                        break;
                    }
                }
                SinkMsg::Close => {
                    let _ = w.shutdown(Shutdown::Write);
                }
                SinkMsg::Error(_) => {
                    let _ = w.shutdown(Shutdown::Both);
                    break;
                }
            }
        }
    });
}

fn spawn_framed_sink(w: Arc<Mutex<UnixStream>>, sid: u64, rx: mpsc::Receiver<SinkMsg>) {
    thread::spawn(move || {
        for msg in rx {
            let (frame, last) = match msg {
                SinkMsg::Data(d) => (Frame::data(sid, d), false),
                SinkMsg::Close => (Frame::close(sid), true),
                SinkMsg::Error(e) => (Frame::fwd_error(sid, &e), true),
            };
            if write_frame(&mut *w.lock().unwrap(), &frame).is_err() || last {
                break;
            }
        }
    });
}

fn copy_framed(mut src: UnixStream, w: Arc<Mutex<UnixStream>>, sid: u64) {
    let mut buf = vec![0u8; CHUNK];
    loop {
        match src.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if write_frame(
                    &mut *w.lock().unwrap(),
                    &Frame::data(sid, buf[..n].to_vec()),
                )
                .is_err()
                {
                    return;
                }
            }
        }
    }
    let _ = write_frame(&mut *w.lock().unwrap(), &Frame::close(sid));
}

pub struct RelayHandle {
    agents: Vec<Arc<Agent>>,
    listeners: Vec<PathBuf>,
    threads: Vec<JoinHandle<()>>,
}

impl RelayHandle {
    pub fn status(&self) -> RelayStatus {
        if self
            .agents
            .iter()
            .any(|a| a.peer_down.load(Ordering::SeqCst))
        {
            RelayStatus::PeerDown
        } else {
            RelayStatus::Up
        }
    }

    /// Ingress socket of `site`.
    pub fn ingress(&self, site: &str) -> Option<PathBuf> {
        self.agents
            .iter()
            .find(|a| a.site.name == site)
            .map(|a| a.site.root.join(INGRESS))
    }

    /// Cuts the link between the agents, as if the peer went away.
    pub fn sever(&self) {
        for a in &self.agents {
            let _ = a.link.lock().unwrap().shutdown(Shutdown::Both);
        }
    }

    pub fn stop(&mut self) {
        for a in &self.agents {
            a.stop.store(true, Ordering::SeqCst);
        }
        for p in &self.listeners {
            let _ = UnixStream::connect(p);
        }
        self.sever();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        for p in self.listeners.drain(..) {
            let _ = std::fs::remove_file(p);
        }
    }
}

impl Drop for RelayHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts both agents: a framed ingress in each site and a proxy in each
/// site for every name the other site owns.
pub fn run_relay(link: &RelayLink) -> Result<RelayHandle, RuntimeError> {
    let (la, lb) = UnixStream::pair()?;
    let table = link.forwarding_table();
    let mut handle = RelayHandle {
        agents: Vec::new(),
        listeners: Vec::new(),
        threads: Vec::new(),
    };
    for (i, (site, end)) in link.sites.iter().zip([la, lb]).enumerate() {
        let peer = &link.sites[1 - i].name;
        let peer_names: BTreeSet<String> = table
            .iter()
            .filter(|(_, owner)| *owner == peer)
            .map(|(n, _)| n.clone())
            .collect();
        let agent = Arc::new(Agent {
            site: site.clone(),
            peer_names: peer_names.clone(),
            link: Mutex::new(end.try_clone()?),
            streams: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            id_tag: if i == 0 { 0 } else { 1 << 63 },
            peer_down: AtomicBool::new(false),
            stop: AtomicBool::new(false),
        });

        let ingress_path = site.root.join(INGRESS);
        let ingress = bind_endpoint(&ingress_path)?;
        handle.listeners.push(ingress_path);
        let a = Arc::clone(&agent);
        handle
            .threads
            .push(thread::spawn(move || a.serve_ingress(ingress)));

        for name in peer_names {
            let path = site.root.join(proxy_path(&name));
            let listener = bind_endpoint(&path)?;
            handle.listeners.push(path);
            let a = Arc::clone(&agent);
            handle
                .threads
                .push(thread::spawn(move || a.serve_proxy(listener, name)));
        }

        let a = Arc::clone(&agent);
        handle.threads.push(thread::spawn(move || a.read_link(end)));
        handle.agents.push(agent);
    }
    Ok(handle)
}
