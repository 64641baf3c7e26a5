//! Request/response channels with 8-byte correlation ids.

use std::collections::{BTreeSet, HashMap};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::frame::{read_frame, write_frame, Frame};
use crate::realizer::{bind_endpoint, connect_with_retry, RuntimeError};

type Reply = Result<Vec<u8>, RuntimeError>;

#[derive(Default)]
struct ClientState {
    pending: HashMap<u64, Sender<Reply>>,
    answered: BTreeSet<u64>,
    /// Once set, the channel is unusable.
    failure: Option<RuntimeError>,
}

impl ClientState {
    fn fail(&mut self, err: RuntimeError) {
        for (_, tx) in self.pending.drain() {
            let _ = tx.send(Err(err.clone()));
        }
        self.failure.get_or_insert(err);
    }
}

/// Caller end. Requests may be pipelined; responses are matched by id.
pub struct RpcClient {
    writer: Mutex<UnixStream>,
    next_id: AtomicU64,
    state: Arc<Mutex<ClientState>>,
    reader: Option<JoinHandle<()>>,
}

pub struct PendingCall {
    pub id: u64,
    rx: Receiver<Reply>,
}

impl PendingCall {
    pub fn wait(self) -> Reply {
        self.rx
            .recv()
            .unwrap_or_else(|_| Err(RuntimeError::Protocol("channel dropped".into())))
    }

    pub fn wait_timeout(self, timeout: Duration) -> Reply {
        self.rx.recv_timeout(timeout).unwrap_or_else(|_| {
            Err(RuntimeError::Protocol(format!(
                "no response to request {}",
                self.id
            )))
        })
    }
}

impl RpcClient {
    /// Connects to a definer, retrying until `wait` passes.
    pub fn connect(path: &Path, wait: Duration) -> Result<RpcClient, RuntimeError> {
        let stream =
            connect_with_retry(path, wait).map_err(|e| RuntimeError::DefinerUnavailable {
                endpoint: path.display().to_string(),
                source: Arc::new(e),
            })?;
        RpcClient::from_stream(stream)
    }

    pub fn from_stream(stream: UnixStream) -> Result<RpcClient, RuntimeError> {
        let mut read_half = stream.try_clone()?;
        let state = Arc::new(Mutex::new(ClientState::default()));
        let reader = {
            let state = Arc::clone(&state);
            thread::spawn(move || loop {
                let frame = read_frame(&mut read_half);
                let mut st = state.lock().unwrap();
                match frame {
                    Ok(Some(Frame::Response { id, payload })) => {
                        if let Some(tx) = st.pending.remove(&id) {
                            st.answered.insert(id);
                            let _ = tx.send(Ok(payload));
                        } else {
                            let duplicate = st.answered.contains(&id);
                            st.fail(RuntimeError::CorrelationViolation { id, duplicate });
                            return;
                        }
                    }
                    Ok(Some(other)) => {
                        st.fail(RuntimeError::Protocol(format!(
                            "expected RSP, got frame kind {}",
                            other.kind()
                        )));
                        return;
                    }
                    Ok(None) => {
                        st.fail(RuntimeError::Protocol("definer closed the channel".into()));
                        return;
                    }
                    Err(e) => {
                        st.fail(e.into());
                        return;
                    }
                }
            })
        };
        Ok(RpcClient {
            writer: Mutex::new(stream),
            next_id: AtomicU64::new(1),
            state,
            reader: Some(reader),
        })
    }

    /// Sends a request without waiting for its response.
    pub fn send(&self, payload: &[u8]) -> Result<PendingCall, RuntimeError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        {
            let mut st = self.state.lock().unwrap();
            if let Some(e) = &st.failure {
                return Err(e.clone());
            }
            st.pending.insert(id, tx);
        }
        let frame = Frame::Request {
            id,
            payload: payload.to_vec(),
        };
        if let Err(e) = write_frame(&mut *self.writer.lock().unwrap(), &frame) {
            self.state.lock().unwrap().pending.remove(&id);
            return Err(e.into());
        }
        Ok(PendingCall { id, rx })
    }

    pub fn call(&self, payload: &[u8]) -> Reply {
        self.send(payload)?.wait()
    }
}

impl Drop for RpcClient {
    fn drop(&mut self) {
        if let Ok(w) = self.writer.lock() {
            let _ = w.shutdown(std::net::Shutdown::Both);
        }
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

/// Definer end: answers each REQ with one RSP carrying the same id.
pub struct RpcServer {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

pub fn serve_rpc<F>(path: &Path, handler: F) -> Result<RpcServer, RuntimeError>
where
    F: Fn(&[u8]) -> Vec<u8> + Send + Sync + 'static,
{
    let listener = bind_endpoint(path)?;
    let stop = Arc::new(AtomicBool::new(false));
    let accept = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || serve_listener(listener, Arc::new(handler), &stop))
    };
    Ok(RpcServer {
        path: path.to_path_buf(),
        stop,
        accept: Some(accept),
    })
}

/// Serves connections from `listener` until `stop` is set.
pub fn serve_listener<F>(listener: UnixListener, handler: Arc<F>, stop: &AtomicBool)
where
    F: Fn(&[u8]) -> Vec<u8> + Send + Sync + 'static,
{
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(mut conn) = conn else { continue };
        let handler = Arc::clone(&handler);
        thread::spawn(move || {
            while let Ok(Some(Frame::Request { id, payload })) = read_frame(&mut conn) {
                let reply = Frame::Response {
                    id,
                    payload: handler(&payload),
                };
                if write_frame(&mut conn, &reply).is_err() {
                    break;
                }
            }
        });
    }
}

impl RpcServer {
    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for RpcServer {
    fn drop(&mut self) {
        if let Some(h) = self.accept.take() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = UnixStream::connect(&self.path);
            let _ = h.join();
            let _ = std::fs::remove_file(&self.path);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const WAIT: Duration = Duration::from_secs(5);

    /// A definer driven by a script over the raw listener.
    fn scripted<F>(path: &Path, script: F) -> JoinHandle<()>
    where
        F: FnOnce(UnixStream) + Send + 'static,
    {
        let listener = bind_endpoint(path).unwrap();
        thread::spawn(move || {
            let (conn, _) = listener.accept().unwrap();
            script(conn)
        })
    }

    fn request(conn: &mut UnixStream) -> (u64, Vec<u8>) {
        match read_frame(conn).unwrap().unwrap() {
            Frame::Request { id, payload } => (id, payload),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn echo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.sock");
        let _server = serve_rpc(&path, |p| p.to_vec()).unwrap();
        let client = RpcClient::connect(&path, WAIT).unwrap();
        assert_eq!(client.call(b"x").unwrap(), b"x");
        assert_eq!(client.call(b"").unwrap(), b"");
    }

    #[test]
    fn out_of_order_responses_match_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rev.sock");
        let definer = scripted(&path, |mut conn| {
            let a = request(&mut conn);
            let b = request(&mut conn);
            for (id, p) in [b, a] {
                write_frame(&mut conn, &Frame::Response { id, payload: p }).unwrap();
            }
        });
        let client = RpcClient::connect(&path, WAIT).unwrap();
        let first = client.send(b"one").unwrap();
        let second = client.send(b"two").unwrap();
        assert_eq!(second.wait().unwrap(), b"two");
        assert_eq!(first.wait().unwrap(), b"one");
        definer.join().unwrap();
    }

    #[test]
    fn unknown_id_is_a_correlation_violation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sock");
        let definer = scripted(&path, |mut conn| {
            let _ = request(&mut conn);
            write_frame(
                &mut conn,
                &Frame::Response {
                    id: 99,
                    payload: vec![],
                },
            )
            .unwrap();
        });
        let client = RpcClient::connect(&path, WAIT).unwrap();
        match client.call(b"x") {
            Err(RuntimeError::CorrelationViolation {
                id: 99,
                duplicate: false,
            }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            client.send(b"y"),
            Err(RuntimeError::CorrelationViolation { .. })
        ));
        definer.join().unwrap();
    }

    #[test]
    fn duplicate_id_is_a_correlation_violation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.sock");
        let definer = scripted(&path, |mut conn| {
            let (id, p) = request(&mut conn);
            for _ in 0..2 {
                write_frame(
                    &mut conn,
                    &Frame::Response {
                        id,
                        payload: p.clone(),
                    },
                )
                .unwrap();
            }
            let _ = read_frame(&mut conn);
        });
        let client = RpcClient::connect(&path, WAIT).unwrap();
        assert_eq!(client.call(b"x").unwrap(), b"x");
        let err = client.send(b"y").and_then(PendingCall::wait).unwrap_err();
        assert!(
            matches!(
                err,
                RuntimeError::CorrelationViolation {
                    id: 1,
                    duplicate: true
                }
            ),
            "{err:?}"
        );
        drop(client);
        definer.join().unwrap();
    }

    #[test]
    fn missing_definer() {
        let dir = tempfile::tempdir().unwrap();
        let err = RpcClient::connect(&dir.path().join("none.sock"), Duration::from_millis(50))
            .err()
            .unwrap();
        assert!(matches!(err, RuntimeError::DefinerUnavailable { .. }));
    }
}
