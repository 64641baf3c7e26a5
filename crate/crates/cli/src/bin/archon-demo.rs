//! Small components for RPC and event architectures. Each reads its port
//! bindings from the `ARCHON_PORT_*` variables the realizer sets.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use archon_core::frame::{read_frame, write_frame, Frame};
use archon_core::realizer::{bind_endpoint, BrokerClient, RpcClient};
use clap::{Parser, Subcommand};

const CONNECT_WAIT: Duration = Duration::from_secs(10);

#[derive(Parser)]
#[command(
    name = "archon-demo",
    about = "Demo components driven by ARCHON_PORT_* bindings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// RPC definer that answers each request with its payload.
    Echo {
        #[arg(long)]
        port: String,
        /// Exit after answering this many requests.
        #[arg(long)]
        requests: usize,
        /// Answer each batch of K requests in reverse order.
        #[arg(long, default_value_t = 1)]
        reverse_batch: usize,
    },
    /// RPC caller: one pipelined request per stdin line, replies printed in order.
    Call {
        #[arg(long)]
        port: String,
    },
    /// Publishes each stdin line once `listeners` subscribers are present.
    Announce {
        #[arg(long)]
        port: String,
        #[arg(long, default_value_t = 0)]
        listeners: usize,
    },
    /// Prints the payloads of the first `count` events.
    Listen {
        #[arg(long)]
        port: String,
        #[arg(long)]
        count: usize,
    },
}

/// The binding for `port` split into kind, path and optional topic.
fn binding(port: &str) -> Result<(String, PathBuf, String), String> {
    let var = format!(
        "ARCHON_PORT_{}",
        port.chars()
            .map(|c| if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            })
            .collect::<String>()
    );
    let value = std::env::var(&var).map_err(|_| format!("{var} is not set"))?;
    let first = value.split(',').next().unwrap_or_default();
    let (kind, rest) = first
        .split_once(':')
        .ok_or_else(|| format!("{var}: malformed binding `{value}`"))?;
    let (path, topic) = rest.split_once('#').unwrap_or((rest, ""));
    Ok((kind.to_string(), PathBuf::from(path), topic.to_string()))
}

fn expect(port: &str, kind: &str) -> Result<(PathBuf, String), String> {
    let (k, path, topic) = binding(port)?;
    if k != kind {
        return Err(format!("port {port} is bound as {k}, expected {kind}"));
    }
    Ok((path, topic))
}

fn echo(port: &str, requests: usize, batch: usize) -> Result<(), String> {
    let (path, _) = expect(port, "listen")?;
    let listener = bind_endpoint(&path).map_err(|e| e.to_string())?;
    if requests == 0 {
        return Ok(());
    }
    let answered = Arc::new(AtomicUsize::new(0));
    let batch = batch.max(1);
    thread::scope(|s| {
        for conn in listener.incoming() {
            if answered.load(Ordering::SeqCst) >= requests {
                break;
            }
            let Ok(mut conn) = conn else { continue };
            let answered = Arc::clone(&answered);
            let waker = path.clone();
            s.spawn(move || {
                let mut held: Vec<(u64, Vec<u8>)> = Vec::new();
                let flush =
                    |held: &mut Vec<(u64, Vec<u8>)>, conn: &mut std::os::unix::net::UnixStream| {
                        while let Some((id, payload)) = held.pop() {
                            if write_frame(conn, &Frame::Response { id, payload }).is_err() {
                                return;
                            }
                            if answered.fetch_add(1, Ordering::SeqCst) + 1 == requests {
                                // unblock the accept loop so it can observe completion
                                let _ = std::os::unix::net::UnixStream::connect(&waker);
                            }
                        }
                    };
                while let Ok(Some(frame)) = read_frame(&mut conn) {
                    if let Frame::Request { id, payload } = frame {
                        held.push((id, payload));
                        if held.len() == batch {
                            flush(&mut held, &mut conn);
                        }
                    }
                }
                flush(&mut held, &mut conn);
            });
        }
    });
    Ok(())
}

fn call(port: &str) -> Result<(), String> {
    let (path, _) = expect(port, "connect")?;
    let client = RpcClient::connect(&path, CONNECT_WAIT).map_err(|e| e.to_string())?;
    let mut pending = Vec::new();
    for line in io::stdin().lock().lines() {
        let line = line.map_err(|e| e.to_string())?;
        pending.push(client.send(line.as_bytes()).map_err(|e| e.to_string())?);
    }
    let mut out = io::stdout().lock();
    for p in pending {
        let reply = p.wait_timeout(CONNECT_WAIT).map_err(|e| e.to_string())?;
        out.write_all(&reply)
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| e.to_string())?;
    }
    out.flush().map_err(|e| e.to_string())
}

fn announce(port: &str, listeners: usize) -> Result<(), String> {
    let (path, topic) = expect(port, "emit")?;
    let mut client = BrokerClient::connect(&path, CONNECT_WAIT).map_err(|e| e.to_string())?;
    if !client
        .wait_for_listeners(&topic, listeners, CONNECT_WAIT)
        .map_err(|e| e.to_string())?
    {
        return Err(format!("fewer than {listeners} listeners on `{topic}`"));
    }
    for line in io::stdin().lock().lines() {
        let line = line.map_err(|e| e.to_string())?;
        client
            .publish(&topic, line.as_bytes())
            .map_err(|e| e.to_string())?;
    }
    // a registration round trip guarantees the broker has read every event
    client.listeners(&topic).map_err(|e| e.to_string())?;
    client.close().map_err(|e| e.to_string())
}

fn listen(port: &str, count: usize) -> Result<(), String> {
    let (path, topic) = expect(port, "recv")?;
    let mut client = BrokerClient::connect(&path, CONNECT_WAIT).map_err(|e| e.to_string())?;
    client.subscribe(&topic).map_err(|e| e.to_string())?;
    let mut out = io::stdout().lock();
    for _ in 0..count {
        match client.next_event(None).map_err(|e| e.to_string())? {
            Some((_, payload)) => {
                out.write_all(&payload)
                    .and_then(|_| out.write_all(b"\n"))
                    .map_err(|e| e.to_string())?;
            }
            None => return Err("broker closed before all events arrived".into()),
        }
    }
    out.flush().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Echo {
            port,
            requests,
            reverse_batch,
        } => echo(port, *requests, *reverse_batch),
        Command::Call { port } => call(port),
        Command::Announce { port, listeners } => announce(port, *listeners),
        Command::Listen { port, count } => listen(port, *count),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("archon-demo: {e}");
            ExitCode::FAILURE
        }
    }
}
