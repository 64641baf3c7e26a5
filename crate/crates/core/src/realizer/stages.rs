//! Synthetic record stages. A record is a run of bytes ending in `\n`; a
//! final unterminated run is also a record.

use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub records: u64,
    pub bytes: u64,
}

impl Counts {
    fn add(&mut self, record: &[u8]) {
        self.records += 1;
        self.bytes += record.len() as u64;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageStats {
    pub inputs: Vec<Counts>,
    pub outputs: Vec<Counts>,
}

const READ_BUF: usize = 64 * 1024;

fn is_closed(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::BrokenPipe | ErrorKind::ConnectionReset)
}

/// Reads the next record into `buf`. Returns false at end of input.
fn next_record<R: BufRead>(r: &mut R, buf: &mut Vec<u8>) -> io::Result<bool> {
    buf.clear();
    loop {
        match r.read_until(b'\n', buf) {
            Ok(0) => return Ok(false),
            Ok(_) => return Ok(true),
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
}

struct Outputs<W> {
    sinks: Vec<Option<W>>,
    counts: Vec<Counts>,
}

impl<W: Write> Outputs<W> {
    fn new(sinks: Vec<W>) -> Self {
        let counts = vec![Counts::default(); sinks.len()];
        Outputs {
            sinks: sinks.into_iter().map(Some).collect(),
            counts,
        }
    }

    fn open(&self) -> bool {
        self.sinks.iter().any(Option::is_some)
    }

    /// Writes to output `i`; a closed reader retires that output.
    fn send(&mut self, i: usize, record: &[u8]) -> io::Result<()> {
        let Some(w) = self.sinks[i].as_mut() else {
            return Ok(());
        };
        match w.write_all(record).and_then(|_| w.flush()) {
            Ok(()) => {
                self.counts[i].add(record);
                Ok(())
            }
            Err(e) if is_closed(&e) => {
                self.sinks[i] = None;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }
}

/// Copies every record to every output, stopping once all outputs close.
pub fn tee<R: Read, W: Write>(input: R, outputs: Vec<W>) -> io::Result<StageStats> {
    let mut r = BufReader::with_capacity(READ_BUF, input);
    let mut out = Outputs::new(outputs);
    let mut seen = Counts::default();
    let mut buf = Vec::new();
    while out.open() && next_record(&mut r, &mut buf)? {
        seen.add(&buf);
        for i in 0..out.sinks.len() {
            out.send(i, &buf)?;
        }
    }
    Ok(StageStats {
        inputs: vec![seen],
        outputs: out.counts,
    })
}

/// Sends record `k` to output `k mod n`. Records addressed to a closed output
/// are dropped.
pub fn split<R: Read, W: Write>(input: R, outputs: Vec<W>) -> io::Result<StageStats> {
    let n = outputs.len();
    let mut r = BufReader::with_capacity(READ_BUF, input);
    let mut out = Outputs::new(outputs);
    let mut seen = Counts::default();
    let mut buf = Vec::new();
    while n > 0 && out.open() && next_record(&mut r, &mut buf)? {
        let i = (seen.records % n as u64) as usize;
        seen.add(&buf);
        out.send(i, &buf)?;
    }
    Ok(StageStats {
        inputs: vec![seen],
        outputs: out.counts,
    })
}

/// Forwards records from all inputs in arrival order. An unterminated final
/// record gets a `\n` so that records from different inputs never fuse.
pub fn merge<R, W>(inputs: Vec<R>, output: W) -> io::Result<StageStats>
where
    R: Read + Send + 'static,
    W: Write + Send + 'static,
{
    let output = Arc::new(Mutex::new(output));
    let closed = Arc::new(AtomicBool::new(false));
    let written = Arc::new((AtomicU64::new(0), AtomicU64::new(0)));
    let readers: Vec<_> = inputs
        .into_iter()
        .map(|input| {
            let output = Arc::clone(&output);
            let closed = Arc::clone(&closed);
            let written = Arc::clone(&written);
            thread::spawn(move || -> io::Result<Counts> {
                let mut r = BufReader::with_capacity(READ_BUF, input);
                let mut seen = Counts::default();
                let mut buf = Vec::new();
                while !closed.load(Ordering::Relaxed) && next_record(&mut r, &mut buf)? {
                    seen.add(&buf);
                    if buf.last() != Some(&b'\n') {
                        buf.push(b'\n');
                    }
                    let mut w = output.lock().unwrap();
                    match w.write_all(&buf).and_then(|_| w.flush()) {
                        Ok(()) => {
                            written.0.fetch_add(1, Ordering::Relaxed);
                            written.1.fetch_add(buf.len() as u64, Ordering::Relaxed);
                        }
                        Err(e) if is_closed(&e) => closed.store(true, Ordering::Relaxed),
                        Err(e) => return Err(e),
                    }
                }
                Ok(seen)
            })
        })
        .collect();
    let mut stats = StageStats::default();
    let mut first_err = None;
    for h in readers {
        match h.join().expect("merge reader panicked") {
            Ok(c) => stats.inputs.push(c),
            Err(e) => {
                stats.inputs.push(Counts::default());
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    stats.outputs.push(Counts {
        records: written.0.load(Ordering::Relaxed),
        bytes: written.1.load(Ordering::Relaxed),
    });
    Ok(stats)
}

/// Writes `seed`, then forwards `input` record by record.
pub fn seed<R: Read, W: Write>(seed: &[u8], input: Option<R>, output: W) -> io::Result<StageStats> {
    let mut out = Outputs::new(vec![output]);
    let mut seen = Counts::default();
    let mut seed_reader = BufReader::new(seed);
    let mut buf = Vec::new();
    while out.open() && next_record(&mut seed_reader, &mut buf)? {
        out.send(0, &buf)?;
    }
    if let Some(input) = input {
        let mut r = BufReader::with_capacity(READ_BUF, input);
        while out.open() && next_record(&mut r, &mut buf)? {
            seen.add(&buf);
            out.send(0, &buf)?;
        }
    }
    Ok(StageStats {
        inputs: vec![seen],
        outputs: out.counts,
    })
}
