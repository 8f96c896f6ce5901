use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use nalgebra::DMatrix;

use super::frame::{
    decode_matrix, decode_vector, encode_matrix, encode_vector, read_frame, write_frame,
    write_header, FrameError, Opcode, HEADER_LEN,
};
use super::worker::write_load_shard_payload;
use crate::error::{Error, Result};
use crate::oracle::{
    check_finite, check_len, check_positive, check_symmetric, reduce_gram, reduce_sum,
    to_row_major, FeatureOracle, FeatureShard, ShardLayout,
};

pub const DEFAULT_TIMEOUT_SECS: u64 = 300;
pub const TIMEOUT_ENV: &str = "GPGC_NET_TIMEOUT_SECS";

/// Per-query timeout, from `GPGC_NET_TIMEOUT_SECS` when set to a positive
/// integer and 300 seconds otherwise.
pub fn timeout_from_env() -> Duration {
    let secs = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
        .filter(|&s| s > 0)
        .unwrap_or(DEFAULT_TIMEOUT_SECS);
    Duration::from_secs(secs)
}

/// Bytes moved over one worker connection by the most recent query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub sent: u64,
    pub received: u64,
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

struct WorkerHandle {
    addr: String,
    stream: Mutex<Connection>,
    live: AtomicBool,
    traffic: Mutex<Traffic>,
}

enum Payload<'a> {
    Shared(&'a [u8]),
    Owned(Vec<u8>),
}

impl Payload<'_> {
    fn bytes(&self) -> &[u8] {
        match self {
            Payload::Shared(b) => b,
            Payload::Owned(b) => b,
        }
    }
}

/// Oracle backed by remote workers, one shard per worker.
pub struct DistributedOracle {
    workers: Vec<WorkerHandle>,
    layout: ShardLayout,
    k: usize,
    timeout: Duration,
}

impl std::fmt::Debug for DistributedOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistributedOracle")
            .field("workers", &self.addresses())
            .field("layout", &self.layout)
            .field("k", &self.k)
            .finish()
    }
}

impl DistributedOracle {
    /// Connects to `addrs` and ships each worker an even share of the
    /// columns of `features`, in address order.
    pub fn connect<S: AsRef<str>>(addrs: &[S], features: &FeatureShard) -> Result<Self> {
        Self::connect_with_timeout(addrs, features, timeout_from_env())
    }

    pub fn connect_with_timeout<S: AsRef<str>>(
        addrs: &[S],
        features: &FeatureShard,
        timeout: Duration,
    ) -> Result<Self> {
        if addrs.is_empty() {
            return Err(Error::Domain("at least one worker address is required".into()));
        }
        let layout = ShardLayout::even(features.n_cols(), addrs.len())?;
        let mut workers = Vec::with_capacity(addrs.len());
        for addr in addrs {
            workers.push(open(addr.as_ref(), timeout)?);
        }
        let oracle = Self {
            workers,
            layout,
            k: features.k(),
            timeout,
        };
        for (w, range) in oracle.workers.iter().zip(oracle.layout.ranges()) {
            let shard = features.slice(range.start, range.end);
            oracle.load(w, &shard)?;
        }
        log::info!(
            "distributed {} instances over {} workers",
            features.n_cols(),
            oracle.workers.len()
        );
        Ok(oracle)
    }

    pub fn layout(&self) -> &ShardLayout {
        &self.layout
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn addresses(&self) -> Vec<&str> {
        self.workers.iter().map(|w| w.addr.as_str()).collect()
    }

    /// Whether each worker connection is still usable.
    pub fn liveness(&self) -> Vec<bool> {
        self.workers.iter().map(|w| w.live.load(Ordering::SeqCst)).collect()
    }

    /// Traffic of the most recent query, per worker connection.
    pub fn last_traffic(&self) -> Vec<Traffic> {
        self.workers.iter().map(|w| *w.traffic.lock().unwrap()).collect()
    }

    /// Asks every live worker to stop serving.
    pub fn shutdown(self) -> Result<()> {
        let mut first_err = None;
        for w in &self.workers {
            if !w.live.load(Ordering::SeqCst) {
                continue;
            }
            if let Err(e) = self.exchange(w, Opcode::Shutdown, &[]) {
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    }

    fn load(&self, w: &WorkerHandle, shard: &FeatureShard) -> Result<()> {
        let mut conn = w.stream.lock().unwrap();
        let body = 8 + crate::io::encoded_len(shard, &[]);
        let sent = (|| -> Result<()> {
            write_header(&mut conn.writer, Opcode::LoadShard, body)?;
            write_load_shard_payload(&mut conn.writer, shard)?;
            conn.writer.flush()?;
            Ok(())
        })();
        if let Err(e) = sent {
            return Err(self.fail(w, e));
        }
        let reply = read_frame(&mut conn.reader).map_err(|e| self.fail(w, frame_error(e)))?;
        drop(conn);
        match reply.opcode {
            Opcode::Ok => Ok(()),
            Opcode::Error => Err(Error::Remote {
                addr: w.addr.clone(),
                message: String::from_utf8_lossy(&reply.payload).into_owned(),
            }),
            other => Err(self.fail(
                w,
                Error::Protocol(format!("unexpected reply {other:?} to LOAD_SHARD")),
            )),
        }
    }

    /// One request/response round trip on a single connection.
    fn exchange(&self, w: &WorkerHandle, opcode: Opcode, payload: &[u8]) -> Result<Vec<u8>> {
        if !w.live.load(Ordering::SeqCst) {
            return Err(Error::WorkerLost {
                addr: w.addr.clone(),
                reason: "connection previously failed".into(),
            });
        }
        let mut conn = w.stream.lock().unwrap();
        if let Err(e) = write_frame(&mut conn.writer, opcode, payload) {
            return Err(self.fail(w, e.into()));
        }
        let reply = read_frame(&mut conn.reader).map_err(|e| self.fail(w, frame_error(e)))?;
        drop(conn);
        *w.traffic.lock().unwrap() = Traffic {
            sent: (HEADER_LEN + payload.len()) as u64,
            received: reply.wire_len() as u64,
        };
        match (opcode, reply.opcode) {
            (Opcode::Shutdown, Opcode::Ok) => Ok(Vec::new()),
            (_, Opcode::Result) => Ok(reply.payload),
            (_, Opcode::Error) => Err(Error::Remote {
                addr: w.addr.clone(),
                message: String::from_utf8_lossy(&reply.payload).into_owned(),
            }),
            (_, other) => Err(self.fail(
                w,
                Error::Protocol(format!("unexpected reply {other:?} to {opcode:?}")),
            )),
        }
    }

    /// Marks the worker dead and attaches its address to transport errors.
    fn fail(&self, w: &WorkerHandle, err: Error) -> Error {
        w.live.store(false, Ordering::SeqCst);
        match err {
            Error::Io(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Error::Timeout {
                    addr: w.addr.clone(),
                    secs: self.timeout.as_secs(),
                }
            }
            Error::Io(e) => Error::WorkerLost {
                addr: w.addr.clone(),
                reason: e.to_string(),
            },
            Error::Protocol(msg) => Error::WorkerLost {
                addr: w.addr.clone(),
                reason: msg,
            },
            other => other,
        }
    }

    /// Sends one request per worker concurrently and returns the decoded
    /// replies in shard order.
    fn fan_out<'a, T, F>(&self, opcode: Opcode, payloads: Vec<Payload<'a>>, decode: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &[u8]) -> Result<T> + Sync,
    {
        if let Some(dead) = self.workers.iter().find(|w| !w.live.load(Ordering::SeqCst)) {
            return Err(Error::WorkerLost {
                addr: dead.addr.clone(),
                reason: "connection previously failed".into(),
            });
        }
        let results: Vec<Result<T>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .workers
                .iter()
                .zip(&payloads)
                .enumerate()
                .map(|(i, (w, p))| {
                    let decode = &decode;
                    scope.spawn(move || {
                        let reply = self.exchange(w, opcode, p.bytes())?;
                        decode(i, &reply).map_err(|e| self.fail(w, e))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("query thread panicked")).collect()
        });
        results.into_iter().collect()
    }

    fn split_vector<'a>(&self, v: &[f64]) -> Vec<Payload<'a>> {
        self.layout
            .ranges()
            .map(|r| Payload::Owned(encode_vector(&v[r])))
            .collect()
    }

    fn expect_vector(&self, payload: &[u8], len: usize) -> Result<Vec<f64>> {
        let v = decode_vector(payload)?;
        if v.len() != len {
            return Err(Error::Protocol(format!(
                "worker returned {} values, expected {len}",
                v.len()
            )));
        }
        Ok(v)
    }
}

fn open(addr: &str, timeout: Duration) -> Result<WorkerHandle> {
    let connect_err = |source| Error::WorkerConnect {
        addr: addr.to_string(),
        source,
    };
    let resolved: Vec<SocketAddr> = addr.to_socket_addrs().map_err(connect_err)?.collect();
    let mut last = std::io::Error::new(ErrorKind::NotFound, "address resolved to nothing");
    for sa in resolved {
        match TcpStream::connect_timeout(&sa, timeout) {
            Ok(stream) => {
                let setup = (|| -> std::io::Result<Connection> {
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    Ok(Connection {
                        reader: BufReader::new(stream.try_clone()?),
                        writer: BufWriter::new(stream),
                    })
                })();
                let conn = setup.map_err(connect_err)?;
                return Ok(WorkerHandle {
                    addr: addr.to_string(),
                    stream: Mutex::new(conn),
                    live: AtomicBool::new(true),
                    traffic: Mutex::new(Traffic::default()),
                });
            }
            Err(e) => last = e,
        }
    }
    Err(connect_err(last))
}

fn frame_error(e: FrameError) -> Error {
    match e {
        FrameError::Io(e) => Error::Io(e),
        FrameError::Malformed(msg) => Error::Protocol(msg),
    }
}

impl FeatureOracle for DistributedOracle {
    fn n_instances(&self) -> usize {
        self.layout.n_instances()
    }

    fn n_features(&self) -> usize {
        self.k
    }

    fn mat_vec_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("v", v.len(), self.n_instances())?;
        check_len("output", out.len(), self.k)?;
        check_finite("v", v)?;
        let k = self.k;
        let parts = self.fan_out(Opcode::MatVec, self.split_vector(v), |_, p| {
            self.expect_vector(p, k)
        })?;
        reduce_sum(parts.iter().map(Vec::as_slice), out);
        Ok(())
    }

    fn mat_t_vec_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("u", u.len(), self.k)?;
        check_len("output", out.len(), self.n_instances())?;
        check_finite("u", u)?;
        let body = encode_vector(u);
        let payloads = self.workers.iter().map(|_| Payload::Shared(&body)).collect();
        let parts = self.fan_out(Opcode::MatTVec, payloads, |i, p| {
            self.expect_vector(p, self.layout.range(i).len())
        })?;
        for (part, r) in parts.iter().zip(self.layout.ranges()) {
            out[r].copy_from_slice(part);
        }
        Ok(())
    }

    fn weighted_gram_into(&self, d: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let k = self.k;
        check_len("d", d.len(), self.n_instances())?;
        if out.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "output is {:?}, expected ({k}, {k})",
                out.shape()
            )));
        }
        check_positive("d", d)?;
        let parts = self.fan_out(Opcode::Gram, self.split_vector(d), |_, p| {
            let (rows, cols, data) = decode_matrix(p)?;
            if (rows, cols) != (k, k) {
                return Err(Error::Protocol(format!(
                    "worker returned a {rows}x{cols} Gram matrix, expected {k}x{k}"
                )));
            }
            Ok(data)
        })?;
        reduce_gram(parts.iter().map(Vec::as_slice), k, out);
        Ok(())
    }

    fn diag_quadratic_into(&self, a: &DMatrix<f64>, out: &mut [f64]) -> Result<()> {
        let k = self.k;
        if a.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "matrix is {:?}, expected ({k}, {k})",
                a.shape()
            )));
        }
        check_len("output", out.len(), self.n_instances())?;
        let rm = to_row_major(a);
        check_finite("A", &rm)?;
        check_symmetric(&rm, k)?;
        let body = encode_matrix(k, k, &rm);
        let payloads = self.workers.iter().map(|_| Payload::Shared(&body)).collect();
        let parts = self.fan_out(Opcode::DiagQuad, payloads, |i, p| {
            self.expect_vector(p, self.layout.range(i).len())
        })?;
        for (part, r) in parts.iter().zip(self.layout.ranges()) {
            out[r].copy_from_slice(part);
        }
        Ok(())
    }
}
