use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};

use super::frame::{
    decode_matrix, decode_vector, encode_matrix, encode_vector, read_frame, write_frame, Frame,
    FrameError, Opcode,
};
use crate::error::{Error, Result};
use crate::io::read_features_at;
use crate::oracle::{check_finite, check_len, check_positive, check_symmetric, mirror_upper, FeatureShard};

/// A worker node hosting one shard of the feature matrix.
///
/// Connections are served one at a time; each starts without a shard until
/// the master sends `LOAD_SHARD`. A `SHUTDOWN` frame ends [`Worker::serve`].
pub struct Worker {
    listener: TcpListener,
    expected_k: Option<usize>,
}

impl Worker {
    pub fn bind<A: ToSocketAddrs>(addr: A, expected_k: Option<usize>) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            expected_k,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn serve(self) -> Result<()> {
        loop {
            let (stream, peer) = self.listener.accept()?;
            log::info!("master connected from {peer}");
            match self.handle(stream) {
                Ok(Session::Shutdown) => {
                    log::info!("shutdown requested by {peer}");
                    return Ok(());
                }
                Ok(Session::Closed) => log::info!("connection from {peer} closed"),
                Err(e) => log::warn!("connection from {peer} dropped: {e}"),
            }
        }
    }

    fn handle(&self, stream: TcpStream) -> Result<Session> {
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        let mut shard: Option<FeatureShard> = None;
        loop {
            let frame = match read_frame(&mut reader) {
                Ok(f) => f,
                Err(FrameError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                    return Ok(Session::Closed)
                }
                Err(FrameError::Io(e)) => return Err(e.into()),
                Err(FrameError::Malformed(msg)) => {
                    log::warn!("malformed frame: {msg}; closing connection");
                    return Ok(Session::Closed);
                }
            };
            if frame.opcode == Opcode::Shutdown {
                write_frame(&mut writer, Opcode::Ok, &[])?;
                return Ok(Session::Shutdown);
            }
            let reply = match self.respond(&frame, &mut shard) {
                Ok(reply) => reply,
                Err(e) => Frame::new(Opcode::Error, e.to_string().into_bytes()),
            };
            write_frame(&mut writer, reply.opcode, &reply.payload)?;
        }
    }

    fn respond(&self, frame: &Frame, shard: &mut Option<FeatureShard>) -> Result<Frame> {
        if frame.opcode == Opcode::LoadShard {
            let loaded = decode_load_shard(&frame.payload)?;
            if let Some(k) = self.expected_k {
                if loaded.k() != k {
                    return Err(Error::Dimension(format!(
                        "shard has k = {}, worker expects {k}",
                        loaded.k()
                    )));
                }
            }
            log::info!(
                "loaded shard of {} instances at offset {}",
                loaded.n_cols(),
                loaded.col_offset()
            );
            *shard = Some(loaded);
            return Ok(Frame::new(Opcode::Ok, Vec::new()));
        }
        let shard = shard
            .as_ref()
            .ok_or_else(|| Error::Protocol("shard not loaded".into()))?;
        let view = shard.view();
        let (k, n) = (shard.k(), shard.n_cols());
        let payload = match frame.opcode {
            Opcode::MatVec => {
                let v = decode_vector(&frame.payload)?;
                check_len("v", v.len(), n)?;
                check_finite("v", &v)?;
                let mut out = vec![0.0; k];
                view.mat_vec(&v, &mut out);
                encode_vector(&out)
            }
            Opcode::MatTVec => {
                let u = decode_vector(&frame.payload)?;
                check_len("u", u.len(), k)?;
                check_finite("u", &u)?;
                let mut out = vec![0.0; n];
                view.mat_t_vec(&u, &mut out);
                encode_vector(&out)
            }
            Opcode::Gram => {
                let d = decode_vector(&frame.payload)?;
                check_len("d", d.len(), n)?;
                check_positive("d", &d)?;
                let mut out = vec![0.0; k * k];
                view.gram_upper(&d, &mut out);
                mirror_upper(&mut out, k);
                encode_matrix(k, k, &out)
            }
            Opcode::DiagQuad => {
                let (rows, cols, a) = decode_matrix(&frame.payload)?;
                if (rows, cols) != (k, k) {
                    return Err(Error::Dimension(format!(
                        "matrix is {rows}x{cols}, expected {k}x{k}"
                    )));
                }
                check_symmetric(&a, k)?;
                let mut out = vec![0.0; n];
                view.diag_quadratic(&a, &mut out);
                encode_vector(&out)
            }
            other => {
                return Err(Error::Protocol(format!("unexpected opcode {other:?}")));
            }
        };
        Ok(Frame::new(Opcode::Result, payload))
    }
}

enum Session {
    Shutdown,
    Closed,
}

/// Binds `addr` and serves until a `SHUTDOWN` frame arrives.
pub fn worker_serve<A: ToSocketAddrs>(addr: A, expected_k: Option<usize>) -> Result<()> {
    Worker::bind(addr, expected_k)?.serve()
}

/// `LOAD_SHARD` payload: u64 column offset followed by the shard in the
/// feature-file layout.
pub fn encode_load_shard_header(col_offset: usize) -> [u8; 8] {
    (col_offset as u64).to_le_bytes()
}

pub fn write_load_shard_payload<W: Write>(w: &mut W, shard: &FeatureShard) -> Result<()> {
    w.write_all(&encode_load_shard_header(shard.col_offset()))?;
    crate::io::write_features(w, shard, &[])
}

pub fn decode_load_shard(payload: &[u8]) -> Result<FeatureShard> {
    if payload.len() < 8 {
        return Err(Error::Protocol("LOAD_SHARD payload too short".into()));
    }
    let offset = u64::from_le_bytes(payload[..8].try_into().unwrap()) as usize;
    let mut cursor = Cursor::new(&payload[8..]);
    let file = read_features_at(&mut cursor, offset)?;
    let mut rest = [0u8; 1];
    if cursor.read(&mut rest)? != 0 {
        return Err(Error::Protocol("trailing bytes in LOAD_SHARD".into()));
    }
    Ok(file.features)
}
