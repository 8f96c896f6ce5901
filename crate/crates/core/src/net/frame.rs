use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Bytes preceding every payload: u64 length and u8 opcode.
pub const HEADER_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    LoadShard = 0x01,
    MatVec = 0x02,
    MatTVec = 0x03,
    Gram = 0x04,
    DiagQuad = 0x05,
    Shutdown = 0x06,
    Ok = 0x10,
    Result = 0x11,
    Error = 0x1F,
}

impl TryFrom<u8> for Opcode {
    type Error = u8;

    fn try_from(b: u8) -> std::result::Result<Self, u8> {
        Ok(match b {
            0x01 => Self::LoadShard,
            0x02 => Self::MatVec,
            0x03 => Self::MatTVec,
            0x04 => Self::Gram,
            0x05 => Self::DiagQuad,
            0x06 => Self::Shutdown,
            0x10 => Self::Ok,
            0x11 => Self::Result,
            0x1F => Self::Error,
            other => return Err(other),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: Opcode, payload: Vec<u8>) -> Self {
        Self { opcode, payload }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

/// Why a frame could not be read.
#[derive(Debug)]
pub enum FrameError {
    /// Transport failure, including a clean EOF before the header.
    Io(io::Error),
    /// Unknown opcode or a payload shorter than announced.
    Malformed(String),
}

pub fn write_header<W: Write>(w: &mut W, opcode: Opcode, payload_len: u64) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[..8].copy_from_slice(&payload_len.to_le_bytes());
    header[8] = opcode as u8;
    w.write_all(&header)
}

pub fn write_frame<W: Write>(w: &mut W, opcode: Opcode, payload: &[u8]) -> io::Result<()> {
    write_header(w, opcode, payload.len() as u64)?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> std::result::Result<Frame, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(FrameError::Io)?;
    let len = u64::from_le_bytes(header[..8].try_into().unwrap());
    let opcode = Opcode::try_from(header[8])
        .map_err(|b| FrameError::Malformed(format!("unknown opcode {b:#04x}")))?;
    // Grows with the data actually received, so a bogus length cannot force
    // a huge allocation up front.
    let mut payload = Vec::new();
    r.by_ref()
        .take(len)
        .read_to_end(&mut payload)
        .map_err(FrameError::Io)?;
    if payload.len() as u64 != len {
        return Err(FrameError::Malformed(format!(
            "payload truncated: {} of {len} bytes",
            payload.len()
        )));
    }
    Ok(Frame { opcode, payload })
}

/// `u32 rows | u32 cols | rows*cols f64`, row-major, little-endian.
pub fn encode_matrix(rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(rows * cols, data.len());
    let mut out = Vec::with_capacity(8 + 8 * data.len());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Vectors travel as `n x 1` matrices.
pub fn encode_vector(v: &[f64]) -> Vec<u8> {
    encode_matrix(v.len(), 1, v)
}

pub fn decode_matrix(payload: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if payload.len() < 8 {
        return Err(Error::Protocol("matrix payload shorter than its header".into()));
    }
    let rows = u32::from_le_bytes(payload[..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(payload[4..8].try_into().unwrap()) as usize;
    let body = &payload[8..];
    if body.len() != 8 * rows * cols {
        return Err(Error::Protocol(format!(
            "{rows}x{cols} matrix needs {} bytes, got {}",
            8 * rows * cols,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

pub fn decode_vector(payload: &[u8]) -> Result<Vec<f64>> {
    let (rows, cols, data) = decode_matrix(payload)?;
    if cols != 1 && !(rows == 0 && cols == 0) {
        return Err(Error::Protocol(format!("expected a vector, got a {rows}x{cols} matrix")));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_layout() {
        let mut buf = Vec::new();
        write_frame(&mut buf, Opcode::MatVec, &[1, 2, 3]).unwrap();
        assert_eq!(buf, vec![3, 0, 0, 0, 0, 0, 0, 0, 0x02, 1, 2, 3]);
        let f = read_frame(&mut Cursor::new(buf)).unwrap();
        assert_eq!(f, Frame::new(Opcode::MatVec, vec![1, 2, 3]));
    }

    #[test]
    fn malformed_frames() {
        let mut bad_op = vec![0u8; 8];
        bad_op.push(0x7E);
        assert!(matches!(read_frame(&mut Cursor::new(bad_op)), Err(FrameError::Malformed(_))));

        let mut short = Vec::new();
        write_header(&mut short, Opcode::Result, 100).unwrap();
        short.extend_from_slice(&[0; 10]);
        assert!(matches!(read_frame(&mut Cursor::new(short)), Err(FrameError::Malformed(_))));

        assert!(matches!(read_frame(&mut Cursor::new(vec![1, 2])), Err(FrameError::Io(_))));
    }

    #[test]
    fn matrix_codec() {
        let m = [1.0, -2.0, 3.5, f64::MIN_POSITIVE, -0.0, 7.0];
        let bytes = encode_matrix(2, 3, &m);
        assert_eq!(bytes.len(), 8 + 48);
        let (r, c, back) = decode_matrix(&bytes).unwrap();
        assert_eq!((r, c), (2, 3));
        assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   m.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(decode_vector(&bytes).is_err());
        assert!(decode_matrix(&bytes[..20]).is_err());
        assert_eq!(decode_vector(&encode_vector(&[])).unwrap(), Vec::<f64>::new());
    }
}
