//! Inter-broker stream framing: 4-byte big-endian length, then the envelope encoding.

use std::io::{self, Read, Write};

use crate::error::FleetError;

use super::broker::Envelope;

/// Frames above this size are rejected as corrupt.
pub const MAX_FRAME: usize = 64 << 20;

pub fn encode_frame(env: &Envelope) -> Vec<u8> {
    let body = env.encode();
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope) -> io::Result<()> {
    w.write_all(&encode_frame(env))
}

/// Next envelope from the stream; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Envelope>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Envelope::decode(&body)
        .map(Some)
        .map_err(|e: FleetError| io::Error::new(io::ErrorKind::InvalidData, e))
}
