//! Wire framing: an 18-byte little-endian header followed by the payload.
//!
//! ```text
//! "PAPR" | msg_type u8 | phase u8 | iteration u32 | segment u32 | len u32 | payload
//! ```

use std::io::{self, Read, Write};

use papred_core::Phase;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PAPR";
pub const HEADER_LEN: usize = 18;
/// Upper bound accepted on receipt; protects against garbage lengths.
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Data = 0,
    MonitorEstimate = 1,
    Warmup = 2,
    Barrier = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PhaseTag {
    Reduce = 0,
    Override = 1,
    Control = 2,
}

impl From<Phase> for PhaseTag {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Reduce => PhaseTag::Reduce,
            Phase::Override => PhaseTag::Override,
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("unknown phase tag {0}")]
    UnknownPhase(u8),
    #[error("payload of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("frame i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub phase: PhaseTag,
    pub iteration: u32,
    pub segment: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, phase: PhaseTag, iteration: u32, segment: u32, payload: Vec<u8>) -> Self {
        Frame { msg_type, phase, iteration, segment, payload }
    }

    pub fn control(msg_type: MsgType, iteration: u32, segment: u32, payload: Vec<u8>) -> Self {
        Frame::new(msg_type, PhaseTag::Control, iteration, segment, payload)
    }

    pub fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(&MAGIC);
        h[4] = self.msg_type as u8;
        h[5] = self.phase as u8;
        h[6..10].copy_from_slice(&self.iteration.to_le_bytes());
        h[10..14].copy_from_slice(&self.segment.to_le_bytes());
        h[14..18].copy_from_slice(&(self.payload.len() as u32).to_le_bytes());
        h
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.header())?;
        w.write_all(&self.payload)
    }

    /// Read one frame. `Ok(None)` on a clean end of stream before a header.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Frame>, FrameError> {
        let mut h = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut h[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(FrameError::Truncated),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (mut frame, len) = parse_header(&h)?;
        frame.payload = vec![0u8; len];
        r.read_exact(&mut frame.payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => FrameError::Truncated,
            _ => FrameError::Io(e),
        })?;
        Ok(Some(frame))
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        let (mut frame, len) = parse_header(bytes[..HEADER_LEN].try_into().unwrap())?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != len {
            return Err(FrameError::Truncated);
        }
        frame.payload = body.to_vec();
        Ok(frame)
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(Frame, usize), FrameError> {
    let magic: [u8; 4] = h[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let msg_type = match h[4] {
        0 => MsgType::Data,
        1 => MsgType::MonitorEstimate,
        2 => MsgType::Warmup,
        3 => MsgType::Barrier,
        x => return Err(FrameError::UnknownMsgType(x)),
    };
    let phase = match h[5] {
        0 => PhaseTag::Reduce,
        1 => PhaseTag::Override,
        2 => PhaseTag::Control,
        x => return Err(FrameError::UnknownPhase(x)),
    };
    let u32_at = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
    let len = u32_at(14) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(len));
    }
    Ok((Frame { msg_type, phase, iteration: u32_at(6), segment: u32_at(10), payload: Vec::new() }, len))
}

/// Monitor-estimate payload: iteration then microseconds since the epoch.
pub fn encode_estimate(iteration: u32, micros: u64) -> Vec<u8> {
    let mut v = Vec::with_capacity(12);
    v.extend_from_slice(&iteration.to_le_bytes());
    v.extend_from_slice(&micros.to_le_bytes());
    v
}

pub fn decode_estimate(payload: &[u8]) -> Option<(u32, u64)> {
    if payload.len() != 12 {
        return None;
    }
    Some((u32::from_le_bytes(payload[..4].try_into().ok()?), u64::from_le_bytes(payload[4..].try_into().ok()?)))
}
