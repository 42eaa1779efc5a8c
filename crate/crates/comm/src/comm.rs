//! Communicator: a transport plus the control collectives built on it.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::error::{CommError, Result};
use crate::frame::{Frame, MsgType, PhaseTag};
use crate::transport::{MatchKey, Transport, DEFAULT_RECV_TIMEOUT, DEFAULT_SEND_TIMEOUT};

#[derive(Debug, Clone)]
pub struct CommConfig {
    pub send_timeout: Duration,
    pub recv_timeout: Duration,
}

impl Default for CommConfig {
    fn default() -> Self {
        CommConfig { send_timeout: DEFAULT_SEND_TIMEOUT, recv_timeout: DEFAULT_RECV_TIMEOUT }
    }
}

/// Every rank must issue control collectives in the same order; each call
/// takes the next sequence number so frames of different calls never mix.
pub struct Communicator {
    transport: Arc<dyn Transport>,
    cfg: CommConfig,
    control_seq: AtomicU32,
}

impl Communicator {
    pub fn new(transport: Arc<dyn Transport>, cfg: CommConfig) -> Self {
        Communicator { transport, cfg, control_seq: AtomicU32::new(0) }
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn size(&self) -> usize {
        self.transport.size()
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    pub fn config(&self) -> &CommConfig {
        &self.cfg
    }

    pub fn next_control_seq(&self) -> u32 {
        self.control_seq.fetch_add(1, Ordering::Relaxed)
    }

    fn send_now(&self, to: usize, frame: Frame) -> Result<()> {
        self.transport.send(to, frame)?.wait(to, self.cfg.send_timeout)
    }

    /// Dissemination barrier: round k exchanges with ranks at distance 2^k.
    pub fn barrier(&self) -> Result<()> {
        let (r, p) = (self.rank(), self.size());
        let seq = self.next_control_seq();
        let key = MatchKey::new(MsgType::Barrier, PhaseTag::Control, seq);
        let mut dist = 1;
        let mut round = 0u32;
        while dist < p {
            self.send_now((r + dist) % p, Frame::control(MsgType::Barrier, seq, round, Vec::new()))?;
            let from = (r + p - dist) % p;
            let f = self.transport.recv(from, key, self.cfg.recv_timeout).map_err(|e| match e {
                CommError::Timeout { after, .. } => CommError::Timeout { peer: from, after, what: "barrier" },
                other => other,
            })?;
            if f.segment != round {
                return Err(CommError::Protocol(format!("barrier round {round} got round {}", f.segment)));
            }
            dist <<= 1;
            round += 1;
        }
        Ok(())
    }

    /// Ping each peer once; failures are logged and reported as `None`.
    pub fn warmup(&self, peers: &[usize]) -> Vec<(usize, Option<Duration>)> {
        peers
            .iter()
            .map(|&to| match self.transport.ping(to, self.cfg.send_timeout) {
                Ok(rtt) => (to, Some(rtt)),
                Err(e) => {
                    log::warn!("rank {}: warm-up to {to} failed: {e}", self.rank());
                    (to, None)
                }
            })
            .collect()
    }

    /// Gather one payload per rank at `root`; other ranks get `None`.
    pub fn gather(&self, root: usize, payload: Vec<u8>) -> Result<Option<Vec<Vec<u8>>>> {
        let seq = self.next_control_seq();
        let me = self.rank();
        if me != root {
            self.send_now(root, Frame::control(MsgType::Data, seq, me as u32, payload))?;
            return Ok(None);
        }
        let key = MatchKey::new(MsgType::Data, PhaseTag::Control, seq);
        let mut out = Vec::with_capacity(self.size());
        for r in 0..self.size() {
            if r == me {
                out.push(payload.clone());
            } else {
                out.push(self.transport.recv(r, key, self.cfg.recv_timeout)?.payload);
            }
        }
        Ok(Some(out))
    }

    /// Deliver `payload` from `root` to every rank.
    pub fn broadcast(&self, root: usize, payload: Option<Vec<u8>>) -> Result<Vec<u8>> {
        let seq = self.next_control_seq();
        let me = self.rank();
        if me == root {
            let payload = payload.ok_or_else(|| CommError::InvalidArgument("root must supply a payload".into()))?;
            let tickets = (0..self.size())
                .filter(|&r| r != me)
                .map(|r| Ok((r, self.transport.send(r, Frame::control(MsgType::Data, seq, 0, payload.clone()))?)))
                .collect::<Result<Vec<_>>>()?;
            for (r, t) in tickets {
                t.wait(r, self.cfg.send_timeout)?;
            }
            return Ok(payload);
        }
        let key = MatchKey::new(MsgType::Data, PhaseTag::Control, seq);
        Ok(self.transport.recv(root, key, self.cfg.recv_timeout)?.payload)
    }

    /// Gather at rank 0, then broadcast the concatenation.
    pub fn allgather(&self, payload: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let gathered = self.gather(0, payload)?;
        let packed = gathered.map(|parts| pack(&parts));
        unpack(&self.broadcast(0, packed)?)
    }
}

fn pack(parts: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        out.extend_from_slice(p);
    }
    out
}

fn unpack(mut bytes: &[u8]) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 4 {
            return Err(CommError::Protocol("truncated allgather payload".into()));
        }
        let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        bytes = &bytes[4..];
        if bytes.len() < n {
            return Err(CommError::Protocol("truncated allgather payload".into()));
        }
        out.push(bytes[..n].to_vec());
        bytes = &bytes[n..];
    }
    Ok(out)
}

/// Rounds used by the dissemination barrier.
pub fn barrier_rounds(p: usize) -> usize {
    let mut rounds = 0;
    while (1usize << rounds) < p {
        rounds += 1;
    }
    rounds
}
