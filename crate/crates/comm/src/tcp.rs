//! TCP transport: one duplex connection per rank pair, lower rank connects.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::AtomicU32;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};

use crate::error::{CommError, Result};
use crate::frame::Frame;
use crate::transport::{check_peer, Inbox, MatchKey, SendTicket, Transport, DEFAULT_SEND_TIMEOUT};

const HELLO: [u8; 4] = *b"PAPH";

/// `rank:host:port` lines; blank lines and `#` comments are skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    hosts: Vec<String>,
}

impl Roster {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (rank, addr) = line
                .split_once(':')
                .ok_or_else(|| CommError::InvalidArgument(format!("roster line {}: expected rank:host:port", n + 1)))?;
            let rank: usize = rank
                .trim()
                .parse()
                .map_err(|_| CommError::InvalidArgument(format!("roster line {}: bad rank {rank:?}", n + 1)))?;
            let addr = addr.trim();
            match addr.rsplit_once(':') {
                Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {}
                _ => return Err(CommError::InvalidArgument(format!("roster line {}: bad address {addr:?}", n + 1))),
            }
            entries.push((rank, addr.to_string()));
        }
        entries.sort();
        for (i, (r, _)) in entries.iter().enumerate() {
            if *r != i {
                return Err(CommError::InvalidArgument(format!("roster ranks must be 0..P without gaps; found {r} at {i}")));
            }
        }
        if entries.is_empty() {
            return Err(CommError::InvalidArgument("empty roster".into()));
        }
        Ok(Roster { hosts: entries.into_iter().map(|(_, a)| a).collect() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn loopback(ports: &[u16]) -> Self {
        Roster { hosts: ports.iter().map(|p| format!("127.0.0.1:{p}")).collect() }
    }

    pub fn len(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }

    pub fn address(&self, rank: usize) -> &str {
        &self.hosts[rank]
    }

    pub fn to_text(&self) -> String {
        self.hosts.iter().enumerate().map(|(r, a)| format!("{r}:{a}\n")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TcpConfig {
    pub establish_timeout: Duration,
    /// How long `Drop` waits for peers to close their side.
    pub linger: Duration,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig { establish_timeout: DEFAULT_SEND_TIMEOUT, linger: Duration::from_secs(5) }
    }
}

enum Outgoing {
    Frame(Frame, Option<Sender<std::result::Result<(), String>>>),
    Close,
}

pub struct TcpTransport {
    rank: usize,
    size: usize,
    writers: Vec<Option<Sender<Outgoing>>>,
    inbox: Arc<Inbox>,
    monitor_rx: Receiver<(usize, Frame)>,
    threads: Vec<JoinHandle<()>>,
    readers: Vec<JoinHandle<()>>,
    linger: Duration,
    pings: AtomicU32,
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| CommError::InvalidArgument(format!("cannot resolve {addr}")))
}

impl TcpTransport {
    /// Bind this rank's roster address and connect the full mesh.
    pub fn establish(rank: usize, roster: &Roster, cfg: &TcpConfig) -> Result<Self> {
        let listener = TcpListener::bind(resolve(roster.address(rank))?)?;
        Self::establish_with(rank, roster, listener, cfg)
    }

    /// Like [`establish`](Self::establish) with an already bound listener.
    pub fn establish_with(rank: usize, roster: &Roster, listener: TcpListener, cfg: &TcpConfig) -> Result<Self> {
        let size = roster.len();
        if rank >= size {
            return Err(CommError::InvalidArgument(format!("rank {rank} not in roster of {size}")));
        }
        let deadline = Instant::now() + cfg.establish_timeout;
        let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();

        for (peer, slot) in streams.iter_mut().enumerate().skip(rank + 1) {
            let addr = resolve(roster.address(peer))?;
            let mut s = loop {
                match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() < deadline => {
                        log::debug!("rank {rank}: connect to {peer} failed ({e}), retrying");
                        thread::sleep(Duration::from_millis(20));
                    }
                    Err(_) => {
                        return Err(CommError::Timeout { peer, after: cfg.establish_timeout, what: "connection" })
                    }
                }
            };
            s.write_all(&HELLO)?;
            s.write_all(&(rank as u32).to_le_bytes())?;
            *slot = Some(s);
        }

        listener.set_nonblocking(true)?;
        let mut missing = rank;
        while missing > 0 {
            match listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_read_timeout(Some(Duration::from_secs(5)))?;
                    let mut hello = [0u8; 8];
                    s.read_exact(&mut hello)?;
                    if hello[..4] != HELLO {
                        return Err(CommError::Protocol("bad connection greeting".into()));
                    }
                    let peer = u32::from_le_bytes(hello[4..].try_into().unwrap()) as usize;
                    if peer >= rank || streams[peer].is_some() {
                        return Err(CommError::Protocol(format!("unexpected greeting from rank {peer}")));
                    }
                    s.set_read_timeout(None)?;
                    streams[peer] = Some(s);
                    missing -= 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let peer = streams[..rank].iter().position(Option::is_none).unwrap_or(0);
                        return Err(CommError::Timeout { peer, after: cfg.establish_timeout, what: "connection" });
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }

        let (inbox, monitor_rx) = Inbox::new(size);
        let inbox = Arc::new(inbox);
        let mut writers: Vec<Option<Sender<Outgoing>>> = (0..size).map(|_| None).collect();
        let mut threads = Vec::new();
        let mut readers = Vec::new();
        for (peer, s) in streams.into_iter().enumerate() {
            let Some(s) = s else { continue };
            s.set_nodelay(true)?;
            let (tx, rx) = crossbeam_channel::unbounded::<Outgoing>();
            let write_half = s.try_clone()?;
            threads.push(
                thread::Builder::new()
                    .name(format!("tcp-w-{rank}-{peer}"))
                    .spawn(move || writer_loop(write_half, rx))?,
            );
            let ack_tx = tx.clone();
            let inbox_r = inbox.clone();
            readers.push(
                thread::Builder::new()
                    .name(format!("tcp-r-{rank}-{peer}"))
                    .spawn(move || reader_loop(s, peer, inbox_r, ack_tx))?,
            );
            writers[peer] = Some(tx);
        }
        Ok(TcpTransport {
            rank,
            size,
            writers,
            inbox,
            monitor_rx,
            threads,
            readers,
            linger: cfg.linger,
            pings: AtomicU32::new(0),
        })
    }
}

fn writer_loop(stream: TcpStream, rx: Receiver<Outgoing>) {
    let mut w = BufWriter::with_capacity(1 << 16, stream);
    let mut failed: Option<String> = None;
    for msg in rx.iter() {
        let Outgoing::Frame(frame, done) = msg else { break };
        let res = match &failed {
            Some(e) => Err(e.clone()),
            None => frame.write_to(&mut w).and_then(|_| if rx.is_empty() { w.flush() } else { Ok(()) }).map_err(|e| {
                failed = Some(e.to_string());
                e.to_string()
            }),
        };
        if let Some(done) = done {
            let _ = done.send(res);
        }
    }
    let _ = w.flush();
    if let Ok(s) = w.into_inner() {
        let _ = s.shutdown(Shutdown::Write);
    }
}

fn reader_loop(stream: TcpStream, peer: usize, inbox: Arc<Inbox>, ack_tx: Sender<Outgoing>) {
    let mut r = BufReader::with_capacity(1 << 16, stream);
    loop {
        match Frame::read_from(&mut r) {
            Ok(Some(frame)) => {
                if let Some(ack) = inbox.deliver(peer, frame) {
                    let _ = ack_tx.send(Outgoing::Frame(ack, None));
                }
            }
            Ok(None) => {
                inbox.close_peer(peer, "connection closed".into());
                return;
            }
            Err(e) => {
                inbox.close_peer(peer, e.to_string());
                return;
            }
        }
    }
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn send(&self, to: usize, frame: Frame) -> Result<SendTicket> {
        check_peer(self.rank, self.size, to)?;
        let (done, ticket) = SendTicket::pending();
        self.writers[to]
            .as_ref()
            .expect("mesh is complete")
            .send(Outgoing::Frame(frame, Some(done)))
            .map_err(|_| CommError::Transport(format!("writer for rank {to} stopped")))?;
        Ok(ticket)
    }

    fn recv(&self, from: usize, key: MatchKey, timeout: Duration) -> Result<Frame> {
        check_peer(self.rank, self.size, from)?;
        self.inbox.take(from, key, timeout)
    }

    fn monitor_inbox(&self) -> Receiver<(usize, Frame)> {
        self.monitor_rx.clone()
    }

    fn ping_counter(&self) -> &AtomicU32 {
        &self.pings
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        // Closing our write side first and then draining until every peer has
        // closed theirs avoids resets that could drop data still in flight.
        for w in self.writers.iter_mut().filter_map(Option::take) {
            let _ = w.send(Outgoing::Close);
        }
        let deadline = Instant::now() + self.linger;
        for h in self.readers.drain(..) {
            while !h.is_finished() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(2));
            }
            if h.is_finished() {
                let _ = h.join();
            }
        }
        for h in self.threads.drain(..) {
            if h.is_finished() {
                let _ = h.join();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roster_parse() {
        let r = Roster::parse("# cluster\n1:10.0.0.2:7001\n0:10.0.0.1:7000\n\n").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.address(0), "10.0.0.1:7000");
        assert_eq!(Roster::parse(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn roster_errors() {
        assert!(Roster::parse("").is_err());
        assert!(Roster::parse("0:host").is_err());
        assert!(Roster::parse("0:h:1\n2:h:2").is_err());
        assert!(Roster::parse("x:h:1").is_err());
        assert!(Roster::parse("0:h:99999").is_err());
    }
}
