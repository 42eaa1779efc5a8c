//! In-process transport: every rank is a thread sharing one hub.

use std::sync::atomic::AtomicU32;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::frame::Frame;
use crate::transport::{check_peer, Inbox, MatchKey, SendTicket, Transport};

#[derive(Debug, Clone, Default)]
pub struct InProcConfig {
    /// Seeded per-sender delivery delay, uniform in `[0, max]`. Each sender
    /// draws from its own stream, so the same seed replays the same delays.
    pub jitter: Option<(u64, Duration)>,
}

struct Hub {
    inboxes: Vec<Arc<Inbox>>,
}

impl Hub {
    fn deliver(&self, from: usize, to: usize, frame: Frame) {
        if let Some(ack) = self.inboxes[to].deliver(from, frame) {
            self.inboxes[from].deliver(to, ack);
        }
    }
}

type Outgoing = (usize, Frame, Sender<std::result::Result<(), String>>);

pub struct InProcTransport {
    rank: usize,
    hub: Arc<Hub>,
    monitor_rx: Receiver<(usize, Frame)>,
    delayed: Option<Sender<Outgoing>>,
    pings: AtomicU32,
}

/// Create one connected transport per rank.
pub fn inproc_group(size: usize, cfg: &InProcConfig) -> Vec<Arc<InProcTransport>> {
    let mut inboxes = Vec::with_capacity(size);
    let mut monitors = Vec::with_capacity(size);
    for _ in 0..size {
        let (inbox, rx) = Inbox::new(size);
        inboxes.push(Arc::new(inbox));
        monitors.push(rx);
    }
    let hub = Arc::new(Hub { inboxes });
    monitors
        .into_iter()
        .enumerate()
        .map(|(rank, monitor_rx)| {
            let delayed = cfg.jitter.map(|(seed, max)| spawn_delayer(rank, hub.clone(), seed, max));
            Arc::new(InProcTransport { rank, hub: hub.clone(), monitor_rx, delayed, pings: AtomicU32::new(0) })
        })
        .collect()
}

fn spawn_delayer(rank: usize, hub: Arc<Hub>, seed: u64, max: Duration) -> Sender<Outgoing> {
    let (tx, rx) = crossbeam_channel::unbounded::<Outgoing>();
    thread::Builder::new()
        .name(format!("inproc-delay-{rank}"))
        .spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rank as u64));
            let max_ns = max.as_nanos() as u64;
            for (to, frame, done) in rx {
                let ns = if max_ns == 0 { 0 } else { rng.gen_range(0..=max_ns) };
                thread::sleep(Duration::from_nanos(ns));
                hub.deliver(rank, to, frame);
                let _ = done.send(Ok(()));
            }
        })
        .expect("spawn delivery thread");
    tx
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.hub.inboxes.len()
    }

    fn send(&self, to: usize, frame: Frame) -> Result<SendTicket> {
        check_peer(self.rank, self.size(), to)?;
        match &self.delayed {
            None => {
                self.hub.deliver(self.rank, to, frame);
                Ok(SendTicket::completed())
            }
            Some(tx) => {
                let (done, ticket) = SendTicket::pending();
                tx.send((to, frame, done))
                    .map_err(|_| crate::error::CommError::Transport("delivery thread gone".into()))?;
                Ok(ticket)
            }
        }
    }

    fn recv(&self, from: usize, key: MatchKey, timeout: Duration) -> Result<Frame> {
        check_peer(self.rank, self.size(), from)?;
        self.hub.inboxes[self.rank].take(from, key, timeout)
    }

    fn monitor_inbox(&self) -> Receiver<(usize, Frame)> {
        self.monitor_rx.clone()
    }

    fn ping_counter(&self) -> &AtomicU32 {
        &self.pings
    }
}
