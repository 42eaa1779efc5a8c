//! Transport abstraction and the shared receive-side demultiplexer.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};

use crate::error::{CommError, Result};
use crate::frame::{Frame, MsgType, PhaseTag};

pub const DEFAULT_SEND_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(30);

/// Warm-up frames: segment 0 is a ping, segment 1 its acknowledgement.
pub const WARMUP_PING: u32 = 0;
pub const WARMUP_ACK: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatchKey {
    pub msg_type: MsgType,
    pub phase: PhaseTag,
    pub iteration: u32,
}

impl MatchKey {
    pub fn new(msg_type: MsgType, phase: PhaseTag, iteration: u32) -> Self {
        MatchKey { msg_type, phase, iteration }
    }

    pub fn of(frame: &Frame) -> Self {
        MatchKey::new(frame.msg_type, frame.phase, frame.iteration)
    }
}

/// Completion handle for a buffered send.
#[derive(Debug)]
pub struct SendTicket {
    done: Option<Receiver<std::result::Result<(), String>>>,
}

impl SendTicket {
    pub fn completed() -> Self {
        SendTicket { done: None }
    }

    pub fn pending() -> (Sender<std::result::Result<(), String>>, Self) {
        let (tx, rx) = crossbeam_channel::bounded(1);
        (tx, SendTicket { done: Some(rx) })
    }

    /// Block until the frame has been handed to the wire.
    pub fn wait(self, peer: usize, timeout: Duration) -> Result<()> {
        let Some(rx) = self.done else { return Ok(()) };
        match rx.recv_timeout(timeout) {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(CommError::Transport(format!("send to rank {peer} failed: {e}"))),
            Err(crossbeam_channel::RecvTimeoutError::Timeout) => {
                Err(CommError::Timeout { peer, after: timeout, what: "send completion" })
            }
            Err(crossbeam_channel::RecvTimeoutError::Disconnected) => {
                Err(CommError::Transport(format!("send to rank {peer} abandoned")))
            }
        }
    }
}

pub trait Transport: Send + Sync {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;

    /// Buffered, non-blocking send. Frames to one peer arrive in send order.
    fn send(&self, to: usize, frame: Frame) -> Result<SendTicket>;

    /// Next frame from `from` in the given match class.
    fn recv(&self, from: usize, key: MatchKey, timeout: Duration) -> Result<Frame>;

    /// Monitor-estimate frames, diverted away from `recv`.
    fn monitor_inbox(&self) -> Receiver<(usize, Frame)>;

    #[doc(hidden)]
    fn ping_counter(&self) -> &AtomicU32;

    /// Round trip of one acknowledged warm-up frame.
    fn ping(&self, to: usize, timeout: Duration) -> Result<Duration> {
        let seq = self.ping_counter().fetch_add(1, Ordering::Relaxed);
        let t0 = Instant::now();
        self.send(to, Frame::control(MsgType::Warmup, seq, WARMUP_PING, Vec::new()))?;
        self.recv(to, MatchKey::new(MsgType::Warmup, PhaseTag::Control, seq), timeout)?;
        Ok(t0.elapsed())
    }
}

pub(crate) fn check_peer(rank: usize, size: usize, to: usize) -> Result<()> {
    if to == rank {
        return Err(CommError::InvalidArgument(format!("rank {rank} cannot send to itself")));
    }
    if to >= size {
        return Err(CommError::InvalidArgument(format!("peer {to} outside communicator of {size}")));
    }
    Ok(())
}

#[derive(Default)]
struct InboxState {
    queues: HashMap<(usize, MatchKey), VecDeque<Frame>>,
    closed: Vec<Option<String>>,
}

/// Per-process mailbox: frames land here from delivery threads and are
/// handed out by (sender, match key) in arrival order.
pub struct Inbox {
    state: Mutex<InboxState>,
    cv: Condvar,
    monitor_tx: Sender<(usize, Frame)>,
}

impl Inbox {
    pub fn new(size: usize) -> (Self, Receiver<(usize, Frame)>) {
        let (monitor_tx, monitor_rx) = crossbeam_channel::unbounded();
        let state = InboxState { queues: HashMap::new(), closed: vec![None; size] };
        (Inbox { state: Mutex::new(state), cv: Condvar::new(), monitor_tx }, monitor_rx)
    }

    /// Accept a frame from `from`. Returns an acknowledgement that the caller
    /// must send back when the frame is a warm-up ping.
    pub fn deliver(&self, from: usize, frame: Frame) -> Option<Frame> {
        match (frame.msg_type, frame.segment) {
            (MsgType::MonitorEstimate, _) => {
                let _ = self.monitor_tx.send((from, frame));
                None
            }
            (MsgType::Warmup, WARMUP_PING) => {
                Some(Frame::control(MsgType::Warmup, frame.iteration, WARMUP_ACK, frame.payload))
            }
            _ => {
                let mut st = self.state.lock().unwrap();
                st.queues.entry((from, MatchKey::of(&frame))).or_default().push_back(frame);
                drop(st);
                self.cv.notify_all();
                None
            }
        }
    }

    /// Mark a peer as gone; pending and future receives from it fail once
    /// its queued frames are drained.
    pub fn close_peer(&self, from: usize, why: String) {
        let mut st = self.state.lock().unwrap();
        if from < st.closed.len() {
            st.closed[from].get_or_insert(why);
        }
        drop(st);
        self.cv.notify_all();
    }

    pub fn take(&self, from: usize, key: MatchKey, timeout: Duration) -> Result<Frame> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(f) = st.queues.get_mut(&(from, key)).and_then(VecDeque::pop_front) {
                return Ok(f);
            }
            if let Some(why) = st.closed.get(from).and_then(Clone::clone) {
                return Err(CommError::Transport(format!("rank {from} disconnected: {why}")));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(CommError::Timeout { peer: from, after: timeout, what: "receive" });
            }
            st = self.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(it: u32, seg: u32) -> Frame {
        Frame::new(MsgType::Data, PhaseTag::Reduce, it, seg, vec![seg as u8])
    }

    #[test]
    fn classes_are_separate_and_fifo() {
        let (inbox, _mon) = Inbox::new(3);
        inbox.deliver(1, data(0, 1));
        inbox.deliver(1, data(1, 9));
        inbox.deliver(1, data(0, 2));
        let k0 = MatchKey::new(MsgType::Data, PhaseTag::Reduce, 0);
        let k1 = MatchKey::new(MsgType::Data, PhaseTag::Reduce, 1);
        let t = Duration::from_millis(10);
        assert_eq!(inbox.take(1, k1, t).unwrap().segment, 9);
        assert_eq!(inbox.take(1, k0, t).unwrap().segment, 1);
        assert_eq!(inbox.take(1, k0, t).unwrap().segment, 2);
        assert!(matches!(inbox.take(2, k0, t), Err(CommError::Timeout { peer: 2, .. })));
    }

    #[test]
    fn estimates_diverted_and_pings_acked() {
        let (inbox, mon) = Inbox::new(2);
        let est = Frame::control(MsgType::MonitorEstimate, 4, 0, crate::frame::encode_estimate(4, 10));
        assert!(inbox.deliver(1, est.clone()).is_none());
        inbox.deliver(1, data(4, 0));
        assert_eq!(mon.try_recv().unwrap(), (1, est));
        let ack = inbox.deliver(1, Frame::control(MsgType::Warmup, 3, WARMUP_PING, vec![])).unwrap();
        assert_eq!((ack.msg_type, ack.iteration, ack.segment), (MsgType::Warmup, 3, WARMUP_ACK));
    }

    #[test]
    fn closed_peer_fails_fast() {
        let (inbox, _mon) = Inbox::new(2);
        inbox.deliver(1, data(0, 5));
        inbox.close_peer(1, "eof".into());
        let k = MatchKey::new(MsgType::Data, PhaseTag::Reduce, 0);
        assert_eq!(inbox.take(1, k, Duration::from_secs(5)).unwrap().segment, 5);
        let t0 = Instant::now();
        assert!(matches!(inbox.take(1, k, Duration::from_secs(5)), Err(CommError::Transport(_))));
        assert!(t0.elapsed() < Duration::from_secs(1));
    }

    #[test]
    fn ticket_states() {
        assert!(SendTicket::completed().wait(1, Duration::from_millis(1)).is_ok());
        let (tx, t) = SendTicket::pending();
        tx.send(Err("boom".into())).unwrap();
        assert!(matches!(t.wait(1, Duration::from_millis(10)), Err(CommError::Transport(_))));
        let (_tx, t) = SendTicket::pending();
        assert!(matches!(t.wait(1, Duration::from_millis(10)), Err(CommError::Timeout { .. })));
    }
}
