//! Background thread that extrapolates arrival times from a progress point,
//! shares them with the other ranks and warms up the expected edges.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{select, Sender};
use papred_core::sort_by_arrival;

use crate::error::{CommError, Result};
use crate::frame::{decode_estimate, encode_estimate, Frame, MsgType};
use crate::transport::Transport;

/// Sent in place of an estimate when a phase ends without an `edge()` call.
const NO_ESTIMATE: u64 = u64::MAX;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProgressState {
    pub phase_start: Option<Instant>,
    pub edge_time: Option<Instant>,
    pub edge_fraction: Option<f64>,
    pub phase_end: Option<Instant>,
    pub iteration: u32,
    open: bool,
}

impl ProgressState {
    pub fn is_open(&self) -> bool {
        self.open
    }
}

/// Arrival estimates in seconds since each rank's phase start.
#[derive(Debug, Clone, PartialEq)]
pub struct PapEstimate {
    pub iteration: u32,
    pub arrivals: Vec<Option<f64>>,
    pub complete: bool,
}

impl PapEstimate {
    pub fn vector(&self) -> Option<Vec<f64>> {
        if !self.complete {
            return None;
        }
        self.arrivals.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracySample {
    pub iteration: u32,
    pub estimated: f64,
    pub actual: f64,
}

impl AccuracySample {
    pub fn relative_error(&self) -> f64 {
        ((self.estimated - self.actual) / self.actual).abs()
    }
}

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub warmup: bool,
    pub ping_timeout: Duration,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { warmup: true, ping_timeout: Duration::from_secs(2) }
    }
}

#[derive(Default)]
struct Book {
    by_iteration: BTreeMap<u32, Vec<Option<u64>>>,
    warmed: BTreeSet<u32>,
}

impl Book {
    fn insert(&mut self, size: usize, iteration: u32, rank: usize, micros: u64) {
        let row = self.by_iteration.entry(iteration).or_insert_with(|| vec![None; size]);
        if rank < row.len() {
            row[rank] = Some(micros);
        }
        let newest = *self.by_iteration.keys().next_back().unwrap();
        self.by_iteration.retain(|&k, _| k + 4 >= newest);
        self.warmed.retain(|&k| k + 4 >= newest);
    }

    fn settled(&self, iteration: u32) -> bool {
        self.by_iteration.get(&iteration).is_some_and(|row| row.iter().all(Option::is_some))
    }

    fn estimate(&self, size: usize, iteration: u32) -> PapEstimate {
        let arrivals: Vec<Option<f64>> = match self.by_iteration.get(&iteration) {
            Some(row) => row
                .iter()
                .map(|v| v.filter(|&us| us != NO_ESTIMATE).map(|us| us as f64 * 1e-6))
                .collect(),
            None => vec![None; size],
        };
        let complete = arrivals.iter().all(Option::is_some);
        PapEstimate { iteration, arrivals, complete }
    }
}

struct Shared {
    rank: usize,
    size: usize,
    progress: Mutex<ProgressState>,
    book: Mutex<Book>,
    settled: Condvar,
    rtts: Mutex<Vec<Duration>>,
    accuracy: Mutex<Vec<AccuracySample>>,
}

enum Event {
    Estimate { iteration: u32, micros: u64 },
    Shutdown,
}

pub struct Monitor {
    shared: Arc<Shared>,
    events: Sender<Event>,
    thread: Option<JoinHandle<()>>,
}

impl Monitor {
    pub fn spawn(transport: Arc<dyn Transport>, cfg: MonitorConfig) -> Result<Self> {
        let shared = Arc::new(Shared {
            rank: transport.rank(),
            size: transport.size(),
            progress: Mutex::new(ProgressState::default()),
            book: Mutex::new(Book::default()),
            settled: Condvar::new(),
            rtts: Mutex::new(Vec::new()),
            accuracy: Mutex::new(Vec::new()),
        });
        let (events, rx) = crossbeam_channel::unbounded();
        let inner = shared.clone();
        let thread = thread::Builder::new()
            .name(format!("monitor-{}", shared.rank))
            .spawn(move || run(inner, transport, cfg, rx))?;
        Ok(Monitor { shared, events, thread: Some(thread) })
    }

    pub fn phase_start(&self) -> Result<()> {
        let mut p = self.shared.progress.lock().unwrap();
        if p.open {
            return Err(CommError::State("phase already started".into()));
        }
        *p = ProgressState { phase_start: Some(Instant::now()), iteration: p.iteration + 1, open: true, ..Default::default() };
        Ok(())
    }

    /// Report that `fraction` of the computation phase is done.
    pub fn edge(&self, fraction: f64) -> Result<()> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CommError::InvalidArgument(format!("edge fraction {fraction} outside (0, 1]")));
        }
        let now = Instant::now();
        let mut p = self.shared.progress.lock().unwrap();
        let start = match (p.open, p.phase_start) {
            (true, Some(s)) => s,
            _ => return Err(CommError::State("edge outside a computation phase".into())),
        };
        if p.edge_time.is_some() {
            return Err(CommError::State("edge already reported for this phase".into()));
        }
        p.edge_time = Some(now);
        p.edge_fraction = Some(fraction);
        let iteration = p.iteration;
        drop(p);
        let micros = ((now - start).as_secs_f64() / fraction * 1e6).round() as u64;
        self.record(iteration, self.shared.rank, micros);
        let _ = self.events.send(Event::Estimate { iteration, micros });
        Ok(())
    }

    pub fn phase_end(&self) -> Result<()> {
        let now = Instant::now();
        let mut p = self.shared.progress.lock().unwrap();
        if !p.open {
            return Err(CommError::State("phase not started".into()));
        }
        p.open = false;
        p.phase_end = Some(now);
        let iteration = p.iteration;
        let actual = (now - p.phase_start.unwrap()).as_secs_f64();
        let had_edge = p.edge_time.is_some();
        drop(p);
        if had_edge {
            let est = self.shared.book.lock().unwrap().estimate(self.shared.size, iteration);
            if let Some(estimated) = est.arrivals[self.shared.rank] {
                self.shared.accuracy.lock().unwrap().push(AccuracySample { iteration, estimated, actual });
            }
        } else {
            self.record(iteration, self.shared.rank, NO_ESTIMATE);
            let _ = self.events.send(Event::Estimate { iteration, micros: NO_ESTIMATE });
        }
        Ok(())
    }

    fn record(&self, iteration: u32, rank: usize, micros: u64) {
        let mut book = self.shared.book.lock().unwrap();
        book.insert(self.shared.size, iteration, rank, micros);
        drop(book);
        self.shared.settled.notify_all();
    }

    pub fn progress(&self) -> ProgressState {
        self.shared.progress.lock().unwrap().clone()
    }

    pub fn current_iteration(&self) -> u32 {
        self.shared.progress.lock().unwrap().iteration
    }

    /// Latest estimate vector for the current iteration; never waits.
    pub fn snapshot_estimate(&self) -> PapEstimate {
        let it = self.current_iteration();
        self.shared.book.lock().unwrap().estimate(self.shared.size, it)
    }

    /// Wait until every rank has reported for `iteration` (an estimate or
    /// the absence of one), or the timeout passes.
    pub fn wait_settled(&self, iteration: u32, timeout: Duration) -> PapEstimate {
        let deadline = Instant::now() + timeout;
        let mut book = self.shared.book.lock().unwrap();
        while !book.settled(iteration) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            book = self.shared.settled.wait_timeout(book, deadline - now).unwrap().0;
        }
        book.estimate(self.shared.size, iteration)
    }

    pub fn rtt_samples(&self) -> Vec<Duration> {
        self.shared.rtts.lock().unwrap().clone()
    }

    pub fn accuracy(&self) -> Vec<AccuracySample> {
        self.shared.accuracy.lock().unwrap().clone()
    }
}

impl Drop for Monitor {
    fn drop(&mut self) {
        let _ = self.events.send(Event::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn run(shared: Arc<Shared>, transport: Arc<dyn Transport>, cfg: MonitorConfig, events: crossbeam_channel::Receiver<Event>) {
    let inbox = transport.monitor_inbox();
    let after_update = |iteration: u32| {
        let mut book = shared.book.lock().unwrap();
        if !book.settled(iteration) {
            return;
        }
        shared.settled.notify_all();
        let est = book.estimate(shared.size, iteration);
        if !cfg.warmup || !est.complete || !book.warmed.insert(iteration) {
            return;
        }
        drop(book);
        let order = sort_by_arrival(&est.vector().unwrap());
        let me = order.new_id_of[shared.rank];
        let succ = order.old_rank_of[(me + 1) % shared.size];
        match transport.ping(succ, cfg.ping_timeout) {
            Ok(rtt) => shared.rtts.lock().unwrap().push(rtt),
            Err(e) => log::warn!("rank {}: warm-up ping to {succ} failed: {e}", shared.rank),
        }
    };
    loop {
        select! {
            recv(events) -> ev => match ev {
                Ok(Event::Estimate { iteration, micros }) => {
                    let payload = encode_estimate(iteration, micros);
                    for peer in (0..shared.size).filter(|&r| r != shared.rank) {
                        let f = Frame::control(MsgType::MonitorEstimate, iteration, 0, payload.clone());
                        if let Err(e) = transport.send(peer, f) {
                            log::warn!("rank {}: estimate to {peer} failed: {e}", shared.rank);
                        }
                    }
                    after_update(iteration);
                }
                Ok(Event::Shutdown) | Err(_) => return,
            },
            recv(inbox) -> msg => match msg {
                Ok((from, frame)) => {
                    match decode_estimate(&frame.payload) {
                        Some((iteration, micros)) if iteration == frame.iteration => {
                            shared.book.lock().unwrap().insert(shared.size, iteration, from, micros);
                            after_update(iteration);
                        }
                        _ => log::warn!("rank {}: malformed estimate from {from}", shared.rank),
                    }
                }
                Err(_) => return,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inproc::{inproc_group, InProcConfig};

    fn solo() -> Monitor {
        let g = inproc_group(2, &InProcConfig::default());
        Monitor::spawn(g[0].clone(), MonitorConfig { warmup: false, ..Default::default() }).unwrap()
    }

    #[test]
    fn start_guards() {
        let m = solo();
        m.phase_start().unwrap();
        let p = m.progress();
        assert!(p.phase_start.is_some() && p.edge_time.is_none());
        assert!(matches!(m.phase_start(), Err(CommError::State(_))));
        m.phase_end().unwrap();
        m.phase_start().unwrap();
        assert_eq!(m.current_iteration(), 2);
    }

    #[test]
    fn edge_guards() {
        let m = solo();
        assert!(matches!(m.edge(0.5), Err(CommError::State(_))));
        m.phase_start().unwrap();
        assert!(matches!(m.edge(0.0), Err(CommError::InvalidArgument(_))));
        assert!(matches!(m.edge(1.5), Err(CommError::InvalidArgument(_))));
        m.edge(1.0).unwrap();
        assert!(matches!(m.edge(1.0), Err(CommError::State(_))));
        m.phase_end().unwrap();
        assert!(matches!(m.phase_end(), Err(CommError::State(_))));
        assert!(matches!(m.edge(0.5), Err(CommError::State(_))));
    }

    #[test]
    fn linear_extrapolation() {
        let m = solo();
        m.phase_start().unwrap();
        thread::sleep(Duration::from_millis(50));
        m.edge(0.5).unwrap();
        let own = m.snapshot_estimate().arrivals[0].unwrap();
        assert!((0.099..0.115).contains(&own), "{own}");
        assert!(!m.snapshot_estimate().complete);
    }

    #[test]
    fn edge_at_one_is_now() {
        let m = solo();
        m.phase_start().unwrap();
        thread::sleep(Duration::from_millis(80));
        m.edge(1.0).unwrap();
        let own = m.snapshot_estimate().arrivals[0].unwrap();
        assert!((0.079..0.090).contains(&own), "{own}");
    }

    #[test]
    fn end_without_edge_leaves_estimate_incomplete() {
        let m = solo();
        m.phase_start().unwrap();
        m.phase_end().unwrap();
        let e = m.snapshot_estimate();
        assert!(!e.complete);
        assert_eq!(e.arrivals[0], None);
        assert!(m.accuracy().is_empty());
    }

    #[test]
    fn accuracy_sample() {
        let s = AccuracySample { iteration: 1, estimated: 0.11, actual: 0.1 };
        assert!((s.relative_error() - 0.1).abs() < 1e-9);
    }
}
