//! Executes a schedule over a communicator.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;
use std::time::{Duration, Instant};

use papred_core::{
    balanced_schedule, build_schedule, decode_elements, encode_elements, partition_segments, reduce_into,
    serial_fold, validate_schedule, Algorithm, CoreError, Element, ReduceOp, Schedule, StepKind,
};

use crate::comm::Communicator;
use crate::error::{CommError, Result};
use crate::frame::{Frame, MsgType, PhaseTag};
use crate::monitor::Monitor;
use crate::transport::{MatchKey, SendTicket};

#[derive(Debug, Clone)]
pub struct AllreduceOutcome {
    pub arrival: Instant,
    pub finish: Instant,
    /// Whether the schedule was derived from a shared arrival estimate.
    pub used_estimate: bool,
    /// Ranks in schedule order.
    pub order: Vec<usize>,
}

impl AllreduceOutcome {
    pub fn elapsed(&self) -> Duration {
        self.finish - self.arrival
    }
}

pub struct AllreduceContext {
    comm: Arc<Communicator>,
    pub algorithm: Algorithm,
    pub iteration: u32,
    pub tau: Duration,
    monitor: Option<Arc<Monitor>>,
    /// Upper bound on waiting for the other ranks' estimates.
    pub estimate_wait: Duration,
    /// Exchange a schedule digest before running, failing on disagreement.
    pub check_agreement: bool,
    validated: HashMap<u64, Arc<Schedule>>,
}

fn digest(s: &Schedule) -> u64 {
    let mut h = DefaultHasher::new();
    s.algorithm.hash(&mut h);
    s.assignment.old_rank_of.hash(&mut h);
    s.steps.hash(&mut h);
    h.finish()
}

impl AllreduceContext {
    pub fn new(comm: Arc<Communicator>, algorithm: Algorithm) -> Result<Self> {
        let p = comm.size();
        if p > 1 && !algorithm.supports(p) {
            return Err(CoreError::UnsupportedTopology(format!("{algorithm} cannot run on {p} ranks")).into());
        }
        let estimate_wait = comm.config().recv_timeout;
        Ok(AllreduceContext {
            comm,
            algorithm,
            iteration: 0,
            tau: Duration::from_millis(1),
            monitor: None,
            estimate_wait,
            check_agreement: false,
            validated: HashMap::new(),
        })
    }

    pub fn with_monitor(mut self, monitor: Arc<Monitor>) -> Self {
        self.monitor = Some(monitor);
        self
    }

    pub fn with_tau(mut self, tau: Duration) -> Self {
        self.tau = tau;
        self
    }

    pub fn communicator(&self) -> &Arc<Communicator> {
        &self.comm
    }

    fn plan(&mut self) -> Result<(Arc<Schedule>, bool)> {
        let p = self.comm.size();
        let estimate = match (&self.monitor, self.algorithm.is_arrival_aware()) {
            (Some(m), true) => {
                let it = m.current_iteration();
                m.wait_settled(it, self.estimate_wait).vector()
            }
            _ => None,
        };
        let used = estimate.is_some();
        let schedule = match estimate {
            Some(arrivals) => {
                let tau = self.tau.as_secs_f64().max(1e-9);
                build_schedule(self.algorithm, &arrivals, tau)?
            }
            None => balanced_schedule(self.algorithm, p)?,
        };
        let key = digest(&schedule);
        if let Some(s) = self.validated.get(&key) {
            return Ok((s.clone(), used));
        }
        let report = validate_schedule(&schedule);
        if let Some(v) = report.violation {
            return Err(CommError::Internal(format!("refusing invalid {} schedule: {v}", self.algorithm)));
        }
        let s = Arc::new(schedule);
        self.validated.insert(key, s.clone());
        Ok((s, used))
    }

    /// In-place all-reduce of `data` across all ranks.
    pub fn allreduce<E: Element>(&mut self, data: &mut [E], op: ReduceOp) -> Result<AllreduceOutcome> {
        let arrival = Instant::now();
        let p = self.comm.size();
        let me = self.comm.rank();
        if p == 1 {
            return Ok(AllreduceOutcome { arrival, finish: Instant::now(), used_estimate: false, order: vec![0] });
        }
        let parts = partition_segments(data.len(), p)?;
        let (schedule, used_estimate) = self.plan()?;
        if self.check_agreement {
            let mine = digest(&schedule).to_le_bytes().to_vec();
            let all = self.comm.allgather(mine.clone())?;
            if let Some(r) = all.iter().position(|d| *d != mine) {
                return Err(CommError::Internal(format!("rank {r} derived a different schedule")));
            }
        }
        let iteration = self.iteration;
        self.iteration = self.iteration.wrapping_add(1);

        let transport = self.comm.transport().clone();
        let cfg = self.comm.config().clone();
        let assignment = &schedule.assignment;
        let id = assignment.new_id_of[me];
        let mut scratch = vec![E::zero(); parts.seg_len(0)];
        let mut outstanding: HashMap<usize, SendTicket> = HashMap::new();

        for step in &schedule.steps[id] {
            let peer = assignment.old_rank_of[step.peer];
            let range = parts.range(step.segment);
            let phase = PhaseTag::from(step.phase);
            match step.kind {
                StepKind::SendSegment => {
                    if let Some(t) = outstanding.remove(&peer) {
                        t.wait(peer, cfg.send_timeout)?;
                    }
                    let payload = encode_elements(&data[range]);
                    let frame = Frame::new(MsgType::Data, phase, iteration, step.segment as u32, payload);
                    outstanding.insert(peer, transport.send(peer, frame)?);
                }
                kind => {
                    let key = MatchKey::new(MsgType::Data, phase, iteration);
                    let frame = transport.recv(peer, key, cfg.recv_timeout)?;
                    if frame.segment as usize != step.segment {
                        return Err(CommError::Protocol(format!(
                            "rank {me}: expected segment {} from rank {peer}, got {}",
                            step.segment, frame.segment
                        )));
                    }
                    let n = range.len();
                    let ok = if kind == StepKind::RecvReduce {
                        let ok = decode_elements(&frame.payload, &mut scratch[..n]);
                        if ok {
                            reduce_into(&mut data[range], &scratch[..n], op)?;
                        }
                        ok
                    } else {
                        decode_elements(&frame.payload, &mut data[range])
                    };
                    if !ok {
                        return Err(CommError::Protocol(format!(
                            "rank {me}: segment {} from rank {peer} has {} bytes, expected {}",
                            step.segment,
                            frame.payload.len(),
                            n * E::BYTES
                        )));
                    }
                }
            }
        }
        for (peer, t) in outstanding {
            t.wait(peer, cfg.send_timeout)?;
        }
        Ok(AllreduceOutcome {
            arrival,
            finish: Instant::now(),
            used_estimate,
            order: assignment.old_rank_of.clone(),
        })
    }
}

pub const SUM_RELATIVE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessReport {
    pub pass: bool,
    pub worst_index: Option<usize>,
    pub worst_error: f64,
}

/// Compare `data` against the serial fold of `inputs` (rank order).
pub fn check_correctness<E: Element>(data: &[E], inputs: &[Vec<E>], op: ReduceOp) -> CorrectnessReport {
    let fail = CorrectnessReport { pass: false, worst_index: None, worst_error: f64::INFINITY };
    let Ok(expected) = serial_fold(inputs, op) else { return fail };
    if expected.len() != data.len() {
        return fail;
    }
    compare(data, &expected, op)
}

/// Compare `data` against an already folded reference.
pub fn compare<E: Element>(data: &[E], expected: &[E], op: ReduceOp) -> CorrectnessReport {
    let mut worst = 0.0f64;
    let mut worst_index = None;
    for (i, (&g, &x)) in data.iter().zip(expected).enumerate() {
        let (g, x) = (g.to_f64().unwrap_or(f64::NAN), x.to_f64().unwrap_or(f64::NAN));
        let err = if op.is_exact() {
            if g == x || (g.is_nan() && x.is_nan()) {
                0.0
            } else {
                f64::INFINITY
            }
        } else if g == x {
            0.0
        } else {
            (g - x).abs() / x.abs().max(f64::MIN_POSITIVE)
        };
        if err.is_nan() || err > worst {
            worst = if err.is_nan() { f64::INFINITY } else { err };
            worst_index = Some(i);
        }
    }
    let limit = if op.is_exact() { 0.0 } else { SUM_RELATIVE_TOLERANCE };
    CorrectnessReport { pass: data.len() == expected.len() && worst <= limit, worst_index, worst_error: worst }
}

/// Segment time from warm-up round trips: half the median RTT plus the
/// measured cost of reducing one segment.
pub fn calibrate_tau<E: Element>(rtts: &[Duration], seg_len: usize, op: ReduceOp) -> Duration {
    let mut sorted = rtts.to_vec();
    sorted.sort();
    let half_rtt = sorted.get(sorted.len() / 2).map(|d| *d / 2).unwrap_or_default();
    let mut a = vec![E::one(); seg_len.max(1)];
    let b = vec![E::one(); seg_len.max(1)];
    let mut best = Duration::MAX;
    for _ in 0..3 {
        let t0 = Instant::now();
        let _ = reduce_into(&mut a, &b, op);
        best = best.min(t0.elapsed());
    }
    std::hint::black_box(&a);
    half_rtt + best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correctness_verdicts() {
        let inputs = vec![vec![1.0f32, 2.0, 3.0], vec![0.5, 0.25, 4.0]];
        let good = vec![1.5f32, 2.25, 7.0];
        assert!(check_correctness(&good, &inputs, ReduceOp::Sum).pass);
        let mut bad = good.clone();
        bad[1] *= 1.01;
        let r = check_correctness(&bad, &inputs, ReduceOp::Sum);
        assert!(!r.pass);
        assert_eq!(r.worst_index, Some(1));
        let maxed = vec![1.0f32, 2.0, 4.0];
        assert!(check_correctness(&maxed, &inputs, ReduceOp::Max).pass);
        let mut off = maxed.clone();
        off[2] = f32::from_bits(off[2].to_bits() + 1);
        assert!(!check_correctness(&off, &inputs, ReduceOp::Max).pass);
        assert!(!check_correctness(&good[..2], &inputs, ReduceOp::Sum).pass);
    }

    #[test]
    fn tau_from_rtts() {
        let rtts = [Duration::from_micros(100), Duration::from_micros(300), Duration::from_micros(200)];
        let tau = calibrate_tau::<f32>(&rtts, 1000, ReduceOp::Sum);
        assert!(tau >= Duration::from_micros(100));
        assert!(tau < Duration::from_millis(50));
    }
}
