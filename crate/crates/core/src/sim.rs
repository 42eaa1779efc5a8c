//! Discrete-event tau-model execution of a schedule.
//!
//! Each directed edge carries one segment per tau. Sends are buffered and
//! non-blocking: the sender's clock does not move, but the edge stays busy
//! for one tau. A receive completes when the matching transfer has landed
//! and the receiver has reached the step.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use fixedbitset::FixedBitSet;

use crate::error::CoreError;
use crate::scalar::{max_of, min_of, TimeValue};
use crate::schedule::{Phase, Schedule, Step, StepKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<T> {
    pub step: usize,
    /// Rank clock when the step was reached.
    pub issued: T,
    /// Completion: transfer landed (sends) or data available (receives).
    pub end: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline<T> {
    /// Arrivals in new-id order.
    pub arrivals: Vec<T>,
    /// Per new id, one event per executed step.
    pub events: Vec<Vec<Event<T>>>,
    /// Per new id: the latest completion among the rank's own steps.
    pub finish: Vec<T>,
    pub total: T,
    /// Whether every rank ended holding every contribution for every segment.
    pub provenance_complete: bool,
}

impl<T: TimeValue> Timeline<T> {
    pub fn elapsed(&self) -> Vec<T> {
        self.finish.iter().zip(&self.arrivals).map(|(&f, &a)| f - a).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockedStep {
    pub rank: usize,
    pub index: usize,
    pub step: Step,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    Deadlock { blocked: Vec<BlockedStep> },
    OutOfOrder { rank: usize, index: usize },
    BadPattern(CoreError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Deadlock { blocked } => {
                write!(f, "deadlock;")?;
                for b in blocked {
                    write!(
                        f,
                        " id {} step {} {} seg {} peer {};",
                        b.rank,
                        b.index,
                        b.step.kind.name(),
                        b.step.segment,
                        b.step.peer
                    )?;
                }
                Ok(())
            }
            SimError::OutOfOrder { rank, index } => write!(f, "id {rank} step {index}: out-of-order receive"),
            SimError::BadPattern(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SimError {}

struct Transfer<T> {
    seq: usize,
    done: T,
    set: FixedBitSet,
}

/// Simulate `schedule` with per-rank arrivals `pap` (rank order, tau units).
pub fn simulate<T: TimeValue>(schedule: &Schedule, pap: &[T]) -> Result<Timeline<T>, SimError> {
    let p = schedule.size();
    if pap.len() != p {
        return Err(SimError::BadPattern(CoreError::InvalidArgument(format!(
            "{} arrivals for {} ranks",
            pap.len(),
            p
        ))));
    }
    let arrivals = schedule.assignment.to_sorted(pap);
    let one = T::one();
    let mut clock = arrivals.clone();
    let mut finish = arrivals.clone();
    let mut pc = vec![0usize; p];
    let mut events: Vec<Vec<Event<T>>> = schedule.steps.iter().map(|s| Vec::with_capacity(s.len())).collect();
    let mut link_free: Vec<Option<T>> = vec![None; p * p];
    let mut in_flight: HashMap<((usize, usize, Phase), usize), VecDeque<Transfer<T>>> = HashMap::new();
    let mut sent: HashMap<(usize, usize, Phase), usize> = HashMap::new();
    let mut received: HashMap<(usize, usize, Phase), usize> = HashMap::new();
    let mut hold: Vec<Vec<FixedBitSet>> = (0..p)
        .map(|r| {
            (0..p)
                .map(|_| {
                    let mut b = FixedBitSet::with_capacity(p);
                    b.insert(r);
                    b
                })
                .collect()
        })
        .collect();

    loop {
        let mut progress = false;
        for r in 0..p {
            while let Some(&s) = schedule.steps[r].get(pc[r]) {
                let class = if s.is_send() { (r, s.peer, s.phase) } else { (s.peer, r, s.phase) };
                match s.kind {
                    StepKind::SendSegment => {
                        let edge = r * p + s.peer;
                        let start = match link_free[edge] {
                            Some(free) => max_of(clock[r], free),
                            None => clock[r],
                        };
                        let done = start + one;
                        link_free[edge] = Some(done);
                        let seq = sent.entry(class).or_default();
                        in_flight.entry((class, s.segment)).or_default().push_back(Transfer {
                            seq: *seq,
                            done,
                            set: hold[r][s.segment].clone(),
                        });
                        *seq += 1;
                        finish[r] = max_of(finish[r], done);
                        events[r].push(Event { step: pc[r], issued: clock[r], end: done });
                    }
                    kind => {
                        let Some(t) = in_flight.get_mut(&(class, s.segment)).and_then(|q| q.pop_front()) else {
                            break;
                        };
                        let nth = received.entry(class).or_default();
                        if t.seq != *nth {
                            return Err(SimError::OutOfOrder { rank: r, index: pc[r] });
                        }
                        *nth += 1;
                        let start = clock[r];
                        let end = max_of(t.done, start);
                        clock[r] = end;
                        finish[r] = max_of(finish[r], end);
                        if kind == StepKind::RecvReduce {
                            hold[r][s.segment].union_with(&t.set);
                        } else {
                            hold[r][s.segment] = t.set;
                        }
                        events[r].push(Event { step: pc[r], issued: start, end });
                    }
                }
                pc[r] += 1;
                progress = true;
            }
        }
        if (0..p).all(|r| pc[r] == schedule.steps[r].len()) {
            break;
        }
        if !progress {
            let blocked = (0..p)
                .filter(|&r| pc[r] < schedule.steps[r].len())
                .map(|r| BlockedStep { rank: r, index: pc[r], step: schedule.steps[r][pc[r]] })
                .collect();
            return Err(SimError::Deadlock { blocked });
        }
    }

    let provenance_complete = hold.iter().all(|segs| segs.iter().all(|b| b.count_ones(..) == p));
    let earliest = arrivals.iter().copied().reduce(min_of).expect("at least one rank");
    let latest = finish.iter().copied().reduce(max_of).expect("at least one rank");
    Ok(Timeline { arrivals, events, finish, total: latest - earliest, provenance_complete })
}
