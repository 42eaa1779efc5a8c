//! Symbolic contribution-set oracle for schedules.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use fixedbitset::FixedBitSet;

use crate::schedule::{Phase, Schedule, StepKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MalformedStep { rank: usize, step: usize },
    /// A receive that can never be matched: missing send or a wait cycle.
    UnmatchedReceive { rank: usize, step: usize, blocked: Vec<(usize, usize)> },
    UnmatchedSend { rank: usize, step: usize },
    /// Matched a send that is not next in its (sender, receiver, phase)
    /// stream, so FIFO delivery would hand over a different segment.
    OutOfOrder { rank: usize, step: usize, segment: usize },
    DoubleContribution { rank: usize, step: usize, segment: usize },
    Incomplete { rank: usize, segment: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MalformedStep { rank, step } => write!(f, "rank {rank} step {step}: malformed step"),
            Violation::UnmatchedReceive { rank, step, blocked } => {
                write!(f, "rank {rank} step {step}: unmatched receive (blocked: {blocked:?})")
            }
            Violation::UnmatchedSend { rank, step } => write!(f, "rank {rank} step {step}: send never received"),
            Violation::OutOfOrder { rank, step, segment } => {
                write!(f, "rank {rank} step {step}: segment {segment} is not next in its message stream")
            }
            Violation::DoubleContribution { rank, step, segment } => {
                write!(f, "rank {rank} step {step}: segment {segment} would count a contribution twice")
            }
            Violation::Incomplete { rank, segment } => {
                write!(f, "rank {rank} ends without the full reduction of segment {segment}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub violation: Option<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violation.is_none()
    }
}

struct Msg {
    seq: usize,
    set: FixedBitSet,
    step: usize,
}

type Class = (usize, usize, Phase);

/// Execute `schedule` over contribution sets with unbounded buffering.
///
/// A receive matches the oldest send with the same (sender, phase, segment).
/// In addition the k-th receive of a (sender, receiver, phase) stream must
/// consume the k-th send of that stream, which is what FIFO transports deliver.
pub fn validate_schedule(schedule: &Schedule) -> ValidityReport {
    let violation = run(schedule).err();
    ValidityReport { violation }
}

fn run(schedule: &Schedule) -> Result<(), Violation> {
    let p = schedule.size();
    for (rank, st) in schedule.steps.iter().enumerate() {
        for (step, s) in st.iter().enumerate() {
            if s.peer >= p || s.peer == rank || s.segment >= p {
                return Err(Violation::MalformedStep { rank, step });
            }
        }
    }
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
    let mut queues: HashMap<(Class, usize), VecDeque<Msg>> = HashMap::new();
    let mut sent: HashMap<Class, usize> = HashMap::new();
    let mut received: HashMap<Class, usize> = HashMap::new();
    let mut pc = vec![0usize; p];
    loop {
        let mut progress = false;
        for r in 0..p {
            while let Some(s) = schedule.steps[r].get(pc[r]) {
                match s.kind {
                    StepKind::SendSegment => {
                        let set = hold[r][s.segment].clone();
                        let seq = sent.entry((r, s.peer, s.phase)).or_default();
                        queues.entry(((r, s.peer, s.phase), s.segment)).or_default().push_back(Msg {
                            seq: *seq,
                            set,
                            step: pc[r],
                        });
                        *seq += 1;
                    }
                    kind => {
                        let class = (s.peer, r, s.phase);
                        let Some(msg) = queues.get_mut(&(class, s.segment)).and_then(|q| q.pop_front()) else {
                            break;
                        };
                        let nth = received.entry(class).or_default();
                        if msg.seq != *nth {
                            return Err(Violation::OutOfOrder { rank: r, step: pc[r], segment: s.segment });
                        }
                        *nth += 1;
                        let cur = &mut hold[r][s.segment];
                        if kind == StepKind::RecvReduce {
                            if !cur.is_disjoint(&msg.set) {
                                return Err(Violation::DoubleContribution { rank: r, step: pc[r], segment: s.segment });
                            }
                            cur.union_with(&msg.set);
                        } else {
                            *cur = msg.set;
                        }
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
            let blocked: Vec<(usize, usize)> =
                (0..p).filter(|&r| pc[r] < schedule.steps[r].len()).map(|r| (r, pc[r])).collect();
            let (rank, step) = blocked[0];
            return Err(Violation::UnmatchedReceive { rank, step, blocked });
        }
    }
    if let Some((((from, _, _), _), q)) = queues.iter().filter(|(_, q)| !q.is_empty()).min_by_key(|(k, _)| **k) {
        return Err(Violation::UnmatchedSend { rank: *from, step: q[0].step });
    }
    for (r, segs) in hold.iter().enumerate() {
        for (j, set) in segs.iter().enumerate() {
            if set.count_ones(..) != p {
                return Err(Violation::Incomplete { rank: r, segment: j });
            }
        }
    }
    Ok(())
}
