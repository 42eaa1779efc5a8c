//! Per-rank step schedules for the supported all-reduce algorithms.
//!
//! Schedules are expressed in "new id" space: ids are positions in the
//! arrival-sorted order, and `assignment` maps them back to transport ranks.
//! Baseline algorithms use the identity assignment.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{CoreError, Result};
use crate::scalar::TimeValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Ring,
    Linear,
    Rabenseifner,
    Slt,
    Prr,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Ring, Algorithm::Linear, Algorithm::Rabenseifner, Algorithm::Slt, Algorithm::Prr];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ring => "ring",
            Algorithm::Linear => "linear",
            Algorithm::Rabenseifner => "rabenseifner",
            Algorithm::Slt => "slt",
            Algorithm::Prr => "prr",
        }
    }

    /// Whether the schedule depends on the arrival pattern.
    pub fn is_arrival_aware(self) -> bool {
        matches!(self, Algorithm::Slt | Algorithm::Prr)
    }

    pub fn supports(self, p: usize) -> bool {
        match self {
            Algorithm::Rabenseifner => p >= 2 && p.is_power_of_two(),
            _ => p >= 2,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::InvalidArgument(format!("unknown algorithm {s:?}")))
    }
}

/// How the receiver treats a message: fold it in, or overwrite with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Reduce,
    Override,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Reduce => "reduce",
            Phase::Override => "override",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    SendSegment,
    RecvReduce,
    RecvOverride,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::SendSegment => "send",
            StepKind::RecvReduce => "recv-reduce",
            StepKind::RecvOverride => "recv-override",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Step {
    pub kind: StepKind,
    pub segment: usize,
    pub peer: usize,
    /// Message phase: for sends, how the receiver will treat the segment.
    pub phase: Phase,
}

impl Step {
    pub fn send(segment: usize, peer: usize, phase: Phase) -> Self {
        Step { kind: StepKind::SendSegment, segment, peer, phase }
    }

    pub fn recv_reduce(segment: usize, peer: usize) -> Self {
        Step { kind: StepKind::RecvReduce, segment, peer, phase: Phase::Reduce }
    }

    pub fn recv_override(segment: usize, peer: usize) -> Self {
        Step { kind: StepKind::RecvOverride, segment, peer, phase: Phase::Override }
    }

    pub fn is_send(&self) -> bool {
        self.kind == StepKind::SendSegment
    }
}

/// Permutation between transport ranks and arrival-sorted ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SortedAssignment {
    pub new_id_of: Vec<usize>,
    pub old_rank_of: Vec<usize>,
}

impl SortedAssignment {
    pub fn identity(p: usize) -> Self {
        SortedAssignment { new_id_of: (0..p).collect(), old_rank_of: (0..p).collect() }
    }

    pub fn from_order(old_rank_of: Vec<usize>) -> Result<Self> {
        let p = old_rank_of.len();
        let mut new_id_of = vec![usize::MAX; p];
        for (id, &r) in old_rank_of.iter().enumerate() {
            if r >= p || new_id_of[r] != usize::MAX {
                return Err(CoreError::InvalidArgument(format!("not a permutation: {old_rank_of:?}")));
            }
            new_id_of[r] = id;
        }
        Ok(SortedAssignment { new_id_of, old_rank_of })
    }

    pub fn len(&self) -> usize {
        self.old_rank_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_rank_of.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.old_rank_of.iter().enumerate().all(|(i, &r)| i == r)
    }

    /// Reorder a per-rank vector into new-id order.
    pub fn to_sorted<T: Copy>(&self, by_rank: &[T]) -> Vec<T> {
        self.old_rank_of.iter().map(|&r| by_rank[r]).collect()
    }

    /// Reorder a per-new-id vector back into rank order.
    pub fn to_ranks<T: Copy>(&self, by_id: &[T]) -> Vec<T> {
        self.new_id_of.iter().map(|&id| by_id[id]).collect()
    }
}

/// Stable ascending sort by arrival; ties keep ascending rank order.
pub fn sort_by_arrival<T: PartialOrd>(arrivals: &[T]) -> SortedAssignment {
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by(|&x, &y| arrivals[x].partial_cmp(&arrivals[y]).unwrap_or(Ordering::Equal));
    SortedAssignment::from_order(order).expect("sorting yields a permutation")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub algorithm: Algorithm,
    pub steps: Vec<Vec<Step>>,
    pub assignment: SortedAssignment,
}

impl Schedule {
    pub fn size(&self) -> usize {
        self.steps.len()
    }

    pub fn with_assignment(mut self, assignment: SortedAssignment) -> Result<Self> {
        if assignment.len() != self.size() {
            return Err(CoreError::InvalidArgument(format!(
                "assignment for {} ranks applied to a {}-rank schedule",
                assignment.len(),
                self.size()
            )));
        }
        self.assignment = assignment;
        Ok(self)
    }

    pub fn send_count(&self, id: usize) -> usize {
        self.steps[id].iter().filter(|s| s.is_send()).count()
    }

    pub fn recv_count(&self, id: usize) -> usize {
        self.steps[id].iter().filter(|s| !s.is_send()).count()
    }

    pub fn total_sends(&self) -> usize {
        (0..self.size()).map(|id| self.send_count(id)).sum()
    }

    /// Directed (from, to) id pairs that carry at least one message.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .steps
            .iter()
            .enumerate()
            .flat_map(|(id, st)| st.iter().filter(|s| s.is_send()).map(move |s| (id, s.peer)))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// One `rank,phase,kind,segment,peer` line per step, ids in new-id space.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, st) in self.steps.iter().enumerate() {
            for s in st {
                let _ = writeln!(out, "{},{},{},{},{}", id, s.phase.name(), s.kind.name(), s.segment, s.peer);
            }
        }
        out
    }
}

fn check_size(p: usize) -> Result<()> {
    if p < 2 {
        return Err(CoreError::InvalidArgument(format!("need at least 2 ranks, got {p}")));
    }
    Ok(())
}

fn wrap(x: isize, p: usize) -> usize {
    x.rem_euclid(p as isize) as usize
}

pub fn ring_schedule(p: usize) -> Result<Schedule> {
    check_size(p)?;
    let steps = (0..p)
        .map(|i| {
            let (succ, pred) = ((i + 1) % p, (i + p - 1) % p);
            let i = i as isize;
            let mut st = Vec::with_capacity(4 * (p - 1));
            for r in 0..p as isize - 1 {
                st.push(Step::send(wrap(i - r, p), succ, Phase::Reduce));
                st.push(Step::recv_reduce(wrap(i - r - 1, p), pred));
            }
            for r in 0..p as isize - 1 {
                st.push(Step::send(wrap(i + 1 - r, p), succ, Phase::Override));
                st.push(Step::recv_override(wrap(i - r, p), pred));
            }
            st
        })
        .collect();
    Ok(Schedule { algorithm: Algorithm::Ring, steps, assignment: SortedAssignment::identity(p) })
}

fn pipeline_steps(p: usize) -> Vec<Vec<Step>> {
    (0..p)
        .map(|id| {
            let succ = (id + 1) % p;
            let mut st = Vec::new();
            for si in 0..p {
                if id != 0 {
                    st.push(Step::recv_reduce(si, id - 1));
                }
                // the tail's sends already carry final data back to id 0
                let phase = if id == p - 1 { Phase::Override } else { Phase::Reduce };
                st.push(Step::send(si, succ, phase));
            }
            for si in 0..p {
                if id != p - 1 {
                    st.push(Step::recv_override(si, (id + p - 1) % p));
                }
                if id + 2 < p {
                    st.push(Step::send(si, id + 1, Phase::Override));
                }
            }
            st
        })
        .collect()
}

/// Segmented linear pipeline over ranks in their given order.
pub fn linear_schedule(p: usize) -> Result<Schedule> {
    check_size(p)?;
    Ok(Schedule { algorithm: Algorithm::Linear, steps: pipeline_steps(p), assignment: SortedAssignment::identity(p) })
}

/// Same pipeline as [`linear_schedule`]; the caller attaches the
/// arrival-sorted assignment so the latest rank sits at the tail.
pub fn slt_schedule(p: usize) -> Result<Schedule> {
    check_size(p)?;
    Ok(Schedule { algorithm: Algorithm::Slt, steps: pipeline_steps(p), assignment: SortedAssignment::identity(p) })
}

/// Recursive halving reduce-scatter followed by recursive doubling allgather.
pub fn rabenseifner_schedule(p: usize) -> Result<Schedule> {
    check_size(p)?;
    if !p.is_power_of_two() {
        return Err(CoreError::UnsupportedTopology(format!("{p} ranks is not a power of two")));
    }
    let steps = (0..p)
        .map(|r| {
            let mut st = Vec::new();
            let (mut lo, mut hi) = (0, p);
            // (partner, kept range, given range) per halving round
            let mut rounds = Vec::new();
            let mut d = p / 2;
            while d >= 1 {
                let partner = r ^ d;
                let mid = (lo + hi) / 2;
                let (keep, give) = if r & d == 0 { ((lo, mid), (mid, hi)) } else { ((mid, hi), (lo, mid)) };
                st.extend((give.0..give.1).map(|j| Step::send(j, partner, Phase::Reduce)));
                st.extend((keep.0..keep.1).map(|j| Step::recv_reduce(j, partner)));
                rounds.push((partner, keep, give));
                (lo, hi) = keep;
                d /= 2;
            }
            for &(partner, keep, give) in rounds.iter().rev() {
                st.extend((keep.0..keep.1).map(|j| Step::send(j, partner, Phase::Override)));
                st.extend((give.0..give.1).map(|j| Step::recv_override(j, partner)));
            }
            st
        })
        .collect();
    Ok(Schedule { algorithm: Algorithm::Rabenseifner, steps, assignment: SortedAssignment::identity(p) })
}

/// Pre-step counts `k_i` for arrivals given in new-id (sorted) order.
pub fn prr_presteps<T: TimeValue>(sorted: &[T], tau: T) -> Result<Vec<usize>> {
    let p = sorted.len();
    if !(tau > T::zero()) {
        return Err(CoreError::InvalidArgument("tau must be positive".into()));
    }
    check_size(p)?;
    if sorted.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoreError::InvalidArgument("arrivals must be sorted ascending".into()));
    }
    let last = sorted[p - 1];
    let mut k = vec![0usize; p];
    // threshold = (k_{i+1} + 1) * tau, kept as a running sum
    let mut threshold = tau;
    for i in (0..p - 1).rev() {
        if last - sorted[i + 1] >= threshold {
            k[i] = k[i + 1] + 1;
            threshold = threshold + tau;
        } else {
            k[i] = k[i + 1];
        }
    }
    Ok(k)
}

/// First sender `sp_j` and last reducer `rp_j` of every segment.
pub fn prr_segment_owners(presteps: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let p = presteps.len();
    let mut sp = vec![0; p];
    let mut i = 0;
    for (j, slot) in sp.iter_mut().enumerate() {
        while i + presteps[i] < j {
            i += 1;
        }
        *slot = i;
    }
    let rp = sp.iter().map(|&s| (s + p - 1) % p).collect();
    (sp, rp)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrrPlan {
    pub presteps: Vec<usize>,
    pub first_sender: Vec<usize>,
    pub last_reducer: Vec<usize>,
    pub start_segment: Vec<usize>,
}

impl PrrPlan {
    pub fn from_presteps(presteps: Vec<usize>) -> Result<Self> {
        let p = presteps.len();
        check_size(p)?;
        if presteps[p - 1] != 0 {
            return Err(CoreError::InvalidArgument("last rank must have no pre-steps".into()));
        }
        for i in 0..p - 1 {
            let (a, b) = (presteps[i], presteps[i + 1]);
            if a < b || a - b > 1 || a > p - 1 {
                return Err(CoreError::InvalidArgument(format!("invalid pre-step vector {presteps:?}")));
            }
        }
        let (first_sender, last_reducer) = prr_segment_owners(&presteps);
        let start_segment = presteps.iter().enumerate().map(|(id, k)| (id + k) % p).collect();
        Ok(PrrPlan { presteps, first_sender, last_reducer, start_segment })
    }

    pub fn balanced(p: usize) -> Result<Self> {
        Self::from_presteps(vec![0; p])
    }

    pub fn size(&self) -> usize {
        self.presteps.len()
    }
}

/// Pre-reduced ring.
///
/// A final reducer ships its finished segment straight away as an override
/// message and skips it in the second loop; every other segment follows the
/// regular ring flow shifted by the pre-steps.
pub fn prr_schedule(plan: &PrrPlan) -> Result<Schedule> {
    let p = plan.size();
    let plan = PrrPlan::from_presteps(plan.presteps.clone())
        .ok()
        .filter(|fresh| fresh == plan)
        .ok_or_else(|| CoreError::InvalidArgument("inconsistent pre-reduced ring plan".into()))?;
    let (sp, rp) = (&plan.first_sender, &plan.last_reducer);
    let steps = (0..p)
        .map(|id| {
            let (succ, pred) = ((id + 1) % p, (id + p - 1) % p);
            let start = plan.start_segment[id];
            let mut st = Vec::new();
            let mut si = start;
            for _ in 0..p {
                if sp[si] != id {
                    st.push(Step::recv_reduce(si, pred));
                }
                let phase = if rp[si] == id { Phase::Override } else { Phase::Reduce };
                st.push(Step::send(si, succ, phase));
                si = (si + p - 1) % p;
            }
            for _ in 0..p {
                if rp[si] != id {
                    st.push(Step::recv_override(si, pred));
                    if (rp[si] + p - 1) % p != id {
                        st.push(Step::send(si, succ, Phase::Override));
                    }
                }
                si = (si + p - 1) % p;
            }
            st
        })
        .collect();
    Ok(Schedule { algorithm: Algorithm::Prr, steps, assignment: SortedAssignment::identity(p) })
}

/// Schedule for `algorithm` with no arrival information: identity order and
/// zero pre-steps.
pub fn balanced_schedule(algorithm: Algorithm, p: usize) -> Result<Schedule> {
    match algorithm {
        Algorithm::Ring => ring_schedule(p),
        Algorithm::Linear => linear_schedule(p),
        Algorithm::Rabenseifner => rabenseifner_schedule(p),
        Algorithm::Slt => slt_schedule(p),
        Algorithm::Prr => prr_schedule(&PrrPlan::balanced(p)?),
    }
}

/// Schedule for `algorithm` given per-rank arrivals (rank order) and the
/// segment time `tau` in the same unit.
pub fn build_schedule<T: TimeValue>(algorithm: Algorithm, arrivals: &[T], tau: T) -> Result<Schedule> {
    let p = arrivals.len();
    match algorithm {
        Algorithm::Slt => slt_schedule(p)?.with_assignment(sort_by_arrival(arrivals)),
        Algorithm::Prr => {
            let assignment = sort_by_arrival(arrivals);
            let sorted = assignment.to_sorted(arrivals);
            let plan = PrrPlan::from_presteps(prr_presteps(&sorted, tau)?)?;
            prr_schedule(&plan)?.with_assignment(assignment)
        }
        other => balanced_schedule(other, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sort_examples() {
        assert!(sort_by_arrival(&[0, 0, 0, 0]).is_identity());
        let a = sort_by_arrival(&[4, 0, 0, 0]);
        assert_eq!(a.new_id_of[0], 3);
        assert_eq!(a.old_rank_of, vec![1, 2, 3, 0]);
        assert_eq!(sort_by_arrival(&[3, 1, 2]).new_id_of, vec![2, 0, 1]);
    }

    #[test]
    fn assignment_reorders() {
        let a = sort_by_arrival(&[3.0, 1.0, 2.0]);
        let sorted = a.to_sorted(&[30, 10, 20]);
        assert_eq!(sorted, vec![10, 20, 30]);
        assert_eq!(a.to_ranks(&sorted), vec![30, 10, 20]);
        assert!(SortedAssignment::from_order(vec![0, 0]).is_err());
    }

    #[test]
    fn slt_two_ranks() {
        let s = slt_schedule(2).unwrap();
        assert_eq!(
            s.steps[0],
            vec![
                Step::send(0, 1, Phase::Reduce),
                Step::send(1, 1, Phase::Reduce),
                Step::recv_override(0, 1),
                Step::recv_override(1, 1),
            ]
        );
        assert_eq!(
            s.steps[1],
            vec![
                Step::recv_reduce(0, 0),
                Step::send(0, 0, Phase::Override),
                Step::recv_reduce(1, 0),
                Step::send(1, 0, Phase::Override),
            ]
        );
    }

    #[test]
    fn slt_loop_shape() {
        let s = slt_schedule(4).unwrap();
        // id 0: P sends, P override receives
        assert_eq!(s.send_count(0), 4 + 4);
        assert_eq!(s.recv_count(0), 4);
        // id 2 forwards nothing in the override loop
        let tail = &s.steps[2][8..];
        assert_eq!(tail.len(), 4);
        assert!(tail.iter().all(|st| st.kind == StepKind::RecvOverride));
        // the last id receives P times and sends P times, nothing in the override loop
        assert_eq!(s.steps[3].len(), 8);
    }

    #[test]
    fn ring_shape() {
        let s = ring_schedule(2).unwrap();
        assert_eq!(s.steps[0].len(), 4);
        let s = ring_schedule(5).unwrap();
        for id in 0..5 {
            assert_eq!(s.send_count(id), 8);
            assert_eq!(s.recv_count(id), 8);
            assert_eq!(s.steps[id][0], Step::send(id, (id + 1) % 5, Phase::Reduce));
        }
        assert!(ring_schedule(1).is_err());
    }

    #[test]
    fn presteps_examples() {
        assert_eq!(prr_presteps(&[0, 0, 0, 0], 1).unwrap(), vec![0, 0, 0, 0]);
        assert_eq!(prr_presteps(&[0, 0, 0, 2], 1).unwrap(), vec![2, 1, 0, 0]);
        assert_eq!(prr_presteps(&[0, 0, 10], 1).unwrap(), vec![1, 0, 0]);
        assert_eq!(prr_presteps(&[0.0, 0.0, 0.0, 0.2], 0.1).unwrap(), vec![2, 1, 0, 0]);
        assert!(prr_presteps(&[0, 1], 0).is_err());
        assert!(prr_presteps(&[2, 1], 1).is_err());
    }

    #[test]
    fn owners_examples() {
        assert_eq!(prr_segment_owners(&[0, 0, 0, 0]), (vec![0, 1, 2, 3], vec![3, 0, 1, 2]));
        assert_eq!(prr_segment_owners(&[2, 1, 0, 0]), (vec![0, 0, 0, 3], vec![3, 3, 3, 2]));
    }

    #[test]
    fn plan_rejects_bad_presteps() {
        assert!(PrrPlan::from_presteps(vec![0, 1]).is_err());
        assert!(PrrPlan::from_presteps(vec![2, 0, 0]).is_err());
        assert!(PrrPlan::from_presteps(vec![0, 1, 0]).is_err());
        let plan = PrrPlan::from_presteps(vec![2, 1, 0, 0]).unwrap();
        assert_eq!(plan.start_segment, vec![2, 2, 2, 3]);
        let mut broken = plan.clone();
        broken.first_sender[1] = 2;
        assert!(prr_schedule(&broken).is_err());
    }

    #[test]
    fn prr_balanced_is_ring() {
        for p in 2..=6 {
            assert_eq!(prr_schedule(&PrrPlan::balanced(p).unwrap()).unwrap().steps, ring_schedule(p).unwrap().steps);
        }
    }

    #[test]
    fn rabenseifner_rounds() {
        let s = rabenseifner_schedule(4).unwrap();
        for id in 0..4 {
            // 2 halving rounds: 2 + 1 segments out, same in; doubling mirrors
            assert_eq!(s.send_count(id), 6);
            assert_eq!(s.recv_count(id), 6);
        }
        let s = rabenseifner_schedule(2).unwrap();
        assert_eq!(
            s.steps[1],
            vec![
                Step::send(0, 0, Phase::Reduce),
                Step::recv_reduce(1, 0),
                Step::send(1, 0, Phase::Override),
                Step::recv_override(0, 0),
            ]
        );
        assert!(matches!(rabenseifner_schedule(6), Err(CoreError::UnsupportedTopology(_))));
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("tree".parse::<Algorithm>().is_err());
        assert!(!Algorithm::Rabenseifner.supports(6));
    }

    #[test]
    fn dump_format() {
        let d = ring_schedule(2).unwrap().dump();
        let first: Vec<&str> = d.lines().take(2).collect();
        assert_eq!(first, vec!["0,reduce,send,0,1", "0,reduce,recv-reduce,1,1"]);
        assert_eq!(d.lines().count(), 8);
    }

    #[test]
    fn build_uses_arrivals() {
        let s = build_schedule(Algorithm::Slt, &[4, 0, 0, 0], 1).unwrap();
        assert_eq!(s.assignment.new_id_of, vec![3, 0, 1, 2]);
        let s = build_schedule(Algorithm::Prr, &[2, 0, 0, 0], 1).unwrap();
        assert_eq!(s.assignment.old_rank_of, vec![1, 2, 3, 0]);
        let b = build_schedule(Algorithm::Ring, &[9, 0, 0, 0], 1).unwrap();
        assert!(b.assignment.is_identity());
    }
}
