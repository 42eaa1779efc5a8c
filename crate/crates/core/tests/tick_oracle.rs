//! Cross-check of the event simulator against a slot-by-slot reference
//! written independently: every tick, ranks run whatever is runnable, then
//! each idle directed edge starts its oldest queued segment.

use std::collections::VecDeque;

use papred_core::*;
use proptest::prelude::*;

fn tick_total(s: &Schedule, pap: &[i64]) -> i64 {
    let p = s.size();
    let arr: Vec<i64> = s.assignment.to_sorted(pap);
    let t0 = *arr.iter().min().unwrap();
    let mut pc = vec![0usize; p];
    // per directed edge: queued (segment, phase); in flight until tick
    let mut queued: Vec<VecDeque<(usize, Phase)>> = vec![VecDeque::new(); p * p];
    let mut busy_until = vec![i64::MIN; p * p];
    // landed per receiver: (from, segment, phase, landed_at)
    let mut landed: Vec<Vec<(usize, usize, Phase)>> = vec![Vec::new(); p];
    let mut last = arr.clone();
    let mut t = t0;
    while (0..p).any(|r| pc[r] < s.steps[r].len()) || queued.iter().any(|q| !q.is_empty()) {
        loop {
            let mut moved = false;
            for r in 0..p {
                if t < arr[r] {
                    continue;
                }
                while let Some(st) = s.steps[r].get(pc[r]) {
                    if st.is_send() {
                        queued[r * p + st.peer].push_back((st.segment, st.phase));
                    } else {
                        let want = (st.peer, st.segment, st.phase);
                        let Some(pos) = landed[r].iter().position(|&m| m == want) else { break };
                        landed[r].remove(pos);
                        last[r] = last[r].max(t);
                    }
                    pc[r] += 1;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        for from in 0..p {
            for to in 0..p {
                let e = from * p + to;
                if busy_until[e] <= t {
                    if let Some((seg, ph)) = queued[e].pop_front() {
                        busy_until[e] = t + 1;
                        last[from] = last[from].max(t + 1);
                        pending_land(&mut landed, to, from, seg, ph);
                    }
                }
            }
        }
        t += 1;
        assert!(t < t0 + 100_000, "tick oracle stuck");
    }
    last.iter().max().unwrap() - t0
}

// a segment started at tick t is visible to the receiver from tick t+1 on;
// receivers only look at `landed` in later ticks, so pushing now is enough
fn pending_land(landed: &mut [Vec<(usize, usize, Phase)>], to: usize, from: usize, seg: usize, ph: Phase) {
    landed[to].push((from, seg, ph));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn event_and_tick_simulators_agree(p in 2usize..9, raw in proptest::collection::vec(0i64..25, 9)) {
        let a = &raw[..p];
        for alg in Algorithm::ALL.into_iter().filter(|x| x.supports(p)) {
            let s = build_schedule(alg, a, 1).unwrap();
            let ev = simulate(&s, a).unwrap().total;
            prop_assert_eq!(ev, tick_total(&s, a), "{} {:?}", alg, a);
        }
    }
}
