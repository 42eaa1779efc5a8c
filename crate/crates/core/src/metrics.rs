//! Arrival/exit patterns and elapsed-time statistics.

use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::scalar::{max_of, min_of, TimeValue};

/// Per-rank arrival times `a_i`, indexed by original rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PapVector<T>(pub Vec<T>);

/// Per-rank finish times `f_i`, indexed by original rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PepVector<T>(pub Vec<T>);

impl<T: TimeValue> PapVector<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `max a - min a`, or zero for an empty vector.
    pub fn spread(&self) -> T {
        let mut it = self.0.iter().copied();
        let Some(first) = it.next() else {
            return T::zero();
        };
        let (lo, hi) = it.fold((first, first), |(lo, hi), x| (min_of(lo, x), max_of(hi, x)));
        hi - lo
    }

    pub fn earliest(&self) -> Option<T> {
        self.0.iter().copied().reduce(min_of)
    }

    pub fn latest(&self) -> Option<T> {
        self.0.iter().copied().reduce(max_of)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElapsedStats<T> {
    pub elapsed: Vec<T>,
    pub mean: T,
    pub imbalance_factor: T,
}

pub fn elapsed_stats<T: Float + TimeValue>(pap: &PapVector<T>, pep: &PepVector<T>, delta: T) -> Result<ElapsedStats<T>> {
    if pap.0.len() != pep.0.len() {
        return Err(CoreError::InvalidArgument(format!(
            "arrival/finish length mismatch: {} vs {}",
            pap.0.len(),
            pep.0.len()
        )));
    }
    if pap.0.is_empty() {
        return Err(CoreError::InvalidArgument("empty pattern".into()));
    }
    if !(delta > T::zero()) {
        return Err(CoreError::InvalidArgument("delta must be positive".into()));
    }
    let mut elapsed = Vec::with_capacity(pap.0.len());
    for (i, (&a, &f)) in pap.0.iter().zip(&pep.0).enumerate() {
        if !a.is_finite() || !f.is_finite() {
            return Err(CoreError::InvalidMeasurement(format!("rank {i}: non-finite timestamp")));
        }
        if f < a {
            return Err(CoreError::InvalidMeasurement(format!("rank {i}: finish precedes arrival")));
        }
        elapsed.push(f - a);
    }
    let n = T::from(elapsed.len()).expect("rank count fits the scalar");
    let mean = elapsed.iter().fold(T::zero(), |s, &e| s + e) / n;
    Ok(ElapsedStats { elapsed, mean, imbalance_factor: pap.spread() / delta })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElapsedBounds<T> {
    pub lower: T,
    pub upper: T,
    pub max_saving: T,
}

/// Lower/upper bounds on the mean elapsed time given the latest (`a_k`) and
/// earliest (`a_o`) arrivals, the point-to-point time `delta` and the balanced
/// operation time `big_delta`.
pub fn elapsed_bounds<T: TimeValue>(a_k: T, a_o: T, delta: T, big_delta: T) -> Result<ElapsedBounds<T>> {
    if !(delta > T::zero()) {
        return Err(CoreError::InvalidArgument("delta must be positive".into()));
    }
    if big_delta < delta {
        return Err(CoreError::InvalidArgument("Delta must not be below delta".into()));
    }
    if a_k < a_o {
        return Err(CoreError::InvalidArgument("latest arrival precedes earliest".into()));
    }
    let skew = a_k - a_o;
    Ok(ElapsedBounds { lower: skew + delta, upper: skew + big_delta, max_saving: big_delta - delta })
}

/// Mean and sample standard deviation. The deviation is `None` for fewer than
/// two samples.
pub fn mean_std<T: Float>(xs: &[T]) -> Option<(T, Option<T>)> {
    if xs.is_empty() {
        return None;
    }
    let n = T::from(xs.len()).unwrap();
    let mean = xs.iter().fold(T::zero(), |s, &x| s + x) / n;
    if xs.len() < 2 {
        return Some((mean, None));
    }
    let ss = xs.iter().fold(T::zero(), |s, &x| s + (x - mean) * (x - mean));
    Some((mean, Some((ss / (n - T::one())).sqrt())))
}
