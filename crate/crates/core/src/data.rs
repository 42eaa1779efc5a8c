//! Segmentation of data vectors and element-wise reduction.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{CoreError, Result};
use crate::scalar::Element;

/// Split of `[0, len)` into P contiguous segments.
///
/// The first `len % P` segments carry one extra element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPartition {
    offsets: Vec<usize>,
}

pub fn partition_segments(len: usize, parts: usize) -> Result<SegmentPartition> {
    if parts < 1 {
        return Err(CoreError::InvalidArgument("segment count must be positive".into()));
    }
    if len < parts {
        return Err(CoreError::InvalidArgument(format!(
            "length {len} is smaller than segment count {parts}"
        )));
    }
    let base = len / parts;
    let extra = len % parts;
    let mut offsets = Vec::with_capacity(parts + 1);
    offsets.push(0);
    let mut at = 0;
    for j in 0..parts {
        at += base + usize::from(j < extra);
        offsets.push(at);
    }
    Ok(SegmentPartition { offsets })
}

impl SegmentPartition {
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_len(&self) -> usize {
        self.offsets[self.count()]
    }

    pub fn range(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn seg_len(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.count()).map(|j| self.seg_len(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Sum,
    Max,
    Min,
}

impl ReduceOp {
    #[inline]
    pub fn apply<E: Element>(self, a: E, b: E) -> E {
        match self {
            ReduceOp::Sum => a + b,
            ReduceOp::Max => a.max(b),
            ReduceOp::Min => a.min(b),
        }
    }

    /// Order-insensitive operators are checked for exact equality.
    pub fn is_exact(self) -> bool {
        !matches!(self, ReduceOp::Sum)
    }
}

impl fmt::Display for ReduceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Max => "max",
            ReduceOp::Min => "min",
        })
    }
}

impl FromStr for ReduceOp {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ReduceOp::Sum),
            "max" => Ok(ReduceOp::Max),
            "min" => Ok(ReduceOp::Min),
            other => Err(CoreError::InvalidArgument(format!("unknown operator {other:?}"))),
        }
    }
}

/// `dst[j] = op(dst[j], src[j])`.
pub fn reduce_into<E: Element>(dst: &mut [E], src: &[E], op: ReduceOp) -> Result<()> {
    if dst.len() != src.len() {
        return Err(CoreError::InvalidArgument(format!(
            "segment length mismatch: {} vs {}",
            dst.len(),
            src.len()
        )));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d = op.apply(*d, *s);
    }
    Ok(())
}

/// Serial left fold of all inputs, in the given order.
pub fn serial_fold<E: Element>(inputs: &[Vec<E>], op: ReduceOp) -> Result<Vec<E>> {
    let (first, rest) = inputs
        .split_first()
        .ok_or_else(|| CoreError::InvalidArgument("no inputs to fold".into()))?;
    let mut acc = first.clone();
    for v in rest {
        reduce_into(&mut acc, v, op)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split() {
        assert_eq!(partition_segments(8, 4).unwrap().lengths(), vec![2, 2, 2, 2]);
    }

    #[test]
    fn remainder_goes_first() {
        let p = partition_segments(10, 4).unwrap();
        assert_eq!(p.lengths(), vec![3, 3, 2, 2]);
        assert_eq!(p.offsets(), &[0, 3, 6, 8, 10]);
        assert_eq!(p.range(2), 6..8);
    }

    #[test]
    fn megabyte_split_over_48() {
        let p = partition_segments(1_048_576, 48).unwrap();
        let lens = p.lengths();
        // independent check: 1048576 = 48 * 21845 + 16
        assert_eq!(48 * 21845 + 16, 1_048_576);
        assert_eq!(lens.iter().filter(|&&l| l == 21846).count(), 16);
        assert_eq!(lens.iter().filter(|&&l| l == 21845).count(), 32);
        assert!(lens[..16].iter().all(|&l| l == 21846));
        assert_eq!(lens.iter().sum::<usize>(), 1_048_576);
    }

    #[test]
    fn too_short_rejected() {
        assert!(matches!(partition_segments(3, 4), Err(CoreError::InvalidArgument(_))));
    }

    #[test]
    fn reduce_examples() {
        let mut d = [1.0f32, 2.0];
        reduce_into(&mut d, &[3.0, 4.0], ReduceOp::Sum).unwrap();
        assert_eq!(d, [4.0, 6.0]);

        let mut d = [0.5f32, -2.0, 7.0];
        reduce_into(&mut d, &[0.0; 3], ReduceOp::Sum).unwrap();
        assert_eq!(d, [0.5, -2.0, 7.0]);

        let mut d = [1.0f64, 5.0];
        reduce_into(&mut d, &[2.0, 3.0], ReduceOp::Max).unwrap();
        assert_eq!(d, [2.0, 5.0]);

        let mut d = [1.0f64, 5.0];
        reduce_into(&mut d, &[2.0, 3.0], ReduceOp::Min).unwrap();
        assert_eq!(d, [1.0, 3.0]);
    }

    #[test]
    fn reduce_length_mismatch() {
        let mut d = [1.0f32; 3];
        assert!(reduce_into(&mut d, &[1.0; 2], ReduceOp::Sum).is_err());
    }

    #[test]
    fn op_parse() {
        assert_eq!("max".parse::<ReduceOp>().unwrap(), ReduceOp::Max);
        assert!("prod".parse::<ReduceOp>().is_err());
        assert_eq!(ReduceOp::Min.to_string(), "min");
    }

    #[test]
    fn fold_in_order() {
        let v = vec![vec![1.0f32, 9.0], vec![2.0, 3.0], vec![4.0, 1.0]];
        assert_eq!(serial_fold(&v, ReduceOp::Sum).unwrap(), vec![7.0, 13.0]);
        assert_eq!(serial_fold(&v, ReduceOp::Max).unwrap(), vec![4.0, 9.0]);
    }
}
