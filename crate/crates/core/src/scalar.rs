//! Scalar traits shared by the data path and the timing model.

use std::fmt::Debug;

use num_traits::{Float, Num};

/// Element type carried in a data vector.
///
/// Wire encoding is little-endian, `BYTES` bytes per element.
pub trait Element: Float + Debug + Default + Send + Sync + 'static {
    const BYTES: usize;

    fn write_le(self, out: &mut [u8]);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const BYTES: usize = 4;

    fn write_le(self, out: &mut [u8]) {
        out[..4].copy_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Element for f64 {
    const BYTES: usize = 8;

    fn write_le(self, out: &mut [u8]) {
        out[..8].copy_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }
}

/// Time scalar for arrival patterns and the tau model.
///
/// Anything with ring arithmetic and a total-enough order works: `i64` for
/// integer tau counts, `f64` for measured seconds, `Ratio<i64>` for exact
/// fractional delays.
pub trait TimeValue: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {}

impl<T> TimeValue for T where T: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {}

pub(crate) fn max_of<T: PartialOrd + Copy>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

pub(crate) fn min_of<T: PartialOrd + Copy>(a: T, b: T) -> T {
    if b < a {
        b
    } else {
        a
    }
}

/// Encode a slice of elements into a freshly allocated byte buffer.
pub fn encode_elements<E: Element>(src: &[E]) -> Vec<u8> {
    let mut out = vec![0u8; src.len() * E::BYTES];
    for (x, chunk) in src.iter().zip(out.chunks_exact_mut(E::BYTES)) {
        x.write_le(chunk);
    }
    out
}

/// Decode `dst.len()` elements from `bytes`. Returns false on a size mismatch.
pub fn decode_elements<E: Element>(bytes: &[u8], dst: &mut [E]) -> bool {
    if bytes.len() != dst.len() * E::BYTES {
        return false;
    }
    for (x, chunk) in dst.iter_mut().zip(bytes.chunks_exact(E::BYTES)) {
        *x = E::read_le(chunk);
    }
    true
}
