//! Unscrambled Sobol sequence with Gray-code ordering.

use super::directions::DIRECTIONS;

const BITS: usize = 32;

/// Largest dimension count with shipped direction numbers.
pub const MAX_DIMENSIONS: usize = DIRECTIONS.len() + 1;

/// Direction integers `v[dim][k]` (bit `k` counted from the most significant).
pub(crate) fn direction_integers(dims: usize) -> Vec<[u32; BITS]> {
    assert!(dims <= MAX_DIMENSIONS);
    let mut out = Vec::with_capacity(dims);
    for dim in 0..dims {
        let mut v = [0u32; BITS];
        if dim == 0 {
            for (k, vk) in v.iter_mut().enumerate() {
                *vk = 1 << (BITS - 1 - k);
            }
        } else {
            let (s, a, m) = DIRECTIONS[dim - 1];
            let s = s as usize;
            for k in 0..s.min(BITS) {
                v[k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                let mut x = v[k - s] ^ (v[k - s] >> s);
                for j in 1..s {
                    if (a >> (s - 1 - j)) & 1 == 1 {
                        x ^= v[k - j];
                    }
                }
                v[k] = x;
            }
        }
        out.push(v);
    }
    out
}

/// Streaming generator. The first call to [`SobolSeq::next_point`] returns
/// point 1; point 0 (the origin) is never emitted.
#[derive(Debug, Clone)]
pub struct SobolSeq {
    v: Vec<[u32; BITS]>,
    x: Vec<u32>,
    index: u64,
}

impl SobolSeq {
    pub fn new(dims: usize) -> Option<Self> {
        (dims <= MAX_DIMENSIONS).then(|| SobolSeq { v: direction_integers(dims), x: vec![0; dims], index: 0 })
    }

    /// Jumps so that the next emitted point is `index + 1`.
    pub fn seek(&mut self, index: u64) {
        let gray = index ^ (index >> 1);
        for (xd, vd) in self.x.iter_mut().zip(&self.v) {
            *xd = (0..BITS).filter(|&k| (gray >> k) & 1 == 1).fold(0, |acc, k| acc ^ vd[k]);
        }
        self.index = index;
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        // Rightmost zero bit of the current index picks the direction to flip.
        let c = (!self.index).trailing_zeros() as usize;
        assert!(c < BITS, "Sobol index exhausted");
        for (xd, vd) in self.x.iter_mut().zip(&self.v) {
            *xd ^= vd[c];
        }
        self.index += 1;
        self.x.iter().map(|&xi| f64::from(xi) / 4_294_967_296.0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seek_matches_stepping() {
        let mut a = SobolSeq::new(5).unwrap();
        let pts: Vec<_> = (0..40).map(|_| a.next_point()).collect();
        let mut b = SobolSeq::new(5).unwrap();
        b.seek(17);
        assert_eq!(b.next_point(), pts[17]);
        assert_eq!(b.next_point(), pts[18]);
    }

    #[test]
    fn too_many_dimensions() {
        assert!(SobolSeq::new(MAX_DIMENSIONS).is_some());
        assert!(SobolSeq::new(MAX_DIMENSIONS + 1).is_none());
    }
}
