use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded, splittable random stream.
///
/// A stream is identified by `(seed, stream_id)`. Equal identifiers give equal
/// sequences; distinct stream ids select disjoint ChaCha streams for the same
/// key, so sub-streams never overlap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    /// Stream derived from the root seed by a dotted label such as
    /// `"agents.rollout.3"`.
    pub fn named(seed: u64, label: &str) -> Self {
        Self::new(seed, hash_label(0, label))
    }

    /// Child stream keyed by `label`. Independent of how much of `self` has
    /// already been consumed.
    pub fn derive(&self, label: &str) -> Self {
        Self::new(self.seed, hash_label(self.stream_id, label))
    }

    /// Child stream keyed by an index.
    pub fn substream(&self, index: u64) -> Self {
        Self::new(
            self.seed,
            splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x5851_f42d))),
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[lo, hi]`; returns `lo` when the range is degenerate.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * self.uniform()
        }
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.inner.random_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        if hi <= lo {
            lo
        } else {
            self.inner.random_range(lo..=hi)
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher–Yates
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(parent: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the parent id
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(parent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_state_equal_sequence() {
        let mut a = RngStream::new(7, 3);
        let mut b = a.clone();
        let xs: Vec<f64> = (0..100).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..100).map(|_| b.uniform()).collect();
        assert_eq!(xs, ys);
        assert_eq!(RngStream::new(7, 3), RngStream::new(7, 3));
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 4);
        assert_ne!(a.next_u64(), b.next_u64());
        let root = RngStream::named(1, "x");
        assert_ne!(root.derive("a"), root.derive("b"));
        assert_ne!(root.substream(0), root.substream(1));
    }

    #[test]
    fn derive_ignores_consumption() {
        let mut a = RngStream::named(11, "root");
        let before = a.derive("child");
        a.uniform();
        assert_eq!(before, a.derive("child"));
    }
}
