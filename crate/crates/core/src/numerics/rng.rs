use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counter-based random stream.
///
/// A stream is identified by `(seed, stream id)`; the ChaCha block counter is
/// the position within it. Work that may run in parallel derives its own
/// child stream with [`RngStream::derive`], so draws never depend on the
/// scheduling order or worker count.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Child stream for `(purpose, index)`. Independent of how much of the
    /// parent has been consumed.
    pub fn derive(&self, purpose: &str, index: u64) -> RngStream {
        let mut h = splitmix64(self.stream ^ 0x9e37_79b9_7f4a_7c15);
        h = splitmix64(h ^ fnv1a(purpose));
        h = splitmix64(h ^ index);
        RngStream::new(self.seed, h)
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Index drawn from a categorical distribution given by `probs`
    /// (assumed normalized; any remaining mass falls on the last entry).
    #[inline]
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left u >= total mass; take the last index with mass.
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
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

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_and_stream_reproduce() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.counter(), 2000);
    }

    #[test]
    fn derived_streams_do_not_depend_on_parent_position() {
        let a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 0);
        b.next_u64();
        assert_eq!(
            a.derive("x", 3).next_u64(),
            b.derive("x", 3).next_u64()
        );
        assert_ne!(
            a.derive("x", 3).next_u64(),
            a.derive("x", 4).next_u64()
        );
        assert_ne!(
            a.derive("x", 3).next_u64(),
            a.derive("y", 3).next_u64()
        );
    }

    #[test]
    fn distinct_streams_look_independent() {
        // Correlation of uniforms from two streams should be ~0.
        let mut a = RngStream::new(5, 1);
        let mut b = RngStream::new(5, 2);
        let n = 20_000;
        let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.uniform() - 0.5;
            let y = b.uniform() - 0.5;
            sa += x * x;
            sb += y * y;
            sab += x * y;
        }
        let corr = sab / (sa * sb).sqrt();
        // 4.5 sigma for n = 20k
        assert!(corr.abs() < 4.5 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn categorical_respects_zero_mass() {
        let mut r = RngStream::new(0, 0);
        for _ in 0..1000 {
            assert_eq!(r.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }
}
