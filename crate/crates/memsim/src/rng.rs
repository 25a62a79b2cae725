//! Counter-based deterministic random streams.
//!
//! Every stochastic draw in the simulator is a pure function of
//! `(seed, layer, row, col, event, salt)`. No mutable generator state is
//! shared between cells, so per-cell work can be scheduled on any thread
//! in any order and still produce bit-identical results.

/// SplitMix64 finalizer. Full-avalanche mix of a 64-bit word.
#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Identity of one stochastic stream: a cell (or other site) within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub layer: u32,
    pub row: u32,
    pub col: u32,
}

impl StreamKey {
    pub fn new(seed: u64, layer: u32, row: u32, col: u32) -> Self {
        Self { seed, layer, row, col }
    }

    /// Raw 64-bit draw for (event, salt) on this stream.
    #[inline]
    pub fn draw_u64(&self, event: u64, salt: u64) -> u64 {
        let mut h = mix(self.seed);
        h = mix(h ^ ((self.layer as u64) << 32 | self.row as u64));
        h = mix(h ^ self.col as u64);
        h = mix(h ^ event);
        mix(h ^ salt)
    }

    /// Uniform draw in the open interval (0, 1).
    #[inline]
    pub fn uniform(&self, event: u64, salt: u64) -> f64 {
        // 53 mantissa bits, shifted into (0,1) so ln() below never sees zero.
        (((self.draw_u64(event, salt) >> 11) as f64) + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal draw via Box-Muller.
    #[inline]
    pub fn normal(&self, event: u64, salt: u64) -> f64 {
        let u1 = self.uniform(event, salt.wrapping_mul(2));
        let u2 = self.uniform(event, salt.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Bernoulli draw with probability `p`.
    #[inline]
    pub fn bernoulli(&self, event: u64, salt: u64, p: f64) -> bool {
        self.uniform(event, salt) < p
    }
}

/// Deterministic Fisher-Yates permutation of `0..n`, keyed by (seed, tag).
///
/// Used for epoch shuffles: the permutation depends only on the key, never
/// on prior draws.
pub fn permutation(seed: u64, tag: u64, n: usize) -> Vec<usize> {
    let key = StreamKey::new(seed, u32::MAX, 0, 0);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (key.draw_u64(tag, i as u64) % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_draw() {
        let k = StreamKey::new(42, 1, 3, 7);
        assert_eq!(k.draw_u64(5, 0), k.draw_u64(5, 0));
        assert_eq!(k.normal(9, 2).to_bits(), k.normal(9, 2).to_bits());
    }

    #[test]
    fn different_cells_decorrelated() {
        let a = StreamKey::new(42, 0, 0, 0);
        let b = StreamKey::new(42, 0, 0, 1);
        assert_ne!(a.draw_u64(0, 0), b.draw_u64(0, 0));
    }

    #[test]
    fn uniform_in_open_interval() {
        let k = StreamKey::new(7, 0, 0, 0);
        for e in 0..10_000 {
            let u = k.uniform(e, 0);
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let k = StreamKey::new(123, 0, 0, 0);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for e in 0..n {
            let z = k.normal(e, 0);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn permutation_is_keyed() {
        let p1 = permutation(1, 0, 50);
        let p2 = permutation(1, 0, 50);
        let p3 = permutation(1, 1, 50);
        assert_eq!(p1, p2);
        assert_ne!(p1, p3);
        let mut sorted = p1.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
