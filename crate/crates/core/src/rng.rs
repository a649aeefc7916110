//! Counter-based hashing and a small sequential generator.
//!
//! Lattice cells draw their phase from `hash_cell(seed, cell)`, so a field can
//! be evaluated anywhere without global state.

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a seed and an integer lattice cell (up to three coordinates).
pub fn hash_cell(seed: u64, cell: [i64; 3]) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    for c in cell {
        h = mix64(h.wrapping_add(GOLDEN) ^ (c as u64));
    }
    h
}

/// Maps 64 random bits to `[0, 1)` with 53 bits of precision.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 stream. Used for sample clouds and ensembles.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
    }

    /// Fills `out` with a point uniformly distributed in the ball of `radius`.
    pub fn in_ball(&mut self, radius: f64, out: &mut [f64]) {
        let mut norm2 = 0.0;
        for v in out.iter_mut() {
            *v = self.normal();
            norm2 += *v * *v;
        }
        let norm = norm2.sqrt().max(f64::MIN_POSITIVE);
        let r = radius * self.next_f64().powf(1.0 / out.len() as f64);
        for v in out.iter_mut() {
            *v *= r / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_hash_is_deterministic_and_spreads() {
        assert_eq!(hash_cell(7, [1, 2, 0]), hash_cell(7, [1, 2, 0]));
        assert_ne!(hash_cell(7, [1, 2, 0]), hash_cell(7, [2, 1, 0]));
        assert_ne!(hash_cell(7, [1, 2, 0]), hash_cell(8, [1, 2, 0]));
        let mean: f64 = (0..10_000)
            .map(|i| unit_f64(hash_cell(3, [i, -i, 0])))
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = SplitMix64::new(1);
        let mut v = [0.0; 3];
        for _ in 0..1000 {
            rng.in_ball(2.0, &mut v);
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!(n <= 2.0 + 1e-12);
        }
    }
}
