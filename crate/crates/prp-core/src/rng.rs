//! Self-contained deterministic RNG: xoshiro256++ seeded through SplitMix64.
//!
//! The generator is implemented here (rather than taken from a platform
//! library) so that a (seed, dims) pair regenerates the exact same
//! projection matrix on every platform and in every release.

use crate::linalg::Vector;

const GOLDEN_GAMMA: u64 = 0x9E3779B97F4A7C15;

/// SplitMix64 output function; also used to derive per-layer sub-seeds.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Sub-seed for layer `index` of a network seeded with `master_seed`.
///
/// Defined as `splitmix64(master_seed XOR (index + 1) * GOLDEN_GAMMA)` so
/// that layers sharing one master seed draw uncorrelated streams.
pub fn derive_subseed(master_seed: u64, index: usize) -> u64 {
    let mut s = master_seed ^ (index as u64 + 1).wrapping_mul(GOLDEN_GAMMA);
    splitmix64(&mut s)
}

/// xoshiro256++ generator with a fixed SplitMix64 seeding procedure.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    s: [u64; 4],
}

impl SeededRng {
    pub fn new(seed: u64) -> SeededRng {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        SeededRng { seed, s }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1): top 53 bits scaled by 2^-53.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; used where log(0) must be impossible.
    #[inline]
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn next_below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// One N(0,1) sample (Box-Muller; the paired sample is discarded).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `n` N(0,1) samples via Box-Muller on consecutive uniform pairs.
    ///
    /// Each pair of uniforms yields two normals; for odd `n` the trailing
    /// sample of the last pair is discarded. The draw is a pure function of
    /// (seed-state, n).
    pub fn standard_normal_vec(&mut self, n: usize) -> Vector {
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let u1 = self.next_f64_open();
            let u2 = self.next_f64();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            out.push(r * theta.cos());
            out.push(r * theta.sin());
        }
        out.truncate(n);
        Vector::from_vec(out)
    }

    /// Deterministic Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_identical_sequence() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let va = SeededRng::new(42).standard_normal_vec(101);
        let vb = SeededRng::new(42).standard_normal_vec(101);
        assert_eq!(va.as_slice(), vb.as_slice());
    }

    #[test]
    fn normal_moments() {
        let n = 100_000;
        let v = SeededRng::new(7).standard_normal_vec(n);
        let mean: f64 = v.as_slice().iter().sum::<f64>() / n as f64;
        let var: f64 = v.as_slice().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (n as f64 - 1.0);
        assert!(mean.abs() < 0.02, "mean = {mean}");
        assert!((var - 1.0).abs() < 0.02, "var = {var}");
    }

    #[test]
    fn normal_kolmogorov_smirnov() {
        // KS statistic against the standard normal CDF.
        let n = 100_000;
        let mut v: Vec<f64> = SeededRng::new(13).standard_normal_vec(n).as_slice().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, x) in v.iter().enumerate() {
            let cdf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((cdf - lo).abs()).max((cdf - hi).abs());
        }
        assert!(ks < 0.01, "ks = {ks}");
    }

    // Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
    // Accurate enough for a KS bound of 0.01.
    fn erf(x: f64) -> f64 {
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }

    #[test]
    fn subseeds_distinct() {
        let seeds: Vec<u64> = (0..16).map(|i| derive_subseed(0, i)).collect();
        for i in 0..seeds.len() {
            for j in (i + 1)..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!(derive_subseed(5, 2), derive_subseed(5, 2));
        assert_ne!(derive_subseed(5, 2), derive_subseed(6, 2));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = SeededRng::new(3);
        let p = rng.permutation(100);
        let mut seen = vec![false; 100];
        for &i in &p {
            assert!(!seen[i]);
            seen[i] = true;
        }
        let q = SeededRng::new(3).permutation(100);
        assert_eq!(p, q);
    }
}
