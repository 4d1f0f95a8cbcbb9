//! Counter-based deterministic RNG with splittable streams.
//!
//! Every random draw is a pure function of (key, counter), so runs reproduce
//! bit-for-bit across platforms. Streams are derived by hashing a purpose
//! label into the key; adding a new consumer never perturbs the draws of an
//! existing one.

/// SplitMix64 finalizer. Full-period bijection on u64.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { key: mix(seed ^ GOLDEN), counter: 0 }
    }

    /// Derive an independent stream for a named purpose.
    ///
    /// The child key depends on the parent key and the label only, not on
    /// how many values the parent has produced.
    pub fn stream(&self, label: &str) -> CounterRng {
        let mut key = self.key;
        for &b in label.as_bytes() {
            key = mix(key ^ u64::from(b)).wrapping_add(GOLDEN);
        }
        CounterRng { key: mix(key), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key ^ self.counter.wrapping_mul(GOLDEN));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per pair and
    /// caches the second value, so draw counts stay deterministic.
    pub fn next_gaussian(&mut self) -> f64 {
        // Reject u = 0 so ln(u) stays finite.
        let mut u = self.next_f64();
        while u == 0.0 {
            u = self.next_f64();
        }
        let v = self.next_f64();
        let r = (-2.0 * u.ln()).sqrt();
        r * (2.0 * std::f64::consts::PI * v).cos()
    }

    /// Uniform integer in [0, n).
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift; bias is negligible for the n used here (< 2^32).
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_per_seed() {
        let a: Vec<u64> = {
            let mut r = CounterRng::new(7);
            (0..16).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = CounterRng::new(7);
            (0..16).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<u64> = {
            let mut r = CounterRng::new(8);
            (0..16).map(|_| r.next_u64()).collect()
        };
        assert_ne!(a, c);
    }

    #[test]
    fn streams_are_independent_of_parent_consumption() {
        let mut parent = CounterRng::new(42);
        let before = parent.stream("noise").next_u64();
        parent.next_u64();
        parent.next_u64();
        let after = parent.stream("noise").next_u64();
        assert_eq!(before, after);
        assert_ne!(
            parent.stream("noise").next_u64(),
            parent.stream("data").next_u64()
        );
    }

    #[test]
    fn uniform_mean_is_sane() {
        let mut r = CounterRng::new(1);
        let n = 20_000;
        let mean: f64 = (0..n).map(|_| r.next_f64()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut r = CounterRng::new(2);
        let n = 40_000;
        let draws: Vec<f64> = (0..n).map(|_| r.next_gaussian()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
