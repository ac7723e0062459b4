//! Counter-based random numbers for reproducible parallel Monte Carlo.
//!
//! Every normal increment is a pure function of the tuple
//! `(master seed, path index, step index, noise coordinate)`, so a path's
//! noise does not depend on scheduling, worker count, or how many other paths
//! were generated before it.  Two operations that touch the same tuple see
//! the same bits.
//!
//! ```text
//! key   = avalanche(seed, path, step, slot)      (splitmix64-style mixing)
//! u     = (key >> 11) * 2^-53                    uniform in (0, 1)
//! z1,z2 = Box-Muller(u1, u2)                     one pair per two slots
//! ```
//!
//! Gaussian pairs are produced by the Box–Muller transform from two uniform
//! draws, so noise coordinate `2j` consumes slots `4j, 4j+1` and coordinate
//! `2j+1` shares the same pair (sine branch).  The mapping from coordinates
//! to slots is fixed; callers never observe the slot arithmetic.

use std::f64::consts::PI;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer: full-avalanche mixing of a 64-bit word.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine the stream tuple into one well-mixed 64-bit word.
#[inline]
fn counter_key(seed: u64, path: u64, step: u64, slot: u64) -> u64 {
    let mut z = mix64(seed ^ GOLDEN_GAMMA);
    z = mix64(z ^ path.wrapping_mul(GOLDEN_GAMMA));
    z = mix64(z ^ step.wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    mix64(z ^ slot.wrapping_mul(0x1656_67b1_9e37_79f9))
}

/// Uniform draw in the open interval (0, 1); 53 significant bits.
#[inline]
fn uniform_from_key(key: u64) -> f64 {
    // 2^-53 scaling; add half an ulp so the result is never exactly zero
    // (Box-Muller takes a logarithm of it).
    ((key >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Read-only handle for one path's noise stream.
///
/// Cloning is free; the struct is just the stream key.
#[derive(Clone, Copy, Debug)]
pub struct PathStream {
    seed: u64,
    path: u64,
}

impl PathStream {
    pub fn new(seed: u64, path: u64) -> Self {
        PathStream { seed, path }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path
    }

    /// Uniform in (0,1) for an arbitrary (step, slot) counter pair.
    #[inline]
    pub fn uniform(&self, step: u64, slot: u64) -> f64 {
        uniform_from_key(counter_key(self.seed, self.path, step, slot))
    }

    /// Standard normal draw for noise coordinate `coord` of time step `step`.
    #[inline]
    pub fn normal(&self, step: u64, coord: u32) -> f64 {
        let pair = (coord / 2) as u64;
        let u1 = self.uniform(step, 4 * pair);
        let u2 = self.uniform(step, 4 * pair + 1);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        if coord % 2 == 0 {
            r * theta.cos()
        } else {
            r * theta.sin()
        }
    }

    /// Fill `out` with the standard normal increments of one time step,
    /// coordinates `0..out.len()`.
    #[inline]
    pub fn fill_normals(&self, step: u64, out: &mut [f64]) {
        let mut j = 0;
        while j + 1 < out.len() {
            let u1 = self.uniform(step, 2 * j as u64);
            let u2 = self.uniform(step, 2 * j as u64 + 1);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * PI * u2;
            out[j] = r * theta.cos();
            out[j + 1] = r * theta.sin();
            j += 2;
        }
        if j < out.len() {
            let u1 = self.uniform(step, 2 * j as u64);
            let u2 = self.uniform(step, 2 * j as u64 + 1);
            out[j] = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
        }
    }
}

/// Small stateful generator for auxiliary randomness (random policies,
/// random parameter sets in tests, point-pair sampling).  Deterministic:
/// a counter walked through the same mixing function as [`PathStream`].
#[derive(Clone, Debug)]
pub struct CounterRng {
    stream: PathStream,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        CounterRng {
            stream: PathStream::new(seed, stream_id),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let k = counter_key(self.stream.seed, self.stream.path, self.counter, u64::MAX);
        self.counter += 1;
        k
    }

    pub fn uniform(&mut self) -> f64 {
        uniform_from_key(self.next_u64())
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn index(&mut self, len: usize) -> usize {
        debug_assert!(len > 0);
        // 53-bit uniform scaled by len; bias is negligible for the small
        // index ranges used here (policy grids, bins).
        (self.uniform() * len as f64) as usize % len
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_tuple_same_bits() {
        let a = PathStream::new(42, 7);
        let b = PathStream::new(42, 7);
        for step in 0..100u64 {
            for coord in 0..3u32 {
                assert_eq!(
                    a.normal(step, coord).to_bits(),
                    b.normal(step, coord).to_bits()
                );
            }
        }
    }

    #[test]
    fn distinct_paths_decorrelated() {
        let a = PathStream::new(42, 0);
        let b = PathStream::new(42, 1);
        let mut dot = 0.0;
        let mut n = 0.0;
        for step in 0..10_000u64 {
            let (x, y) = (a.normal(step, 0), b.normal(step, 0));
            dot += x * y;
            n += 1.0;
        }
        assert!((dot / n).abs() < 0.05, "cross-path correlation too large");
    }

    #[test]
    fn normal_moments() {
        let s = PathStream::new(2024, 0);
        let n = 200_000u64;
        let (mut sum, mut sum2, mut sum4) = (0.0, 0.0, 0.0);
        for step in 0..n {
            let z = s.normal(step, 0);
            sum += z;
            sum2 += z * z;
            sum4 += z * z * z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        let kurt = sum4 / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        assert!((kurt - 3.0).abs() < 0.1, "4th moment {kurt}");
    }

    #[test]
    fn fill_matches_scalar_access() {
        let s = PathStream::new(5, 3);
        let mut buf = [0.0; 5];
        s.fill_normals(11, &mut buf);
        for (coord, v) in buf.iter().enumerate() {
            assert_eq!(v.to_bits(), s.normal(11, coord as u32).to_bits());
        }
    }

    #[test]
    fn counter_rng_deterministic() {
        let mut a = CounterRng::new(9, 1);
        let mut b = CounterRng::new(9, 1);
        for _ in 0..50 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
