//! Deterministic point sampling: seeded pseudorandom streams and a
//! digit-shifted Halton sequence, both organised in fixed batches so that
//! accumulation order never depends on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-task seed derivation used by every parallel fan-out in the crate.
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for batch `batch` of a sampler. Mixed so that neighbouring user
/// seeds do not share batch streams.
fn batch_seed(seed: u64, batch: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_mul(batch as u64 + 1);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    #[default]
    MonteCarlo,
    Halton,
}

impl SamplingMethod {
    pub fn tag(self) -> &'static str {
        match self {
            SamplingMethod::MonteCarlo => "monte-carlo",
            SamplingMethod::Halton => "low-discrepancy",
        }
    }
}

const PRIMES: [u64; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

/// Halton sequence with a seeded random digit shift per dimension.
#[derive(Debug, Clone)]
pub struct ShiftedHalton {
    shifts: Vec<Vec<u64>>,
}

impl ShiftedHalton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension {dim} exceeds prime table");
        let mut rng = rng_for(seed);
        let shifts = (0..dim)
            .map(|d| {
                let b = PRIMES[d];
                let digits = Self::digits_for(b);
                (0..digits).map(|_| rng.random_range(0..b)).collect()
            })
            .collect();
        Self { shifts }
    }

    fn digits_for(base: u64) -> usize {
        (53.0 / (base as f64).log2()).ceil() as usize
    }

    pub fn dim(&self) -> usize {
        self.shifts.len()
    }

    /// Point `index` written into `out` (length `dim`), entries in (0, 1).
    pub fn point(&self, index: u64, out: &mut [f64]) {
        for (d, shift) in self.shifts.iter().enumerate() {
            let b = PRIMES[d];
            let inv_b = 1.0 / b as f64;
            let mut n = index;
            let mut scale = inv_b;
            let mut acc = 0.0;
            for &s in shift {
                let digit = (n % b + s) % b;
                acc += digit as f64 * scale;
                n /= b;
                scale *= inv_b;
            }
            // keep strictly inside (0,1) for the log in Box–Muller
            out[d] = acc.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        }
    }
}

/// Uniform streams grouped into batches.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pub method: SamplingMethod,
    pub seed: u64,
    pub dim: usize,
}

impl BatchSampler {
    pub fn new(method: SamplingMethod, seed: u64, dim: usize) -> Self {
        Self { method, seed, dim }
    }

    /// Calls `f` with `count` uniform vectors of batch `batch`, in order.
    pub fn for_each_in_batch<F: FnMut(&[f64])>(&self, batch: usize, count: usize, mut f: F) {
        let mut buf = vec![0.0; self.dim];
        match self.method {
            SamplingMethod::MonteCarlo => {
                let mut rng = rng_for(batch_seed(self.seed, batch));
                for _ in 0..count {
                    for v in buf.iter_mut() {
                        // (0, 1]
                        *v = 1.0 - rng.random::<f64>();
                    }
                    f(&buf);
                }
            }
            SamplingMethod::Halton => {
                let halton = ShiftedHalton::new(self.dim, batch_seed(self.seed, batch));
                for i in 0..count {
                    halton.point(i as u64 + 1, &mut buf);
                    f(&buf);
                }
            }
        }
    }
}

/// Box–Muller transform: fills `out` with standard normals using
/// `2 * ceil(out.len() / 2)` uniforms from `u` (entries in (0, 1]).
pub fn gaussians_from_uniforms(u: &[f64], out: &mut [f64]) {
    let n = out.len();
    assert!(u.len() >= 2 * n.div_ceil(2));
    let mut i = 0;
    while i < n {
        let r = (-2.0 * u[i].ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u[i + 1];
        out[i] = r * theta.cos();
        if i + 1 < n {
            out[i + 1] = r * theta.sin();
        }
        i += 2;
    }
}

/// Number of uniforms consumed by [`sphere_point_from_uniforms`].
pub fn sphere_uniform_dim(n: usize) -> usize {
    2 * n.div_ceil(2)
}

/// Uniform point on the unit sphere in R^n via normalised Gaussians.
pub fn sphere_point_from_uniforms(u: &[f64], out: &mut [f64]) {
    gaussians_from_uniforms(u, out);
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in out.iter_mut() {
        *v /= norm;
    }
}

/// Number of uniforms consumed by [`ball_point_from_uniforms`].
pub fn ball_uniform_dim(n: usize) -> usize {
    sphere_uniform_dim(n) + 1
}

/// Uniform point in the unit ball of R^n: sphere point times radius U^(1/n).
pub fn ball_point_from_uniforms(u: &[f64], out: &mut [f64]) {
    let n = out.len();
    let s = sphere_uniform_dim(n);
    sphere_point_from_uniforms(&u[..s], out);
    let radius = u[s].powf(1.0 / n as f64);
    for v in out.iter_mut() {
        *v *= radius;
    }
}

pub fn sphere_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let u: Vec<f64> = (0..sphere_uniform_dim(n)).map(|_| 1.0 - rng.random::<f64>()).collect();
    let mut out = vec![0.0; n];
    sphere_point_from_uniforms(&u, &mut out);
    out
}

pub fn ball_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let u: Vec<f64> = (0..ball_uniform_dim(n)).map(|_| 1.0 - rng.random::<f64>()).collect();
    let mut out = vec![0.0; n];
    ball_point_from_uniforms(&u, &mut out);
    out
}

/// Mean and batch-means standard error of per-batch means.
pub fn batch_mean_and_error(batch_means: &[f64]) -> (f64, f64) {
    let b = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / b;
    if batch_means.len() < 2 {
        return (mean, 0.0);
    }
    let var = batch_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0);
    (mean, (var / b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_unshifted_base2_matches_van_der_corput() {
        let h = ShiftedHalton { shifts: vec![vec![0; 53]] };
        let mut out = [0.0];
        let expected = [0.5, 0.25, 0.75, 0.125, 0.625];
        for (i, e) in expected.iter().enumerate() {
            h.point(i as u64 + 1, &mut out);
            assert_eq!(out[0], *e);
        }
    }

    #[test]
    fn halton_points_fill_unit_cube_evenly() {
        let h = ShiftedHalton::new(3, 7);
        let mut out = [0.0; 3];
        let mut mean = [0.0; 3];
        let n = 4096;
        for i in 0..n {
            h.point(i + 1, &mut out);
            for d in 0..3 {
                assert!(out[d] > 0.0 && out[d] < 1.0);
                mean[d] += out[d] / n as f64;
            }
        }
        for m in mean {
            assert!((m - 0.5).abs() < 2e-3, "mean {m}");
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let s = BatchSampler::new(SamplingMethod::MonteCarlo, 11, 4);
        let mut a = Vec::new();
        let mut b = Vec::new();
        s.for_each_in_batch(3, 5, |u| a.extend_from_slice(u));
        s.for_each_in_batch(3, 5, |u| b.extend_from_slice(u));
        assert_eq!(a, b);
        let mut c = Vec::new();
        s.for_each_in_batch(4, 5, |u| c.extend_from_slice(u));
        assert_ne!(a, c);
    }

    #[test]
    fn ball_points_are_inside_and_sphere_points_on() {
        let mut rng = rng_for(5);
        for _ in 0..100 {
            let p = ball_point(9, &mut rng);
            assert!(p.iter().map(|v| v * v).sum::<f64>() <= 1.0);
            let q = sphere_point(9, &mut rng);
            assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}
