//! Spectrally determined integrals: volume, boundary area and total scalar
//! curvature, estimated by batch-organised sampling so that any two metrics
//! can be compared on common random points.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambient::{determinant_defect, sphere_volume_density, torus_action, AmbientMetric, SphereChart};
use crate::curvature::{curvature_at, CurvaturePack, MetricField};
use crate::error::{IsoError, Result};
use crate::jmap::JMap;
use crate::sampling::{
    ball_point_from_uniforms, ball_uniform_dim, batch_mean_and_error, rng_for, sphere_point_from_uniforms, sphere_uniform_dim,
    BatchSampler, SamplingMethod,
};

/// Number of batches behind every batch-means standard error.
pub const BATCHES: usize = 64;

/// Per-point first-Bianchi residual above which a curvature sample is flagged.
pub const BIANCHI_FLAG: f64 = 1e-5;

/// Tolerance of the torus-invariance spot check.
pub const INVARIANCE_TOL: f64 = 1e-10;

/// Relative floor added to paired-difference bounds: two estimates whose
/// integrands agree to rounding cannot differ by less than this.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub method: String,
    /// samples whose curvature failed the Bianchi check
    #[serde(default, skip_serializing_if = "is_zero")]
    pub flagged: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl IntegralEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0, n_samples: 0, method: "exact".into(), flagged: 0 }
    }

    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            self.std_error
        } else {
            self.std_error / self.value.abs()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub method: SamplingMethod,
    pub n_samples: usize,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self { method: SamplingMethod::MonteCarlo, n_samples, seed }
    }

    fn batch_len(&self, batch: usize) -> usize {
        self.n_samples / BATCHES + usize::from(batch < self.n_samples % BATCHES)
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < BATCHES {
            return Err(IsoError::Config(format!("need at least {BATCHES} samples, got {}", self.n_samples)));
        }
        Ok(())
    }
}

/// Volume of the Euclidean unit ball in R^n.
/// Odd n: 2^((n+1)/2) π^((n−1)/2) / n!!; even n: π^(n/2) / (n/2)!.
pub fn unit_ball_volume(n: usize) -> f64 {
    if n % 2 == 1 {
        let double_factorial: f64 = (1..=n).step_by(2).map(|v| v as f64).product();
        2f64.powi((n as i32 + 1) / 2) * pi_power((n - 1) / 2) / double_factorial
    } else {
        let factorial: f64 = (1..=n / 2).map(|v| v as f64).product();
        pi_power(n / 2) / factorial
    }
}

/// π^e by sequential multiplication, so the closed forms are reproducible
/// bit for bit independently of how `powi` is lowered.
fn pi_power(e: usize) -> f64 {
    (0..e).fold(1.0, |acc, _| acc * PI)
}

/// Area of the Euclidean unit sphere S^(n−1) ⊂ R^n.
pub fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Volume of the unit ball under g_j: exactly Euclidean since det G ≡ 1.
/// The identity is spot-checked at `check_points` random points.
pub fn ball_volume(j: &JMap, check_points: usize, seed: u64) -> Result<IntegralEstimate> {
    let metric = AmbientMetric::new(j.clone());
    let defect = determinant_defect(&metric, check_points, seed);
    if !(defect <= 1e-12) {
        return Err(IsoError::InvariantViolation(defect));
    }
    Ok(IntegralEstimate::exact(unit_ball_volume(metric.dim())))
}

/// Integrands over the unit sphere with its induced metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SphereIntegrand {
    Volume,
    ScalarCurvature,
    /// experimental: |Ric|²
    RicciSquared,
    /// experimental: |Rm|²
    RiemannSquared,
}

impl SphereIntegrand {
    pub fn name(self) -> &'static str {
        match self {
            Self::Volume => "sphere-volume",
            Self::ScalarCurvature => "total-scalar-curvature",
            Self::RicciSquared => "ricci-squared",
            Self::RiemannSquared => "riemann-squared",
        }
    }

    pub fn is_experimental(self) -> bool {
        matches!(self, Self::RicciSquared | Self::RiemannSquared)
    }
}

fn ricci_squared(pack: &CurvaturePack) -> f64 {
    let up = &pack.inverse * &pack.ricci * &pack.inverse;
    up.component_mul(&pack.ricci).sum()
}

fn riemann_squared(pack: &CurvaturePack) -> f64 {
    let n = pack.dim();
    let gi = &pack.inverse;
    let mut cur: Vec<f64> = (0..n * n * n * n)
        .map(|t| pack.riemann(t / (n * n * n), (t / (n * n)) % n, (t / n) % n, t % n))
        .collect();
    let lowered = cur.clone();
    // raise each slot in turn
    for slot in 0..4 {
        let stride = n.pow(3 - slot as u32);
        let mut next = vec![0.0; cur.len()];
        for (t, out) in next.iter_mut().enumerate() {
            let idx = (t / stride) % n;
            let base = t - idx * stride;
            let mut s = 0.0;
            for e in 0..n {
                s += gi[(idx, e)] * cur[base + e * stride];
            }
            *out = s;
        }
        cur = next;
    }
    cur.iter().zip(&lowered).map(|(a, b)| a * b).sum()
}

struct BatchResult {
    sums: Vec<f64>,
    flagged: Vec<usize>,
}

fn sphere_sample(metric: &AmbientMetric, integrand: SphereIntegrand, q: &[f64]) -> Result<(f64, bool)> {
    let density = sphere_volume_density(metric, q)?;
    if integrand == SphereIntegrand::Volume {
        return Ok((density, false));
    }
    let (chart, p) = SphereChart::best_for(q);
    let pack = curvature_at(MetricField::Sphere(metric, chart), &p)?;
    let flagged = !(pack.bianchi_residual() <= BIANCHI_FLAG);
    let value = match integrand {
        SphereIntegrand::ScalarCurvature => pack.scalar,
        SphereIntegrand::RicciSquared => ricci_squared(&pack),
        SphereIntegrand::RiemannSquared => riemann_squared(&pack),
        SphereIntegrand::Volume => unreachable!(),
    };
    Ok((value * density, flagged))
}

/// Estimates ∫_S f dV for every metric on one common set of sample points.
/// Returns, per metric, the estimate and its per-batch means.
fn sphere_estimates(
    metrics: &[AmbientMetric],
    integrand: SphereIntegrand,
    cfg: &SamplingConfig,
) -> Result<Vec<(IntegralEstimate, Vec<f64>)>> {
    cfg.validate()?;
    let n = metrics[0].dim();
    if metrics.iter().any(|g| g.dim() != n) {
        return Err(IsoError::Dimension("metrics compared on different spheres".into()));
    }
    let sampler = BatchSampler::new(cfg.method, cfg.seed, sphere_uniform_dim(n));
    let batches: Vec<Result<BatchResult>> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut res = BatchResult { sums: vec![0.0; metrics.len()], flagged: vec![0; metrics.len()] };
            let mut q = vec![0.0; n];
            let mut err = None;
            sampler.for_each_in_batch(b, cfg.batch_len(b), |uni| {
                if err.is_some() {
                    return;
                }
                sphere_point_from_uniforms(uni, &mut q);
                for (i, g) in metrics.iter().enumerate() {
                    match sphere_sample(g, integrand, &q) {
                        Ok((v, f)) => {
                            res.sums[i] += v;
                            res.flagged[i] += usize::from(f);
                        }
                        Err(e) => err = Some(e),
                    }
                }
            });
            err.map_or(Ok(res), Err)
        })
        .collect();
    let batches: Vec<BatchResult> = batches.into_iter().collect::<Result<_>>()?;
    let area = unit_sphere_area(n);
    Ok((0..metrics.len())
        .map(|i| {
            let means: Vec<f64> = batches.iter().enumerate().map(|(b, r)| area * r.sums[i] / cfg.batch_len(b) as f64).collect();
            let total: f64 = batches.iter().map(|r| r.sums[i]).sum();
            let (_, se) = batch_mean_and_error(&means);
            let est = IntegralEstimate {
                value: area * total / cfg.n_samples as f64,
                std_error: se,
                n_samples: cfg.n_samples,
                method: cfg.method.tag().into(),
                flagged: batches.iter().map(|r| r.flagged[i]).sum(),
            };
            (est, means)
        })
        .collect())
}

pub fn sphere_integral(j: &JMap, integrand: SphereIntegrand, cfg: &SamplingConfig) -> Result<IntegralEstimate> {
    let mut out = sphere_estimates(&[AmbientMetric::new(j.clone())], integrand, cfg)?;
    Ok(out.remove(0).0)
}

/// Volume of the unit sphere under the induced metric of g_j.
pub fn sphere_volume(j: &JMap, cfg: &SamplingConfig) -> Result<IntegralEstimate> {
    sphere_integral(j, SphereIntegrand::Volume, cfg)
}

/// Area of the boundary of the unit ball; the same integral as
/// [`sphere_volume`].
pub fn boundary_area(j: &JMap, cfg: &SamplingConfig) -> Result<IntegralEstimate> {
    sphere_volume(j, cfg)
}

/// ∫_S scal dV. Samples whose Bianchi residual exceeds the flag
/// threshold are counted in `flagged`.
pub fn total_scalar_curvature(j: &JMap, cfg: &SamplingConfig) -> Result<IntegralEstimate> {
    sphere_integral(j, SphereIntegrand::ScalarCurvature, cfg)
}

/// Common-random-number comparison of one invariant for two maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub invariant: String,
    pub j_id_a: String,
    pub j_id_b: String,
    pub a: IntegralEstimate,
    pub b: IntegralEstimate,
    pub difference: f64,
    /// batch-means standard error of the paired difference
    pub sigma: f64,
    pub sigma_multiple: f64,
    pub bound: f64,
}

impl PairedComparison {
    /// |Δ| ≤ 3σ + rounding floor.
    pub fn consistent(&self) -> bool {
        self.difference.abs() <= self.bound
    }

    /// |Δ| > `multiple`·σ.
    pub fn separated(&self, multiple: f64) -> bool {
        self.difference.abs() > multiple * self.sigma
    }
}

pub fn paired_comparison(j: &JMap, j2: &JMap, integrand: SphereIntegrand, cfg: &SamplingConfig) -> Result<PairedComparison> {
    Ok(compare_against(j, &[j2.clone()], integrand, cfg)?.remove(0))
}

/// Paired comparisons of `base` against each of `others`, all evaluated on
/// one common set of sample points (the base integrand is computed once).
pub fn compare_against(base: &JMap, others: &[JMap], integrand: SphereIntegrand, cfg: &SamplingConfig) -> Result<Vec<PairedComparison>> {
    let metrics: Vec<AmbientMetric> = std::iter::once(base).chain(others).map(|j| AmbientMetric::new(j.clone())).collect();
    let mut out = sphere_estimates(&metrics, integrand, cfg)?;
    let (a, ma) = out.remove(0);
    Ok(out
        .into_iter()
        .zip(others)
        .map(|((b, mb), j2)| {
            let diffs: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| y - x).collect();
            let (_, sigma) = batch_mean_and_error(&diffs);
            let difference = b.value - a.value;
            let floor = ROUNDOFF_FLOOR * a.value.abs().max(b.value.abs());
            PairedComparison {
                invariant: integrand.name().into(),
                j_id_a: base.digest(),
                j_id_b: j2.digest(),
                sigma_multiple: if sigma > 0.0 {
                    difference.abs() / sigma
                } else if difference == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                },
                bound: 3.0 * sigma + floor,
                a: a.clone(),
                b,
                difference,
                sigma,
            }
        })
        .collect())
}

/// Torus-invariant integrands over the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallIntegrand {
    One,
    ScalarCurvature,
}

fn ball_value(metric: &AmbientMetric, integrand: BallIntegrand, p: &[f64]) -> Result<f64> {
    match integrand {
        BallIntegrand::One => Ok(1.0),
        BallIntegrand::ScalarCurvature => Ok(curvature_at(MetricField::Ambient(metric), p)?.scalar),
    }
}

fn check_torus_invariance(metric: &AmbientMetric, integrand: BallIntegrand, seed: u64) -> Result<()> {
    use rand::Rng;
    let mut rng = rng_for(seed);
    let n = metric.dim();
    for _ in 0..4 {
        let p = crate::sampling::ball_point(n, &mut rng);
        let zbar: Vec<f64> = (0..metric.k()).map(|_| rng.random::<f64>()).collect();
        let (x, u) = metric.split(&p);
        let (x2, u2) = torus_action(&zbar, &x, &u);
        let mut q = x2.as_slice().to_vec();
        q.extend_from_slice(u2.as_slice());
        let (a, b) = (ball_value(metric, integrand, &p)?, ball_value(metric, integrand, &q)?);
        if (a - b).abs() > INVARIANCE_TOL * a.abs().max(1.0) {
            return Err(IsoError::InvariantViolation((a - b).abs()));
        }
    }
    Ok(())
}

fn ball_batches(cfg: &SamplingConfig, dim_uniform: usize, per_sample: impl Fn(&[f64]) -> Result<f64> + Sync) -> Result<(f64, f64)> {
    cfg.validate()?;
    let sampler = BatchSampler::new(cfg.method, cfg.seed, dim_uniform);
    let sums: Vec<Result<f64>> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let f = &per_sample;
            let mut sum = 0.0;
            let mut err = None;
            sampler.for_each_in_batch(b, cfg.batch_len(b), |uni| {
                if err.is_none() {
                    match f(uni) {
                        Ok(v) => sum += v,
                        Err(e) => err = Some(e),
                    }
                }
            });
            err.map_or(Ok(sum), Err)
        })
        .collect();
    let sums: Vec<f64> = sums.into_iter().collect::<Result<_>>()?;
    let means: Vec<f64> = sums.iter().enumerate().map(|(b, s)| s / cfg.batch_len(b) as f64).collect();
    let (_, se) = batch_mean_and_error(&means);
    Ok((sums.iter().sum::<f64>() / cfg.n_samples as f64, se))
}

/// ∫_D f dV by uniform sampling of the full ball.
pub fn ball_integrate(j: &JMap, integrand: BallIntegrand, cfg: &SamplingConfig) -> Result<IntegralEstimate> {
    let metric = AmbientMetric::new(j.clone());
    let n = metric.dim();
    let (mean, se) = ball_batches(cfg, ball_uniform_dim(n), |uni| {
        let mut p = vec![0.0; n];
        ball_point_from_uniforms(uni, &mut p);
        ball_value(&metric, integrand, &p)
    })?;
    let vol = unit_ball_volume(n);
    Ok(IntegralEstimate { value: vol * mean, std_error: vol * se, n_samples: cfg.n_samples, method: cfg.method.tag().into(), flagged: 0 })
}

/// ∫_D f dV for a torus-invariant f, integrating out the block angles:
/// with u_i = r_i(cos θ_i, sin θ_i) the volume element is Π r_i dx dr dθ,
/// so the integral is (2π)^k ∫ f(x, r) Π r_i over {|x|² + |r|² ≤ 1, r ≥ 0}.
pub fn symmetry_reduced_integrate(j: &JMap, integrand: BallIntegrand, cfg: &SamplingConfig) -> Result<IntegralEstimate> {
    let metric = AmbientMetric::new(j.clone());
    check_torus_invariance(&metric, integrand, cfg.seed)?;
    let (m, k) = (metric.m(), metric.k());
    let d = m + k;
    let (mean, se) = ball_batches(cfg, ball_uniform_dim(d), |uni| {
        let mut y = vec![0.0; d];
        ball_point_from_uniforms(uni, &mut y);
        let mut p = vec![0.0; m + 2 * k];
        p[..m].copy_from_slice(&y[..m]);
        let mut weight = 1.0;
        for i in 0..k {
            let r = y[m + i].abs();
            p[m + 2 * i] = r;
            weight *= r;
        }
        Ok(ball_value(&metric, integrand, &p)? * weight)
    })?;
    let scale = (2.0 * PI).powi(k as i32) * unit_ball_volume(d) / 2f64.powi(k as i32);
    Ok(IntegralEstimate { value: scale * mean, std_error: scale * se, n_samples: cfg.n_samples, method: cfg.method.tag().into(), flagged: 0 })
}

/// Report line for a single invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub invariant: String,
    pub j_id: String,
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl InvariantRecord {
    pub fn new(invariant: &str, j: &JMap, est: &IntegralEstimate, seed: u64) -> Self {
        Self { invariant: invariant.into(), j_id: j.digest(), value: est.value, std_error: est.std_error, n_samples: est.n_samples, seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jmap::random_generic_jmap;

    #[test]
    fn closed_forms() {
        let v9 = 32.0 * (PI * PI * PI * PI) / 945.0;
        assert!((unit_ball_volume(9) - v9).abs() < 1e-14);
        assert!((unit_sphere_area(9) - 32.0 * PI.powi(4) / 105.0).abs() < 1e-13);
        assert!((unit_sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-15);
        let j = random_generic_jmap(5, 2, 42).unwrap();
        assert_eq!(ball_volume(&j, 100, 1).unwrap().value, v9);
        assert_eq!(ball_volume(&JMap::zero(5, 2), 100, 1).unwrap(), ball_volume(&j, 100, 2).unwrap());
    }

    #[test]
    fn round_sphere_values() {
        let cfg = SamplingConfig::new(256, 3);
        let zero = JMap::zero(5, 2);
        let vol = sphere_volume(&zero, &cfg).unwrap();
        let round = unit_sphere_area(9);
        assert!((vol.value - round).abs() < 1e-12 * round);
        let scal = total_scalar_curvature(&zero, &cfg).unwrap();
        assert!((scal.value - 56.0 * round).abs() < 1e-7 * round);
        assert_eq!(scal.flagged, 0);
        assert_eq!(boundary_area(&zero, &cfg).unwrap(), vol);
    }

    #[test]
    fn estimates_are_deterministic() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let cfg = SamplingConfig::new(128, 9);
        assert_eq!(total_scalar_curvature(&j, &cfg).unwrap(), total_scalar_curvature(&j, &cfg).unwrap());
        let halton = SamplingConfig { method: SamplingMethod::Halton, ..cfg };
        let h = total_scalar_curvature(&j, &halton).unwrap();
        assert_eq!(h.method, "low-discrepancy");
        assert!(h.std_error > 0.0);
    }

    #[test]
    fn experimental_integrands_on_round_sphere() {
        let cfg = SamplingConfig::new(64, 4);
        let zero = JMap::zero(5, 2);
        let round = unit_sphere_area(9);
        // Ric = 7g, |Ric|² = 49·8; R = g∧g, |Rm|² = 2n(n−1) = 112
        let ric = sphere_integral(&zero, SphereIntegrand::RicciSquared, &cfg).unwrap();
        assert!((ric.value / round - 392.0).abs() < 1e-6);
        let rm = sphere_integral(&zero, SphereIntegrand::RiemannSquared, &cfg).unwrap();
        assert!((rm.value / round - 112.0).abs() < 1e-6);
    }

    #[test]
    fn reduced_and_full_ball_integrals_agree() {
        let cfg = SamplingConfig::new(1 << 14, 5);
        let zero = JMap::zero(5, 2);
        let one = symmetry_reduced_integrate(&zero, BallIntegrand::One, &cfg).unwrap();
        let exact = unit_ball_volume(9);
        assert!((one.value - exact).abs() <= 3.0 * one.std_error, "{one:?} vs {exact}");
        let scal0 = symmetry_reduced_integrate(&zero, BallIntegrand::ScalarCurvature, &SamplingConfig::new(64, 1)).unwrap();
        assert_eq!(scal0.value, 0.0);

        let j = random_generic_jmap(5, 2, 42).unwrap().scaled(0.5);
        let cfg = SamplingConfig::new(4096, 6);
        let reduced = symmetry_reduced_integrate(&j, BallIntegrand::ScalarCurvature, &cfg).unwrap();
        let full = ball_integrate(&j, BallIntegrand::ScalarCurvature, &SamplingConfig::new(4096, 7)).unwrap();
        let sigma = (reduced.std_error.powi(2) + full.std_error.powi(2)).sqrt();
        assert!((reduced.value - full.value).abs() <= 3.0 * sigma, "{reduced:?} {full:?}");
    }
}
