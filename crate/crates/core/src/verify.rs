//! Machine checks of the intertwining hypotheses behind the isospectrality
//! of g_j and g_j2 for isospectral j, j2: the conjugator identity per
//! subtorus direction, the torus equivariance of τ_K, the intertwining of
//! orbit mean curvatures, and evidence that the metrics are not isometric.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambient::{principal_ball_point, torus_action, AmbientMetric};
use crate::canonical::canonical_conjugator;
use crate::curvature::orbit_mean_curvature;
use crate::deform::IsospectralFamily;
use crate::equivalence::{equivalence_search, EQUIVALENCE_CERT_TOL};
use crate::error::{IsoError, Result};
use crate::jmap::{genericity_test, substitute_basis, trace_word_invariants, JMap};
use crate::linalg::{gaussian_vector, haar_orthogonal};
use crate::sampling::{ball_point, derived_seed, rng_for};

/// Primitive integer vector Z; the subtorus K is the one with Lie algebra Z⟂.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct SubtorusDirection {
    z: Vec<i64>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl SubtorusDirection {
    pub fn new(z: Vec<i64>) -> Result<Self> {
        if z.iter().all(|&v| v == 0) {
            return Err(IsoError::Config("subtorus direction must be nonzero".into()));
        }
        let g = z.iter().fold(0, |acc, &v| gcd(acc, v));
        if g != 1 {
            return Err(IsoError::Config(format!("subtorus direction {z:?} is not primitive (gcd {g})")));
        }
        Ok(Self { z })
    }

    pub fn entries(&self) -> &[i64] {
        &self.z
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.z.iter().map(|&v| v as f64).collect()
    }

    /// Integer basis of Z⟂: with a pivot p where Z_p ≠ 0, the vectors
    /// Z_p e_i − Z_i e_p for i ≠ p.
    pub fn kernel_basis(&self) -> Vec<Vec<i64>> {
        let k = self.z.len();
        let p = self.z.iter().position(|&v| v != 0).expect("nonzero");
        (0..k)
            .filter(|&i| i != p)
            .map(|i| {
                let mut w = vec![0; k];
                w[i] = self.z[p];
                w[p] -= self.z[i];
                w
            })
            .collect()
    }

    /// All primitive vectors with max-norm ≤ `max_norm`, one per ± pair
    /// (first nonzero entry positive), ordered by max-norm, support size, then
    /// descending entries, so the coordinate directions come first.
    pub fn all_up_to(k: usize, max_norm: i64) -> Vec<Self> {
        let side = (2 * max_norm + 1) as usize;
        let mut out = Vec::new();
        for idx in 0..side.pow(k as u32) {
            let mut rest = idx;
            let z: Vec<i64> = (0..k)
                .map(|_| {
                    let v = (rest % side) as i64 - max_norm;
                    rest /= side;
                    v
                })
                .rev()
                .collect();
            let first = z.iter().find(|&&v| v != 0);
            if matches!(first, Some(&v) if v > 0) {
                if let Ok(d) = Self::new(z) {
                    out.push(d);
                }
            }
        }
        out.sort_by(|a, b| {
            let na = a.z.iter().map(|v| v.abs()).max();
            let nb = b.z.iter().map(|v| v.abs()).max();
            let nz = |d: &Self| d.z.iter().filter(|&&v| v != 0).count();
            na.cmp(&nb).then_with(|| nz(a).cmp(&nz(b))).then_with(|| b.z.cmp(&a.z))
        });
        out
    }
}

impl TryFrom<Vec<i64>> for SubtorusDirection {
    type Error = IsoError;
    fn try_from(z: Vec<i64>) -> Result<Self> {
        Self::new(z)
    }
}

impl From<SubtorusDirection> for Vec<i64> {
    fn from(d: SubtorusDirection) -> Self {
        d.z
    }
}

fn check_pair(j: &JMap, j2: &JMap, dir: &SubtorusDirection) -> Result<()> {
    if j.m() != j2.m() || j.k() != j2.k() || dir.k() != j.k() {
        return Err(IsoError::Dimension(format!(
            "pair ({}, {}) / ({}, {}) with direction of length {}",
            j.m(),
            j.k(),
            j2.m(),
            j2.k(),
            dir.k()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatorIdentityRecord {
    /// |A j(Z) Aᵀ − j2(Z)|_F / |j(Z)|_F
    pub conjugator_residual: f64,
    /// max over samples of |⟨B2(Ax, Ay) − B(x, y), Z⟩| / (|x||y||j(Z)|_F)
    pub residual: f64,
    #[serde(with = "crate::equivalence::matrix_rows")]
    pub conjugator: DMatrix<f64>,
}

fn relative(v: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        v / scale
    } else {
        v
    }
}

/// ⟨B2(Ax, Ay), Z⟩ = ⟨B(x, y), Z⟩ at random x, y for the canonical
/// conjugator A of j(Z) and j2(Z). A failing pair yields a large residual
/// rather than an error so that negative controls can be reported.
pub fn check_conjugator_identity(j: &JMap, j2: &JMap, dir: &SubtorusDirection, samples: usize, seed: u64) -> Result<ConjugatorIdentityRecord> {
    check_pair(j, j2, dir)?;
    let z = dir.as_f64();
    let (s1, s2) = (j.eval(&z), j2.eval(&z));
    let (a, conj_res, _) = canonical_conjugator(&s1, &s2);
    let scale = s1.norm();
    let mut rng = rng_for(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = gaussian_vector(j.m(), &mut rng);
        let y = gaussian_vector(j.m(), &mut rng);
        let lhs = (&s2 * (&a * &x)).dot(&(&a * &y));
        let rhs = (&s1 * &x).dot(&y);
        worst = worst.max(relative((lhs - rhs).abs(), x.norm() * y.norm() * scale));
    }
    Ok(ConjugatorIdentityRecord { conjugator_residual: relative(conj_res, scale), residual: worst, conjugator: a })
}

/// Equivariance of τ(x, u) = (A x, u) under the torus and preservation of
/// the Euclidean norm (so that D and S are mapped to themselves), for a
/// given matrix A.
pub fn tau_equivariance_with(a: &DMatrix<f64>, k: usize, samples: usize, seed: u64) -> f64 {
    let m = a.nrows();
    let mut rng = rng_for(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = ball_point(m + 2 * k, &mut rng);
        let x = DVector::from_column_slice(&p[..m]);
        let u = DVector::from_column_slice(&p[m..]);
        let zbar: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let (tx, tu) = (a * &x, u.clone());
        let (x1, u1) = torus_action(&zbar, &tx, &tu);
        let (x2, u2) = torus_action(&zbar, &x, &u);
        let (x3, u3) = (a * &x2, u2);
        worst = worst.max((x1 - x3).amax()).max((u1 - u3).amax());
        let before = (x.norm_squared() + u.norm_squared()).sqrt();
        let after = (tx.norm_squared() + tu.norm_squared()).sqrt();
        worst = worst.max((after - before).abs());
    }
    worst
}

pub fn check_tau_equivariance(dir: &SubtorusDirection, j: &JMap, j2: &JMap, samples: usize, seed: u64) -> Result<f64> {
    check_pair(j, j2, dir)?;
    let z = dir.as_f64();
    let (a, _, _) = canonical_conjugator(&j.eval(&z), &j2.eval(&z));
    Ok(tau_equivariance_with(&a, j.k(), samples, seed))
}

fn mean_curvature_deviation(j: &JMap, j2: &JMap, a: &DMatrix<f64>, basis: &[Vec<i64>], samples: usize, seed: u64) -> Result<f64> {
    let (m, k) = (j.m(), j.k());
    let mut rng = rng_for(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    while done < samples {
        attempts += 1;
        if attempts > 100 * samples.max(1) {
            return Err(IsoError::DegenerateOrbit(0.0));
        }
        let p = principal_ball_point(m, k, &mut rng);
        let x = DVector::from_column_slice(&p[..m]);
        let mut q = (a * x).as_slice().to_vec();
        q.extend_from_slice(&p[m..]);
        let (h1, h2) = match (orbit_mean_curvature(j, basis, &p), orbit_mean_curvature(j2, basis, &q)) {
            (Ok(h1), Ok(h2)) => (h1, h2),
            (Err(IsoError::DegenerateOrbit(_)), _) | (_, Err(IsoError::DegenerateOrbit(_))) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        // dτ = diag(A, I) carries the mean curvature of the orbit through p
        // to that of the orbit through τ(p)
        let hx = a * DVector::from_column_slice(&h1.vector[..m]);
        let pushed = hx.iter().chain(&h1.vector[m..]);
        for (v1, v2) in pushed.zip(&h2.vector) {
            worst = worst.max((v1 - v2).abs());
        }
        done += 1;
    }
    Ok(worst)
}

/// Compares dτ_K of the mean curvature of K-orbits for g_j at (x, u) with
/// the mean curvature for g_j2 at τ_K(x, u) = (A x, u).
pub fn check_mean_curvature_intertwining(j: &JMap, j2: &JMap, dir: &SubtorusDirection, samples: usize, seed: u64) -> Result<f64> {
    check_pair(j, j2, dir)?;
    let z = dir.as_f64();
    let (a, _, _) = canonical_conjugator(&j.eval(&z), &j2.eval(&z));
    let basis = dir.kernel_basis();
    if basis.is_empty() {
        // K is trivial: its orbits are points
        return Ok(0.0);
    }
    mean_curvature_deviation(j, j2, &a, &basis, samples, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub conjugator_identity: f64,
    pub tau: f64,
    pub mean_curvature: f64,
    pub quotient: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { conjugator_identity: 1e-10, tau: 1e-12, mean_curvature: 1e-8, quotient: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub samples: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { samples: 20, seed: 0, tolerances: Tolerances::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub pair: (usize, usize),
    pub direction: SubtorusDirection,
    pub conjugator_residual: f64,
    pub identity_residual: f64,
    pub mean_curvature_residual: f64,
    pub tau_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pass: bool,
}

/// The K = T case: τ_T is the identity and the quotient data (Euclidean
/// base metric, fiber radii) do not involve j at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusBranchRecord {
    pub pair: (usize, usize),
    pub quotient_data_equal: bool,
    /// max |Q_j − Q_j2| of the quotient metric in coordinates (x, r)
    pub quotient_metric_residual: f64,
    pub mean_curvature_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub records: Vec<DirectionRecord>,
    pub torus_branch: Vec<TorusBranchRecord>,
    pub tolerances: Tolerances,
    pub failing_pairs: Vec<(usize, usize)>,
    pub pass: bool,
}

/// The j-independent data of the quotient by the full torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientData {
    pub base_dim: usize,
    pub radii: Vec<f64>,
}

pub fn quotient_data(j: &JMap, point: &[f64]) -> QuotientData {
    let m = j.m();
    QuotientData { base_dim: m, radii: point[m..].chunks(2).map(|b| b[0].hypot(b[1])).collect() }
}

/// Metric of the quotient by the full torus in coordinates (x, r): the
/// coordinate fields ∂_x, ∂_r lifted and projected g-orthogonally off the
/// orbit tangents.
pub fn torus_quotient_metric(j: &JMap, point: &[f64]) -> Result<DMatrix<f64>> {
    let (m, k) = (j.m(), j.k());
    let n = m + 2 * k;
    let metric = AmbientMetric::new(j.clone());
    let g = metric.metric_at_point(point)?;
    let u = &point[m..];
    let mut tangents = Vec::with_capacity(k);
    let mut coords = Vec::with_capacity(m + k);
    for c in 0..m {
        let mut v = DVector::zeros(n);
        v[c] = 1.0;
        coords.push(v);
    }
    for i in 0..k {
        let r = u[2 * i].hypot(u[2 * i + 1]);
        if r < crate::ambient::PRINCIPAL_RADIUS_MIN {
            return Err(IsoError::DegenerateOrbit(r));
        }
        let mut radial = DVector::zeros(n);
        radial[m + 2 * i] = u[2 * i] / r;
        radial[m + 2 * i + 1] = u[2 * i + 1] / r;
        coords.push(radial);
        let mut t = DVector::zeros(n);
        t[m + 2 * i] = -u[2 * i + 1];
        t[m + 2 * i + 1] = u[2 * i];
        tangents.push(t);
    }
    let h = DMatrix::from_fn(k, k, |a, b| (tangents[a].transpose() * &g * &tangents[b])[0]);
    let h_inv = h.try_inverse().ok_or(IsoError::DegenerateOrbit(0.0))?;
    let projected: Vec<DVector<f64>> = coords
        .iter()
        .map(|v| {
            let rhs = DVector::from_iterator(k, tangents.iter().map(|t| (t.transpose() * &g * v)[0]));
            let c = &h_inv * rhs;
            let mut out = v.clone();
            for (ci, t) in c.iter().zip(&tangents) {
                out -= t * *ci;
            }
            out
        })
        .collect();
    Ok(DMatrix::from_fn(m + k, m + k, |a, b| (projected[a].transpose() * &g * &projected[b])[0]))
}

fn torus_branch(j: &JMap, j2: &JMap, pair: (usize, usize), cfg: &SuiteConfig, seed: u64) -> TorusBranchRecord {
    let run = || -> Result<(bool, f64, f64)> {
        let (m, k) = (j.m(), j.k());
        let mut rng = rng_for(seed);
        let mut equal = true;
        let mut worst: f64 = 0.0;
        for _ in 0..cfg.samples {
            let p = principal_ball_point(m, k, &mut rng);
            equal &= quotient_data(j, &p) == quotient_data(j2, &p);
            let diff = torus_quotient_metric(j, &p)? - torus_quotient_metric(j2, &p)?;
            worst = worst.max(diff.amax());
        }
        let full: Vec<Vec<i64>> = (0..k)
            .map(|i| {
                let mut w = vec![0; k];
                w[i] = 1;
                w
            })
            .collect();
        let mc = mean_curvature_deviation(j, j2, &DMatrix::identity(m, m), &full, cfg.samples, seed ^ 0x5a5a)?;
        Ok((equal, worst, mc))
    };
    match run() {
        Ok((equal, q, mc)) => TorusBranchRecord {
            pair,
            quotient_data_equal: equal,
            quotient_metric_residual: q,
            mean_curvature_residual: mc,
            error: None,
            pass: equal && q <= cfg.tolerances.quotient && mc <= cfg.tolerances.mean_curvature,
        },
        Err(e) => TorusBranchRecord {
            pair,
            quotient_data_equal: false,
            quotient_metric_residual: f64::NAN,
            mean_curvature_residual: f64::NAN,
            error: Some(e.to_string()),
            pass: false,
        },
    }
}

fn direction_record(j: &JMap, j2: &JMap, pair: (usize, usize), dir: &SubtorusDirection, cfg: &SuiteConfig, seed: u64) -> DirectionRecord {
    let run = || -> Result<(ConjugatorIdentityRecord, f64, f64)> {
        let eq = check_conjugator_identity(j, j2, dir, cfg.samples, seed)?;
        let tau = check_tau_equivariance(dir, j, j2, cfg.samples, seed ^ 1)?;
        let mc = check_mean_curvature_intertwining(j, j2, dir, cfg.samples, seed ^ 2)?;
        Ok((eq, tau, mc))
    };
    let tol = &cfg.tolerances;
    match run() {
        Ok((eq, tau, mc)) => DirectionRecord {
            pair,
            direction: dir.clone(),
            conjugator_residual: eq.conjugator_residual,
            identity_residual: eq.residual,
            mean_curvature_residual: mc,
            tau_residual: tau,
            error: None,
            pass: eq.residual <= tol.conjugator_identity && tau <= tol.tau && mc <= tol.mean_curvature,
        },
        Err(e) => DirectionRecord {
            pair,
            direction: dir.clone(),
            conjugator_residual: f64::NAN,
            identity_residual: f64::NAN,
            mean_curvature_residual: f64::NAN,
            tau_residual: f64::NAN,
            error: Some(e.to_string()),
            pass: false,
        },
    }
}

/// Consecutive pairs followed by the endpoint pair (when distinct).
pub fn suite_pairs(len: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (1..len).map(|i| (i - 1, i)).collect();
    if len > 2 {
        pairs.push((0, len - 1));
    }
    pairs
}

/// Runs every check for every suite pair and direction, plus the K = T
/// branch per pair. Sub-check errors are recorded and count as failures.
pub fn run_hypothesis_suite(family: &IsospectralFamily, directions: &[SubtorusDirection], cfg: &SuiteConfig) -> HypothesisReport {
    let pairs = suite_pairs(family.len());
    let tasks: Vec<((usize, usize), &SubtorusDirection)> = pairs.iter().flat_map(|&p| directions.iter().map(move |d| (p, d))).collect();
    let records: Vec<DirectionRecord> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, (pair, dir))| {
            direction_record(&family.members[pair.0], &family.members[pair.1], *pair, dir, cfg, derived_seed(cfg.seed, i as u64))
        })
        .collect();
    let torus: Vec<TorusBranchRecord> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            torus_branch(&family.members[pair.0], &family.members[pair.1], *pair, cfg, derived_seed(cfg.seed, (tasks.len() + i) as u64))
        })
        .collect();
    let mut failing_pairs: Vec<(usize, usize)> = records
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.pair)
        .chain(torus.iter().filter(|r| !r.pass).map(|r| r.pair))
        .collect();
    failing_pairs.sort_unstable();
    failing_pairs.dedup();
    HypothesisReport { pass: failing_pairs.is_empty(), records, torus_branch: torus, tolerances: cfg.tolerances, failing_pairs }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceConfig {
    pub restarts: usize,
    pub seed: u64,
    /// residual floor required to conclude non-isometry
    pub threshold: f64,
    /// grid resolution over each component of O(2)
    pub grid: usize,
    pub max_word_len: usize,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self { restarts: 50, seed: 0, threshold: 1e-3, grid: 720, max_word_len: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Verdict {
    /// "isometric construction data (equivalent j-maps)"
    Equivalent { residual: f64 },
    /// "metrics not isometric, at evidence level ρ"
    NotIsometric { evidence_level: f64 },
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn describe(&self) -> String {
        match self {
            Self::Equivalent { residual } => format!("isometric construction data (equivalent j-maps), witness residual {residual:e}"),
            Self::NotIsometric { evidence_level } => format!("metrics not isometric, at evidence level {evidence_level:e}"),
            Self::Inconclusive { reason } => format!("inconclusive: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub commutant_dim: usize,
    pub genericity_pass: bool,
    pub equivalence_residual: f64,
    pub restarts: usize,
    /// min over the candidate grid C of max |trace words(j ∘ C) − trace words(j2)|
    pub trace_word_separation: f64,
    pub verdict: Verdict,
    pub summary: String,
}

fn candidate_substitutions(k: usize, cfg: &EvidenceConfig) -> Vec<DMatrix<f64>> {
    if k == 2 {
        let mut out = Vec::with_capacity(2 * cfg.grid);
        for s in 0..cfg.grid {
            let t = std::f64::consts::TAU * s as f64 / cfg.grid as f64;
            let (sn, cs) = t.sin_cos();
            out.push(DMatrix::from_row_slice(2, 2, &[cs, -sn, sn, cs]));
            out.push(DMatrix::from_row_slice(2, 2, &[cs, sn, sn, -cs]));
        }
        out
    } else if k == 1 {
        vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, -1.0)]
    } else {
        let mut rng = rng_for(cfg.seed);
        (0..2 * cfg.grid).map(|_| haar_orthogonal(k, &mut rng)).collect()
    }
}

/// Separation of trace-word invariants, minimised over substitutions C.
pub fn trace_word_separation(j: &JMap, j2: &JMap, cfg: &EvidenceConfig) -> Result<f64> {
    let target = trace_word_invariants(j2, cfg.max_word_len);
    let mut best = f64::INFINITY;
    for c in candidate_substitutions(j.k(), cfg) {
        let words = trace_word_invariants(&substitute_basis(j, &c)?, cfg.max_word_len);
        let d = words.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        best = best.min(d);
    }
    Ok(best)
}

/// Contrapositive evidence that g_j and g_j2 are not isometric: for
/// generic j an isometry would force j and j2 to be equivalent.
pub fn non_isometry_evidence(j: &JMap, j2: &JMap, cfg: &EvidenceConfig) -> Result<EvidenceRecord> {
    let commutant_dim = genericity_test(j);
    let witness = equivalence_search(j, j2, cfg.restarts, cfg.seed)?;
    let separation = trace_word_separation(j, j2, cfg)?;
    let verdict = if commutant_dim != 0 {
        Verdict::Inconclusive { reason: format!("genericity hypothesis unmet (commutant dimension {commutant_dim})") }
    } else if witness.residual <= EQUIVALENCE_CERT_TOL {
        Verdict::Equivalent { residual: witness.residual }
    } else if witness.residual >= cfg.threshold {
        Verdict::NotIsometric { evidence_level: witness.residual }
    } else {
        Verdict::Inconclusive { reason: format!("residual floor {:e} below threshold {:e}", witness.residual, cfg.threshold) }
    };
    Ok(EvidenceRecord {
        commutant_dim,
        genericity_pass: commutant_dim == 0,
        equivalence_residual: witness.residual,
        restarts: cfg.restarts,
        trace_word_separation: separation,
        summary: format!("{} ({} restarts)", verdict.describe(), cfg.restarts),
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{build_family, FamilySettings};
    use crate::jmap::random_generic_jmap;
    use crate::linalg::{gaussian_matrix, skew_defect};

    fn dirs() -> Vec<SubtorusDirection> {
        [[1, 0], [0, 1], [1, 1], [1, -1]].iter().map(|z| SubtorusDirection::new(z.to_vec()).unwrap()).collect()
    }

    #[test]
    fn directions() {
        assert!(SubtorusDirection::new(vec![0, 0]).is_err());
        assert!(SubtorusDirection::new(vec![2, 4]).is_err());
        let all = SubtorusDirection::all_up_to(2, 2);
        assert_eq!(all.len(), 8);
        assert_eq!(all[..4], dirs()[..]);
        let d = SubtorusDirection::new(vec![2, -3, 5]).unwrap();
        for w in d.kernel_basis() {
            assert_eq!(w.iter().zip(d.entries()).map(|(a, b)| a * b).sum::<i64>(), 0);
        }
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, "[2,-3,5]");
        assert!(serde_json::from_str::<SubtorusDirection>("[2,4]").is_err());
    }

    #[test]
    fn identical_pair_passes() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        for d in dirs() {
            assert!(check_conjugator_identity(&j, &j, &d, 50, 1).unwrap().residual <= 1e-14);
            assert!(check_tau_equivariance(&d, &j, &j, 50, 1).unwrap() <= 1e-14);
            assert!(check_mean_curvature_intertwining(&j, &j, &d, 10, 1).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn broken_pair_fails_conjugator_identity() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let mut rng = rng_for(3);
        let mats = j
            .mats()
            .iter()
            .map(|m| {
                let e = gaussian_matrix(5, 5, &mut rng);
                m + (&e - e.transpose()) * 0.5e-3
            })
            .collect();
        let broken = JMap::new(5, 2, mats).unwrap();
        let rec = check_conjugator_identity(&j, &broken, &dirs()[0], 50, 1).unwrap();
        assert!(rec.residual > 1e-4, "{}", rec.residual);
        assert!(rec.residual <= rec.conjugator_residual + 1e-12);
    }

    #[test]
    fn non_orthogonal_tau_fails() {
        let mut a = DMatrix::identity(5, 5);
        a[(0, 1)] = 0.3;
        assert!(tau_equivariance_with(&a, 2, 50, 1) > 1e-12);
        let q = haar_orthogonal(5, &mut rng_for(2));
        assert!(tau_equivariance_with(&q, 2, 100, 1) <= 1e-14);
    }

    #[test]
    fn suite_on_short_family() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let fam = build_family(&j, 2, 5e-3, FamilySettings { restarts: 4, ..Default::default() }).unwrap();
        let cfg = SuiteConfig { samples: 5, ..Default::default() };
        let report = run_hypothesis_suite(&fam, &dirs(), &cfg);
        assert!(report.pass, "{:#?}", report.failing_pairs);
        assert_eq!(report.records.len(), 3 * 4);
        assert!(report.torus_branch.iter().all(|t| t.quotient_data_equal));

        let single = build_family(&j, 0, 5e-3, FamilySettings::default()).unwrap();
        assert!(run_hypothesis_suite(&single, &dirs(), &cfg).pass);

        let mut tampered = fam.clone();
        let bump = tampered.members[1].params().map(|v| v + 1e-3);
        tampered.members[1] = JMap::from_params(5, 2, &bump).unwrap();
        let bad = run_hypothesis_suite(&tampered, &dirs(), &cfg);
        assert!(!bad.pass);
        assert!(bad.failing_pairs.contains(&(0, 1)) && bad.failing_pairs.contains(&(1, 2)));
        assert!(!bad.failing_pairs.contains(&(0, 2)));
    }

    #[test]
    fn quotient_metric_is_euclidean() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let p = principal_ball_point(5, 2, &mut rng_for(1));
        let q = torus_quotient_metric(&j, &p).unwrap();
        assert!((q - DMatrix::identity(7, 7)).amax() < 1e-12);
    }

    #[test]
    fn evidence_verdicts() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let cfg = EvidenceConfig { restarts: 20, grid: 90, ..Default::default() };
        let mut rng = rng_for(5);
        let a0 = haar_orthogonal(5, &mut rng);
        let c0 = haar_orthogonal(2, &mut rng);
        let planted = substitute_basis(&j, &c0).unwrap().conjugated(&a0);
        let ev = non_isometry_evidence(&j, &planted, &cfg).unwrap();
        assert!(matches!(ev.verdict, Verdict::Equivalent { .. }), "{}", ev.summary);
        let zero = non_isometry_evidence(&JMap::zero(5, 2), &JMap::zero(5, 2), &cfg).unwrap();
        assert!(matches!(zero.verdict, Verdict::Inconclusive { .. }));
        assert!(skew_defect(&planted.mats()[0]) < 1e-14);
    }
}
