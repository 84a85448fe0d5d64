//! Continuous isospectral families by predictor–corrector continuation on
//! the variety { j : tr(j(z)^(2r)) = tr(j0(z)^(2r)) for all z, r }.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equivalence::equivalence_search;
use crate::error::{IsoError, Result};
use crate::form::HomogeneousForm;
use crate::jmap::{even_power_traces, genericity_test, isospectral, random_generic_jmap, JMap, PowerTraceBasis};
use crate::linalg::{column_space_basis, gaussian_vector, numerical_rank, orthogonal_complement, row_space_basis, skew_dim, skew_pairs, skew_unit};
use crate::sampling::{derived_seed, rng_for};

/// Relative singular-value cutoff for kernel and rank computations.
pub const RANK_REL_TOL: f64 = 1e-9;

/// Lower bound m(m-1)/2 - [m/2]([m/2]+2) on the number of isospectral,
/// inequivalent parameters for two-dimensional z. `None` where the bound
/// is not asserted (k != 2 or m in {1,2,3,4,6}).
pub fn deformation_bound(m: usize, k: usize) -> Option<i64> {
    if k != 2 || matches!(m, 1 | 2 | 3 | 4 | 6) {
        return None;
    }
    let h = (m / 2) as i64;
    Some((m * (m - 1) / 2) as i64 - h * (h + 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TangentReport {
    pub iso_dim: usize,
    pub orbit_dim: usize,
    pub excess: usize,
}

/// Orthonormal bases (columns, in parameter coordinates) at a point.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    pub kernel: DMatrix<f64>,
    pub orbit: DMatrix<f64>,
    pub horizontal: DMatrix<f64>,
    /// Kernel directions at maximal principal angle to the full orbit span.
    pub transverse: DMatrix<f64>,
    pub report: TangentReport,
}

/// Tangent vectors of the conjugation orbit, z -> [X, j(z)] for the basis
/// X of so(m), followed by the substitutions z -> j(c z) for the basis c of
/// so(k), as parameter-space columns.
pub fn orbit_generators(j: &JMap) -> DMatrix<f64> {
    let (m, k) = (j.m(), j.k());
    let pm = skew_pairs(m);
    let pk = skew_pairs(k);
    let mut out = DMatrix::zeros(j.param_dim(), pm.len() + pk.len());
    for (col, &(a, b)) in pm.iter().enumerate() {
        let x = skew_unit(m, a, b);
        let mats = j.mats().iter().map(|ji| &x * ji - ji * &x).collect();
        out.set_column(col, &JMap::new(m, k, mats).expect("commutators are skew").params());
    }
    for (idx, &(p, q)) in pk.iter().enumerate() {
        let c = skew_unit(k, p, q);
        let mats = (0..k)
            .map(|i| {
                let mut acc = DMatrix::zeros(m, m);
                for l in 0..k {
                    acc += &j.mats()[l] * c[(l, i)];
                }
                acc
            })
            .collect();
        out.set_column(pm.len() + idx, &JMap::new(m, k, mats).expect("skew").params());
    }
    out
}

/// Isospectrality constraints with targets frozen at a reference map.
#[derive(Debug, Clone)]
pub struct IsospectralVariety {
    m: usize,
    k: usize,
    basis: PowerTraceBasis,
    targets: Vec<HomogeneousForm>,
    scales: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct CorrectorSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    pub stall_limit: usize,
}

impl Default for CorrectorSettings {
    fn default() -> Self {
        Self { tol: 1e-11, max_iters: 50, max_halvings: 20, stall_limit: 5 }
    }
}

impl IsospectralVariety {
    pub fn new(j0: &JMap) -> Result<Self> {
        let basis = PowerTraceBasis::new(j0.m(), j0.k())?;
        let targets = basis.forms(j0);
        let scales = targets
            .iter()
            .map(|f| {
                let s = f.max_abs_coeff();
                if s > crate::jmap::FORM_ABS_FLOOR {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { m: j0.m(), k: j0.k(), basis, targets, scales })
    }

    pub fn targets(&self) -> &[HomogeneousForm] {
        &self.targets
    }

    pub fn constraint_count(&self) -> usize {
        self.targets.iter().map(|f| f.coeffs.len()).sum()
    }

    /// Stacked coefficient mismatch, each r scaled by its target magnitude.
    pub fn residual(&self, j: &JMap) -> DVector<f64> {
        let forms = self.basis.forms(j);
        let mut out = Vec::with_capacity(self.constraint_count());
        for ((f, t), s) in forms.iter().zip(&self.targets).zip(&self.scales) {
            out.extend(f.coeffs.iter().zip(&t.coeffs).map(|(a, b)| (a - b) / s));
        }
        DVector::from_vec(out)
    }

    /// Derivative of [`Self::residual`] w.r.t. the parameters of j.
    /// d tr(S^(2r)) = 2r tr(S^(2r-1) dS), and for dS = z_i E_ab this is
    /// -4r z_i (S^(2r-1))_ab because odd powers of S are skew.
    pub fn jacobian(&self, j: &JMap) -> DMatrix<f64> {
        let pairs = skew_pairs(self.m);
        let d = skew_dim(self.m);
        let mut rows = Vec::new();
        for (idx, interp) in self.basis.interps.iter().enumerate() {
            let r = idx + 1;
            let mut node_jac = DMatrix::zeros(interp.len(), j.param_dim());
            for (s, z) in interp.nodes.iter().enumerate() {
                let odd = &even_power_traces(&j.eval(z), r).1[r - 1];
                for i in 0..self.k {
                    for (p, &(a, b)) in pairs.iter().enumerate() {
                        node_jac[(s, i * d + p)] = -4.0 * r as f64 * z[i] * odd[(a, b)];
                    }
                }
            }
            let coeff_jac = interp.fit_columns(&node_jac) / self.scales[idx];
            rows.push(coeff_jac);
        }
        let total: usize = rows.iter().map(|r| r.nrows()).sum();
        let mut out = DMatrix::zeros(total, j.param_dim());
        let mut offset = 0;
        for r in rows {
            out.view_mut((offset, 0), (r.nrows(), r.ncols())).copy_from(&r);
            offset += r.nrows();
        }
        out
    }

    pub fn tangents(&self, j: &JMap) -> TangentSpace {
        let n = j.param_dim();
        let jac = self.jacobian(j);
        let row_space = row_space_basis(&jac, RANK_REL_TOL);
        let kernel = if row_space.ncols() == 0 { DMatrix::identity(n, n) } else { orthogonal_complement(&row_space) };

        // orbit directions that stay on the variety
        let gens = orbit_generators(j);
        let orbit_rank = numerical_rank(&gens, RANK_REL_TOL);
        let orbit = if orbit_rank == 0 {
            DMatrix::zeros(n, 0)
        } else {
            let image = &jac * &gens;
            let moving = row_space_basis(&image, RANK_REL_TOL);
            let null = if moving.ncols() == 0 {
                DMatrix::identity(gens.ncols(), gens.ncols())
            } else {
                orthogonal_complement(&moving)
            };
            column_space_basis(&(&gens * null), RANK_REL_TOL)
        };

        let residual_part = &kernel - &orbit * (orbit.transpose() * &kernel);
        let horizontal = column_space_basis(&residual_part, 1e-6);

        // The substitution tangents z -> j(cz) generally leave the kernel, so
        // the most transverse kernel directions are computed against the
        // whole orbit span, not only against its part inside the kernel.
        let orbit_span = column_space_basis(&gens, RANK_REL_TOL);
        let transverse = if kernel.ncols() == 0 || orbit_span.ncols() == 0 {
            kernel.clone()
        } else {
            let overlap = orbit_span.transpose() * &kernel;
            let svd = overlap.clone().svd(false, true);
            let v_t = svd.v_t.expect("requested");
            let sv = &svd.singular_values;
            let smallest = if kernel.ncols() > sv.len() { 0.0 } else { sv.min() };
            let moving = row_space_basis(&overlap, 1e-12);
            let free = if moving.ncols() < kernel.ncols() { orthogonal_complement(&moving) } else { DMatrix::zeros(kernel.ncols(), 0) };
            if free.ncols() > 0 && smallest < 1e-8 {
                column_space_basis(&(&kernel * free), 1e-6)
            } else {
                let idx = (0..sv.len()).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).expect("nonempty");
                DMatrix::from_column_slice(n, 1, (&kernel * v_t.row(idx).transpose()).as_slice())
            }
        };
        let report = TangentReport {
            iso_dim: kernel.ncols(),
            orbit_dim: orbit.ncols(),
            excess: kernel.ncols().saturating_sub(orbit.ncols()),
        };
        TangentSpace { kernel, orbit, horizontal, transverse, report }
    }

    pub fn max_residual(&self, j: &JMap) -> f64 {
        self.residual(j).amax()
    }

    /// Predictor j + h * direction, then damped Gauss–Newton (minimum-norm
    /// steps, Armijo backtracking) back onto the frozen targets.
    pub fn step_and_project(&self, j: &JMap, direction: &DVector<f64>, h: f64, settings: CorrectorSettings) -> Result<JMap> {
        let mut p = j.params() + direction * h;
        let mut current = JMap::from_params(self.m, self.k, &p)?;
        let mut r = self.residual(&current);
        let mut stalls = 0;
        for _ in 0..settings.max_iters {
            let res = r.amax();
            if res <= settings.tol {
                return Ok(current);
            }
            if !res.is_finite() {
                return Err(IsoError::StepFailure("residual is not finite".into()));
            }
            let jac = self.jacobian(&current);
            let svd = jac.svd(true, true);
            let cutoff = 1e-12 * svd.singular_values.amax();
            let delta = -svd
                .solve(&r, cutoff)
                .map_err(|e| IsoError::Numerical(format!("pseudo-inverse: {e}")))?;
            let f0 = r.norm_squared();
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=settings.max_halvings {
                let trial = JMap::from_params(self.m, self.k, &(&p + &delta * alpha))?;
                let rt = self.residual(&trial);
                if rt.norm_squared() <= (1.0 - 1e-4 * alpha) * f0 {
                    accepted = Some((trial, rt));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((trial, rt)) = accepted else {
                return Err(IsoError::StepFailure(format!("line search exhausted at residual {res:e}")));
            };
            if rt.amax() > 0.999 * res {
                stalls += 1;
                if stalls >= settings.stall_limit {
                    return Err(IsoError::StepFailure(format!("residual stalled at {res:e}")));
                }
            } else {
                stalls = 0;
            }
            p = trial.params();
            current = trial;
            r = rt;
        }
        if r.amax() <= settings.tol {
            Ok(current)
        } else {
            Err(IsoError::StepFailure(format!("no convergence in {} iterations (residual {:e})", settings.max_iters, r.amax())))
        }
    }
}

/// Tangent data at `j` with targets taken at `j` itself.
pub fn isospectral_tangents(j: &JMap) -> Result<TangentSpace> {
    Ok(IsospectralVariety::new(j)?.tangents(j))
}

/// One predictor–corrector step with targets frozen at `j0`.
pub fn step_and_project(j0: &JMap, j: &JMap, direction: &DVector<f64>, h: f64) -> Result<JMap> {
    if !(h >= 0.0) {
        return Err(IsoError::Config(format!("step size must be non-negative, got {h}")));
    }
    IsospectralVariety::new(j0)?.step_and_project(j, direction, h, CorrectorSettings::default())
}

/// A generic map accepted after reseeding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptedDraw {
    pub jmap: JMap,
    pub requested_seed: u64,
    pub accepted_seed: u64,
    pub commutant_dim: usize,
    pub tangents: TangentReport,
    pub bound: Option<i64>,
}

pub const MAX_RESEEDS: u32 = 100;

/// Draws from seed, seed+1, ... until the commutant is trivial and the
/// tangent excess meets the deformation bound (or is at least one where no
/// bound applies).
pub fn accept_generic(m: usize, k: usize, seed: u64) -> Result<AcceptedDraw> {
    let bound = deformation_bound(m, k);
    let needed = bound.unwrap_or(1).max(1) as usize;
    for attempt in 0..MAX_RESEEDS {
        let s = seed.wrapping_add(attempt as u64);
        let j = random_generic_jmap(m, k, s)?;
        if genericity_test(&j) != 0 {
            continue;
        }
        let t = isospectral_tangents(&j)?;
        if t.report.excess >= needed {
            return Ok(AcceptedDraw {
                jmap: j,
                requested_seed: seed,
                accepted_seed: s,
                commutant_dim: 0,
                tangents: t.report,
                bound,
            });
        }
    }
    Err(IsoError::GenericityUnobtainable { seed, attempts: MAX_RESEEDS })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberCertificate {
    /// power-trace deviation against j_0
    pub iso_residual: f64,
    /// equivalence-search residual floor against j_0
    pub ineq_residual: f64,
    pub restarts: usize,
    pub commutant_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsospectralFamily {
    pub params: Vec<f64>,
    pub members: Vec<JMap>,
    pub certificates: Vec<MemberCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl IsospectralFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn seed_map(&self) -> &JMap {
        &self.members[0]
    }

    pub fn endpoint(&self) -> &JMap {
        self.members.last().expect("family is never empty")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FamilySettings {
    pub restarts: usize,
    pub seed: u64,
    pub iso_tol: f64,
    pub max_step_halvings: usize,
}

impl Default for FamilySettings {
    fn default() -> Self {
        Self { restarts: 20, seed: 0, iso_tol: 1e-10, max_step_halvings: 8 }
    }
}

fn pick_direction(candidates: &DMatrix<f64>, previous: Option<&DVector<f64>>, reference: &DVector<f64>) -> DVector<f64> {
    let guide = previous.unwrap_or(reference);
    let mut d = candidates * (candidates.transpose() * guide);
    if d.norm() < 1e-8 * guide.norm() {
        d = candidates.column(0).into_owned();
    }
    let d = d.normalize();
    match previous {
        Some(prev) if d.dot(prev) < 0.0 => -d,
        _ => d,
    }
}

/// Builds a certified one-parameter isospectral family from `j0`.
///
/// Each step follows the kernel direction of largest principal angle to the
/// orbit tangents (ties broken by continuity with the previous step), corrects
/// back onto the variety of `j0`, and re-certifies the new member. The step
/// size is halved on corrector failure; if certification fails the family
/// is truncated and `diagnostic` says why.
pub fn build_family(j0: &JMap, n_steps: usize, h: f64, settings: FamilySettings) -> Result<IsospectralFamily> {
    let commutant = genericity_test(j0);
    if commutant != 0 {
        return Err(IsoError::NotGeneric(commutant));
    }
    let variety = IsospectralVariety::new(j0)?;
    if variety.tangents(j0).report.excess == 0 {
        return Err(IsoError::NoDeformation);
    }
    let mut fam = IsospectralFamily {
        params: vec![0.0],
        members: vec![j0.clone()],
        certificates: vec![MemberCertificate { iso_residual: 0.0, ineq_residual: 0.0, restarts: 0, commutant_dim: 0 }],
        diagnostic: None,
    };
    let reference = gaussian_vector(j0.param_dim(), &mut rng_for(settings.seed));
    let mut previous: Option<DVector<f64>> = None;
    let mut t = 0.0;
    'steps: for step in 1..=n_steps {
        let current = fam.endpoint().clone();
        let ts = variety.tangents(&current);
        if ts.report.excess == 0 || ts.transverse.ncols() == 0 {
            fam.diagnostic = Some(format!("step {step}: no transverse tangent direction"));
            break;
        }
        let dir = pick_direction(&ts.transverse, previous.as_ref(), &reference);
        let mut h_try = h;
        let mut next = None;
        let mut last_err = None;
        for _ in 0..=settings.max_step_halvings {
            match variety.step_and_project(&current, &dir, h_try, CorrectorSettings::default()) {
                Ok(jn) => {
                    next = Some(jn);
                    break;
                }
                Err(e @ IsoError::StepFailure(_)) => {
                    last_err = Some(e);
                    h_try *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        let Some(jn) = next else {
            fam.diagnostic = Some(format!("step {step}: corrector failed ({})", last_err.map(|e| e.to_string()).unwrap_or_default()));
            break 'steps;
        };
        let iso = isospectral(j0, &jn, settings.iso_tol)?;
        if !iso.isospectral {
            fam.diagnostic = Some(format!("step {step}: isospectrality certificate failed ({:e})", iso.max_deviation()));
            break;
        }
        let witness = equivalence_search(j0, &jn, settings.restarts, derived_seed(settings.seed, step as u64))?;
        let commutant_dim = genericity_test(&jn);
        t += h_try;
        fam.params.push(t);
        fam.members.push(jn);
        fam.certificates.push(MemberCertificate {
            iso_residual: iso.max_deviation(),
            ineq_residual: witness.residual,
            restarts: settings.restarts,
            commutant_dim,
        });
        previous = Some(dir);
    }
    Ok(fam)
}

/// Multiplies every member by c > 0. Relative power-trace deviations are
/// scale-free and equivalence residuals scale linearly.
pub fn scale_family(fam: &IsospectralFamily, c: f64) -> Result<IsospectralFamily> {
    if !(c > 0.0) {
        return Err(IsoError::NonPositiveScale(c));
    }
    if c == 1.0 {
        return Ok(fam.clone());
    }
    let members: Vec<JMap> = fam.members.iter().map(|j| j.scaled(c)).collect();
    let certificates = fam
        .certificates
        .iter()
        .zip(&members)
        .map(|(cert, j)| {
            let iso = isospectral(&members[0], j, 1.0).map(|r| r.max_deviation()).unwrap_or(f64::INFINITY);
            MemberCertificate { iso_residual: iso, ineq_residual: cert.ineq_residual * c, ..cert.clone() }
        })
        .collect();
    Ok(IsospectralFamily { params: fam.params.clone(), members, certificates, diagnostic: fam.diagnostic.clone() })
}
