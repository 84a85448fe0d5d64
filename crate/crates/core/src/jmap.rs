//! Linear maps j: R^k -> so(m), their spectral data, and the cheap
//! invariants used to compare them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{IsoError, Result};
use crate::form::{relative_deviation, FormInterpolator, HomogeneousForm};
use crate::linalg::{require_orthogonal, singular_values, skew_defect, skew_dim, skew_pairs, skew_unit};
use crate::sampling::rng_for;

/// A linear map z -> j(z) = sum_i z_i J_i into skew-symmetric m x m matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct JMap {
    m: usize,
    k: usize,
    mats: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JMapRepr {
    m: usize,
    k: usize,
    mats: Vec<Vec<f64>>,
}

impl Serialize for JMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mats = self
            .mats
            .iter()
            .map(|a| (0..self.m).flat_map(|r| (0..self.m).map(move |c| a[(r, c)])).collect())
            .collect();
        JMapRepr { m: self.m, k: self.k, mats }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for JMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = JMapRepr::deserialize(d)?;
        let mats = repr
            .mats
            .iter()
            .map(|rows| {
                if rows.len() != repr.m * repr.m {
                    return Err(serde::de::Error::custom(format!(
                        "matrix has {} entries, expected {}",
                        rows.len(),
                        repr.m * repr.m
                    )));
                }
                Ok(DMatrix::from_row_slice(repr.m, repr.m, rows))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        JMap::new(repr.m, repr.k, mats).map_err(serde::de::Error::custom)
    }
}

/// Entrywise skew-symmetry tolerance for stored matrices.
pub const SKEW_TOL: f64 = 1e-14;

impl JMap {
    pub fn new(m: usize, k: usize, mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(IsoError::Dimension(format!("m={m}, k={k} must be positive")));
        }
        if mats.len() != k {
            return Err(IsoError::Dimension(format!("expected {k} matrices, got {}", mats.len())));
        }
        for (i, a) in mats.iter().enumerate() {
            if a.nrows() != m || a.ncols() != m {
                return Err(IsoError::Dimension(format!("J_{} is {}x{}, expected {m}x{m}", i + 1, a.nrows(), a.ncols())));
            }
            let defect = skew_defect(a);
            if defect > SKEW_TOL * a.amax().max(1.0) {
                return Err(IsoError::Dimension(format!("J_{} is not skew-symmetric (defect {defect:e})", i + 1)));
            }
        }
        Ok(Self { m, k, mats })
    }

    pub fn zero(m: usize, k: usize) -> Self {
        Self { m, k, mats: vec![DMatrix::zeros(m, m); k] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    /// j(z) = sum_i z_i J_i
    pub fn eval(&self, z: &[f64]) -> DMatrix<f64> {
        assert_eq!(z.len(), self.k, "z has wrong length");
        let mut out = DMatrix::zeros(self.m, self.m);
        for (zi, a) in z.iter().zip(&self.mats) {
            out += a * *zi;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { m: self.m, k: self.k, mats: self.mats.iter().map(|a| a * c).collect() }
    }

    /// z -> A j(z) A^T
    pub fn conjugated(&self, a: &DMatrix<f64>) -> Self {
        Self { m: self.m, k: self.k, mats: self.mats.iter().map(|j| a * j * a.transpose()).collect() }
    }

    /// Number of free parameters, k * m(m-1)/2.
    pub fn param_dim(&self) -> usize {
        self.k * skew_dim(self.m)
    }

    /// Upper-triangle entries of J_1, ..., J_k concatenated.
    pub fn params(&self) -> DVector<f64> {
        let pairs = skew_pairs(self.m);
        DVector::from_iterator(
            self.param_dim(),
            self.mats.iter().flat_map(|a| pairs.iter().map(move |&(r, c)| a[(r, c)])),
        )
    }

    pub fn from_params(m: usize, k: usize, params: &DVector<f64>) -> Result<Self> {
        let d = skew_dim(m);
        if params.len() != k * d {
            return Err(IsoError::Dimension(format!("expected {} parameters, got {}", k * d, params.len())));
        }
        let pairs = skew_pairs(m);
        let mats = (0..k)
            .map(|i| {
                let mut a = DMatrix::zeros(m, m);
                for (idx, &(r, c)) in pairs.iter().enumerate() {
                    a[(r, c)] = params[i * d + idx];
                    a[(c, r)] = -params[i * d + idx];
                }
                a
            })
            .collect();
        Ok(Self { m, k, mats })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mats.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt()
    }

    fn same_shape(&self, other: &JMap) -> Result<()> {
        if self.m != other.m || self.k != other.k {
            return Err(IsoError::Dimension(format!(
                "shape mismatch: (m={}, k={}) vs (m={}, k={})",
                self.m, self.k, other.m, other.k
            )));
        }
        Ok(())
    }

    /// Short content hash of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("jmap serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Draws each J_i as U - U^T with U having i.i.d. standard normal entries
/// strictly above the diagonal. Genericity is NOT checked here; see
/// [`genericity_test`] and [`crate::deform::accept_generic`].
pub fn random_generic_jmap(m: usize, k: usize, seed: u64) -> Result<JMap> {
    if m < 2 || k < 1 {
        return Err(IsoError::Dimension(format!("need m >= 2 and k >= 1, got m={m}, k={k}")));
    }
    let mut rng = rng_for(seed);
    let mats = (0..k)
        .map(|_| {
            let mut a = DMatrix::zeros(m, m);
            for (r, c) in skew_pairs(m) {
                let v: f64 = rng.sample(StandardNormal);
                a[(r, c)] = v;
                a[(c, r)] = -v;
            }
            a
        })
        .collect();
    JMap::new(m, k, mats)
}

/// tr(S^(2r)) for r = 1..=max_r, plus the odd powers S^(2r-1).
pub(crate) fn even_power_traces(s: &DMatrix<f64>, max_r: usize) -> (Vec<f64>, Vec<DMatrix<f64>>) {
    let s2 = s * s;
    let mut odd = s.clone();
    let mut traces = Vec::with_capacity(max_r);
    let mut odd_powers = Vec::with_capacity(max_r);
    for _ in 0..max_r {
        traces.push((&odd * s).trace());
        odd_powers.push(odd.clone());
        odd = &odd * &s2;
    }
    (traces, odd_powers)
}

/// Interpolators for the forms of degrees 2, 4, ..., 2 * floor(m/2).
#[derive(Debug, Clone)]
pub struct PowerTraceBasis {
    pub k: usize,
    pub max_r: usize,
    pub interps: Vec<FormInterpolator>,
}

impl PowerTraceBasis {
    pub fn new(m: usize, k: usize) -> Result<Self> {
        let max_r = m / 2;
        let interps = (1..=max_r).map(|r| FormInterpolator::new(k, 2 * r)).collect::<Result<Vec<_>>>()?;
        Ok(Self { k, max_r, interps })
    }

    /// All forms z -> tr(j(z)^(2r)), r = 1..=floor(m/2).
    pub fn forms(&self, j: &JMap) -> Vec<HomogeneousForm> {
        self.interps
            .iter()
            .enumerate()
            .map(|(idx, interp)| {
                let r = idx + 1;
                let values: Vec<f64> = interp
                    .nodes
                    .iter()
                    .map(|z| even_power_traces(&j.eval(z), r).0[r - 1])
                    .collect();
                interp.fit(&values)
            })
            .collect()
    }
}

/// The degree-2r form z -> tr(j(z)^(2r)).
pub fn power_trace_form(j: &JMap, r: usize) -> Result<HomogeneousForm> {
    if r == 0 || r > j.m / 2 {
        return Err(IsoError::Dimension(format!("power index r={r} outside 1..={}", j.m / 2)));
    }
    let interp = FormInterpolator::new(j.k, 2 * r)?;
    let values: Vec<f64> = interp.nodes.iter().map(|z| even_power_traces(&j.eval(z), r).0[r - 1]).collect();
    Ok(interp.fit(&values))
}

/// Per-r deviations of the power-trace forms of two j-maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsospectralReport {
    pub isospectral: bool,
    pub tol: f64,
    /// deviation for r = 1, 2, ...
    pub per_r: Vec<f64>,
}

impl IsospectralReport {
    pub fn max_deviation(&self) -> f64 {
        self.per_r.iter().cloned().fold(0.0, f64::max)
    }
}

/// Below this coefficient scale a form comparison is absolute.
pub const FORM_ABS_FLOOR: f64 = 1e-12;

/// Compares all power-trace forms. A form pair passes when its largest
/// coefficient difference is within `tol` of the larger coefficient
/// magnitude of the pair.
pub fn isospectral(j: &JMap, j2: &JMap, tol: f64) -> Result<IsospectralReport> {
    j.same_shape(j2)?;
    let basis = PowerTraceBasis::new(j.m, j.k)?;
    Ok(compare_forms(&basis.forms(j), &basis.forms(j2), tol))
}

pub fn compare_forms(a: &[HomogeneousForm], b: &[HomogeneousForm], tol: f64) -> IsospectralReport {
    let per_r: Vec<f64> = a.iter().zip(b).map(|(x, y)| relative_deviation(x, y, FORM_ABS_FLOOR)).collect();
    IsospectralReport { isospectral: per_r.iter().all(|&d| d <= tol), tol, per_r }
}

/// j o C, i.e. J'_i = sum_l C_{li} J_l.
pub fn substitute_basis(j: &JMap, c: &DMatrix<f64>) -> Result<JMap> {
    if c.nrows() != j.k {
        return Err(IsoError::Dimension(format!("C must be {0}x{0}", j.k)));
    }
    require_orthogonal(c, 1e-10)?;
    Ok(substitute_basis_unchecked(j, c))
}

pub(crate) fn substitute_basis_unchecked(j: &JMap, c: &DMatrix<f64>) -> JMap {
    let mats = (0..j.k)
        .map(|i| {
            let mut a = DMatrix::zeros(j.m, j.m);
            for l in 0..j.k {
                a += &j.mats[l] * c[(l, i)];
            }
            a
        })
        .collect();
    JMap { m: j.m, k: j.k, mats }
}

/// Singular-value cutoff for the commutant computation.
pub const COMMUTANT_TOL: f64 = 1e-10;

/// dim { X in so(m) : [X, J_i] = 0 for all i }.
pub fn genericity_test(j: &JMap) -> usize {
    commutant_dimension(j, COMMUTANT_TOL)
}

pub fn commutant_dimension(j: &JMap, tol: f64) -> usize {
    let m = j.m;
    let pairs = skew_pairs(m);
    let mut op = DMatrix::zeros(j.k * m * m, pairs.len());
    for (col, &(a, b)) in pairs.iter().enumerate() {
        let x = skew_unit(m, a, b);
        for (i, ji) in j.mats.iter().enumerate() {
            let comm = &x * ji - ji * &x;
            for r in 0..m {
                for c in 0..m {
                    op[(i * m * m + r * m + c, col)] = comm[(r, c)];
                }
            }
        }
    }
    let sv = singular_values(&op);
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return pairs.len();
    }
    pairs.len() - sv.iter().filter(|&&s| s > tol * top).count()
}

/// Words over {1..k} of length 2..=max_len, ordered by length then
/// lexicographically.
pub fn trace_words(k: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for len in 2..=max_len {
        let total = k.pow(len as u32);
        for mut code in 0..total {
            let mut w = vec![0; len];
            for slot in (0..len).rev() {
                w[slot] = code % k;
                code /= k;
            }
            out.push(w);
        }
    }
    out
}

/// Traces of all words in J_1..J_k of length 2..=max_len.
pub fn trace_word_invariants(j: &JMap, max_len: usize) -> Vec<f64> {
    assert!(max_len >= 2, "max_len must be at least 2");
    trace_words(j.k, max_len)
        .iter()
        .map(|w| {
            let mut p = j.mats[w[0]].clone();
            for &letter in &w[1..] {
                p = &p * &j.mats[letter];
            }
            p.trace()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::haar_orthogonal;

    fn j2d() -> JMap {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = -1.0;
        a[(1, 0)] = 1.0;
        JMap::new(2, 1, vec![a]).unwrap()
    }

    #[test]
    fn rejects_non_skew_and_bad_shapes() {
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        assert!(JMap::new(3, 1, vec![a]).is_err());
        assert!(JMap::new(3, 2, vec![DMatrix::zeros(3, 3)]).is_err());
        assert!(random_generic_jmap(1, 2, 0).is_err());
        assert!(random_generic_jmap(3, 0, 0).is_err());
    }

    #[test]
    fn random_draw_is_deterministic_and_skew() {
        let a = random_generic_jmap(5, 2, 42).unwrap();
        let b = random_generic_jmap(5, 2, 42).unwrap();
        assert_eq!(a, b);
        for m in a.mats() {
            assert_eq!(skew_defect(m), 0.0);
        }
        let c = random_generic_jmap(5, 2, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dimension_two_draw_is_a_multiple_of_the_rotation_generator() {
        let j = random_generic_jmap(2, 1, 9).unwrap();
        let a = j.mats()[0][(1, 0)];
        assert_eq!(j.mats()[0], j2d().mats()[0].clone() * a);
    }

    #[test]
    fn eval_is_linear() {
        let j = random_generic_jmap(4, 3, 1).unwrap();
        let z = [0.3, -1.2, 2.0];
        let mut manual = DMatrix::zeros(4, 4);
        for i in 0..3 {
            manual += &j.mats()[i] * z[i];
        }
        assert_eq!(j.eval(&z), manual);
    }

    #[test]
    fn params_roundtrip() {
        let j = random_generic_jmap(5, 2, 3).unwrap();
        assert_eq!(JMap::from_params(5, 2, &j.params()).unwrap(), j);
    }

    #[test]
    fn json_layout_is_row_major() {
        let j = j2d();
        let s = serde_json::to_string(&j).unwrap();
        assert_eq!(s, r#"{"m":2,"k":1,"mats":[[0.0,-1.0,1.0,0.0]]}"#);
        let back: JMap = serde_json::from_str(&s).unwrap();
        assert_eq!(back, j);
        assert!(serde_json::from_str::<JMap>(r#"{"m":2,"k":1,"mats":[[0.0,1.0,1.0,0.0]]}"#).is_err());
    }

    #[test]
    fn power_trace_trivial_cases() {
        let z = power_trace_form(&JMap::zero(5, 2), 1).unwrap();
        assert!(z.coeffs.iter().all(|&c| c == 0.0));
        let f = power_trace_form(&j2d(), 1).unwrap();
        assert_eq!(f.coeffs.len(), 1);
        assert!((f.coeffs[0] + 2.0).abs() < 1e-15);
        assert!(power_trace_form(&j2d(), 2).is_err());
        assert!(power_trace_form(&j2d(), 0).is_err());
    }

    #[test]
    fn isospectral_reflexive_and_conjugation_invariant() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let rep = isospectral(&j, &j, 1e-10).unwrap();
        assert!(rep.isospectral);
        assert_eq!(rep.max_deviation(), 0.0);
        let mut rng = rng_for(5);
        let a = haar_orthogonal(5, &mut rng);
        assert!(isospectral(&j, &j.conjugated(&a), 1e-10).unwrap().isospectral);
        assert!(isospectral(&j, &JMap::zero(6, 2), 1e-10).is_err());
    }

    #[test]
    fn substitute_basis_cases() {
        let j = random_generic_jmap(4, 2, 8).unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(substitute_basis(&j, &id).unwrap(), j);
        let flip = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        let f = substitute_basis(&j, &flip).unwrap();
        assert_eq!(f.mats()[0], -j.mats()[0].clone());
        assert_eq!(f.mats()[1], j.mats()[1]);
        let bad = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(matches!(substitute_basis(&j, &bad), Err(IsoError::NotOrthogonal { .. })));
    }

    #[test]
    fn commutant_of_zero_is_everything() {
        assert_eq!(genericity_test(&JMap::zero(5, 2)), 10);
    }

    #[test]
    fn commutant_with_shared_kernel_contains_so3() {
        let mut block = DMatrix::zeros(5, 5);
        block[(0, 1)] = -1.0;
        block[(1, 0)] = 1.0;
        let j = JMap::new(5, 2, vec![block.clone(), block]).unwrap();
        assert!(genericity_test(&j) >= 3);
    }

    #[test]
    fn trace_words_of_zero_vanish() {
        let t = trace_word_invariants(&JMap::zero(4, 2), 4);
        assert_eq!(t.len(), 4 + 8 + 16);
        assert!(t.iter().all(|&v| v == 0.0));
    }
}
