//! Real canonical form of skew-symmetric matrices and the pointwise
//! conjugators between isospectral j-maps.

use nalgebra::DMatrix;

use crate::error::{IsoError, Result};
use crate::jmap::JMap;

/// Orthogonal block-diagonalisation Q^T S Q = D of a skew matrix, where D
/// carries blocks theta_i * [[0,-1],[1,0]] on the leading 2x2 diagonal
/// positions (theta_1 >= theta_2 >= ... > 0) followed by a zero block.
#[derive(Debug, Clone)]
pub struct SkewCanonical {
    pub q: DMatrix<f64>,
    pub angles: Vec<f64>,
}

impl SkewCanonical {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// The block-diagonal normal form D.
    pub fn normal_form(&self) -> DMatrix<f64> {
        block_form(self.dim(), &self.angles)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.angles.first().copied().unwrap_or(0.0)
    }
}

pub fn block_form(m: usize, angles: &[f64]) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m, m);
    for (i, &t) in angles.iter().enumerate() {
        d[(2 * i + 1, 2 * i)] = t;
        d[(2 * i, 2 * i + 1)] = -t;
    }
    d
}

/// Relative gap below which two rotation angles are one cluster.
pub const CLUSTER_REL_GAP: f64 = 1e-8;

pub fn skew_canonical_form(s: &DMatrix<f64>) -> SkewCanonical {
    let m = s.nrows();
    let scale = s.amax();
    if scale == 0.0 {
        return SkewCanonical { q: DMatrix::identity(m, m), angles: Vec::new() };
    }
    let (q, _) = s.clone().schur().unpack();
    let t = q.transpose() * s * &q;
    let block_tol = 1e-13 * scale * m as f64;

    // (angle, first column, is_block)
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    let mut zeros: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < m {
        if i + 1 < m && t[(i + 1, i)].abs() > block_tol {
            blocks.push((0.5 * (t[(i + 1, i)] - t[(i, i + 1)]), i));
            i += 2;
        } else {
            zeros.push(i);
            i += 1;
        }
    }

    // Columns (v, w) per block with S v = theta w, S w = -theta v, theta > 0.
    let mut oriented: Vec<(f64, Vec<f64>, Vec<f64>)> = blocks
        .iter()
        .map(|&(theta, c)| {
            let v: Vec<f64> = q.column(c).iter().copied().collect();
            let w: Vec<f64> = q.column(c + 1).iter().copied().collect();
            if theta >= 0.0 {
                (theta, v, w)
            } else {
                (-theta, w, v)
            }
        })
        .collect();

    oriented.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let rho = oriented.first().map(|b| b.0).unwrap_or(0.0);
    // Within clusters, order by the angle of the first coordinates of (v, w),
    // then lexicographically by v.
    let mut start = 0;
    while start < oriented.len() {
        let mut end = start + 1;
        while end < oriented.len() && (oriented[end - 1].0 - oriented[end].0).abs() <= CLUSTER_REL_GAP * rho {
            end += 1;
        }
        oriented[start..end].sort_by(|a, b| {
            let ka = a.2[0].atan2(a.1[0]);
            let kb = b.2[0].atan2(b.1[0]);
            ka.partial_cmp(&kb)
                .unwrap()
                .then_with(|| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        });
        start = end;
    }

    let mut out = DMatrix::zeros(m, m);
    let mut angles = Vec::with_capacity(oriented.len());
    for (idx, (theta, v, w)) in oriented.iter().enumerate() {
        for r in 0..m {
            out[(r, 2 * idx)] = v[r];
            out[(r, 2 * idx + 1)] = w[r];
        }
        angles.push(*theta);
    }
    let base = 2 * oriented.len();
    for (idx, &c) in zeros.iter().enumerate() {
        out.set_column(base + idx, &q.column(c));
    }
    SkewCanonical { q: out, angles }
}

/// Orthogonal A = Q2 Q1^T from the canonical forms of `s1`, `s2`, together
/// with the Frobenius residual |A s1 A^T - s2| and the relative deviation
/// of the canonical angles.
pub fn canonical_conjugator(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> (DMatrix<f64>, f64, f64) {
    let c1 = skew_canonical_form(s1);
    let c2 = skew_canonical_form(s2);
    let a = &c2.q * c1.q.transpose();
    let residual = (&a * s1 * a.transpose() - s2).norm();
    let n = c1.angles.len().max(c2.angles.len());
    let pad = |v: &Vec<f64>, i: usize| v.get(i).copied().unwrap_or(0.0);
    let rho = c1.spectral_radius().max(c2.spectral_radius());
    let dev = (0..n).map(|i| (pad(&c1.angles, i) - pad(&c2.angles, i)).abs()).fold(0.0, f64::max);
    let rel = if rho > 0.0 { dev / rho } else { dev };
    (a, residual, rel)
}

/// Relative residual bound for [`conjugator_at`].
pub const CONJUGATOR_REL_TOL: f64 = 1e-9;

/// Orthogonal A_z with A_z j(z) A_z^T = j2(z).
pub fn conjugator_at(j: &JMap, j2: &JMap, z: &[f64]) -> Result<DMatrix<f64>> {
    if j.m() != j2.m() || j.k() != j2.k() || z.len() != j.k() {
        return Err(IsoError::Dimension("conjugator_at: shape mismatch".into()));
    }
    let s1 = j.eval(z);
    let s2 = j2.eval(z);
    let (a, residual, _) = canonical_conjugator(&s1, &s2);
    let scale = s1.norm().max(s2.norm());
    if residual > CONJUGATOR_REL_TOL * scale {
        return Err(IsoError::NotIsospectral { deviation: residual / scale.max(f64::MIN_POSITIVE) });
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jmap::random_generic_jmap;
    use crate::linalg::{haar_orthogonal, orthogonality_residual};
    use crate::sampling::rng_for;

    #[test]
    fn canonical_form_reduces_random_skew() {
        for m in 2..9 {
            let j = random_generic_jmap(m, 1, m as u64).unwrap();
            let s = j.eval(&[1.0]);
            let c = skew_canonical_form(&s);
            assert!(orthogonality_residual(&c.q) < 1e-13);
            let d = c.q.transpose() * &s * &c.q;
            assert!((d - c.normal_form()).amax() < 1e-12 * s.amax(), "m={m}");
            assert_eq!(c.angles.len(), m / 2);
            assert!(c.angles.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn zero_matrix_has_no_blocks() {
        let c = skew_canonical_form(&DMatrix::zeros(4, 4));
        assert!(c.angles.is_empty());
        assert_eq!(c.q, DMatrix::identity(4, 4));
    }

    #[test]
    fn identity_pair_conjugates() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let z = [0.4, -0.7];
        let a = conjugator_at(&j, &j, &z).unwrap();
        let s = j.eval(&z);
        assert!((&a * &s * a.transpose() - &s).norm() <= 1e-9 * s.norm());
    }

    #[test]
    fn planted_pair_conjugates() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let a0 = haar_orthogonal(5, &mut rng_for(3));
        let j2 = j.conjugated(&a0);
        let a = conjugator_at(&j, &j2, &[1.0, 0.0]).unwrap();
        assert!(orthogonality_residual(&a) < 1e-10);
        let s = j.eval(&[1.0, 0.0]);
        assert!((&a * &s * a.transpose() - j2.eval(&[1.0, 0.0])).norm() <= 1e-9 * s.norm());
    }

    #[test]
    fn repeated_eigenvalue_cluster_is_handled() {
        // j(z) at z = (1,1) has the rotation angle 2 with multiplicity two.
        let m = 5;
        let mut j1 = DMatrix::zeros(m, m);
        let mut j2 = DMatrix::zeros(m, m);
        j1[(1, 0)] = 1.5;
        j1[(0, 1)] = -1.5;
        j1[(3, 2)] = 0.5;
        j1[(2, 3)] = -0.5;
        j2[(1, 0)] = 0.5;
        j2[(0, 1)] = -0.5;
        j2[(3, 2)] = 1.5;
        j2[(2, 3)] = -1.5;
        j2[(4, 0)] = 0.0;
        let j = JMap::new(m, 2, vec![j1, j2]).unwrap();
        let a0 = haar_orthogonal(m, &mut rng_for(8));
        let jc = j.conjugated(&a0);
        let z = [1.0, 1.0];
        let c = skew_canonical_form(&j.eval(&z));
        assert!((c.angles[0] - c.angles[1]).abs() < 1e-12);
        let a = conjugator_at(&j, &jc, &z).unwrap();
        let s = j.eval(&z);
        assert!((&a * &s * a.transpose() - jc.eval(&z)).norm() <= 1e-9 * s.norm());
    }

    #[test]
    fn non_isospectral_pair_is_rejected() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let j2 = j.scaled(1.1);
        assert!(matches!(conjugator_at(&j, &j2, &[1.0, 0.5]), Err(IsoError::NotIsospectral { .. })));
    }
}
