//! Multistart search for an equivalence A j(z) A^T = j2(C z) over
//! O(m) x O(k).
//!
//! A small residual certifies equivalence. A residual floor across many
//! restarts is only evidence of inequivalence: the search is local.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IsoError, Result};
use crate::form::unit_directions;
use crate::jmap::{substitute_basis_unchecked, JMap};
use crate::linalg::{haar_orthogonal, polar_factor, skew_from_coords, skew_pairs, skew_unit};
use crate::sampling::{derived_seed, rng_for};

/// Residuals at or below this level certify equivalence.
pub const EQUIVALENCE_CERT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceWitness {
    #[serde(with = "matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub c: DMatrix<f64>,
    /// sqrt( sum_s |A j(z_s) A^T - j2(C z_s)|_F^2 )
    pub residual: f64,
    /// restart index that produced the witness
    pub restart: usize,
}

impl EquivalenceWitness {
    pub fn certifies_equivalence(&self) -> bool {
        self.residual <= EQUIVALENCE_CERT_TOL
    }
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let c = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != c) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
    }
}

/// The fixed sample of 4k unit directions z_s.
pub fn equivalence_sample(k: usize) -> Vec<Vec<f64>> {
    unit_directions(k, 4 * k)
}

#[derive(Debug, Clone, Copy)]
pub struct SearchSettings {
    pub max_iters: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self { max_iters: 300 }
    }
}

struct Problem<'a> {
    j: &'a JMap,
    j2: &'a JMap,
    zs: Vec<Vec<f64>>,
    js: Vec<DMatrix<f64>>,
}

impl<'a> Problem<'a> {
    fn new(j: &'a JMap, j2: &'a JMap) -> Self {
        let zs = equivalence_sample(j.k());
        let js = zs.iter().map(|z| j.eval(z)).collect();
        Self { j, j2, zs, js }
    }

    fn residual(&self, a: &DMatrix<f64>, c: &DMatrix<f64>) -> DVector<f64> {
        let m = self.j.m();
        let j2c = substitute_basis_unchecked(self.j2, c);
        let mut out = DVector::zeros(self.zs.len() * m * m);
        for (s, (z, js)) in self.zs.iter().zip(&self.js).enumerate() {
            let diff = a * js * a.transpose() - j2c.eval(z);
            for r in 0..m {
                for col in 0..m {
                    out[s * m * m + r * m + col] = diff[(r, col)];
                }
            }
        }
        out
    }

    /// Jacobian w.r.t. (X in so(m), c in so(k)) for A <- A(I+X), C <- C(I+c).
    fn jacobian(&self, a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.j.m();
        let k = self.j.k();
        let pm = skew_pairs(m);
        let pk = skew_pairs(k);
        let rows = self.zs.len() * m * m;
        let mut jac = DMatrix::zeros(rows, pm.len() + pk.len());
        let at = a.transpose();
        for (s, (z, js)) in self.zs.iter().zip(&self.js).enumerate() {
            for (col, &(p, q)) in pm.iter().enumerate() {
                let x = skew_unit(m, p, q);
                let d = a * (&x * js - js * &x) * &at;
                for r in 0..m {
                    for cc in 0..m {
                        jac[(s * m * m + r * m + cc, col)] = d[(r, cc)];
                    }
                }
            }
            for (idx, &(p, q)) in pk.iter().enumerate() {
                let e = skew_unit(k, p, q);
                let dz: Vec<f64> = (c * e * DVector::from_column_slice(z)).iter().copied().collect();
                let d = -self.j2.eval(&dz);
                for r in 0..m {
                    for cc in 0..m {
                        jac[(s * m * m + r * m + cc, pm.len() + idx)] = d[(r, cc)];
                    }
                }
            }
        }
        jac
    }

    /// Levenberg–Marquardt from (a, c); returns the local minimiser.
    fn solve(&self, mut a: DMatrix<f64>, mut c: DMatrix<f64>, settings: SearchSettings) -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let m = self.j.m();
        let k = self.j.k();
        let nm = skew_pairs(m).len();
        let mut r = self.residual(&a, &c);
        let mut f = r.norm_squared();
        let mut lambda = 1e-3;
        for _ in 0..settings.max_iters {
            if f < 1e-30 {
                break;
            }
            let jac = self.jacobian(&a, &c);
            let jtj = jac.transpose() * &jac;
            let g = jac.transpose() * &r;
            if g.amax() < 1e-15 * (1.0 + f.sqrt()) {
                break;
            }
            let mut improved = false;
            for _ in 0..30 {
                let mut lhs = jtj.clone();
                for d in 0..lhs.nrows() {
                    lhs[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
                }
                let Some(step) = lhs.cholesky().map(|ch| ch.solve(&(-&g))) else {
                    lambda *= 10.0;
                    continue;
                };
                let x = skew_from_coords(m, &step.as_slice()[..nm]);
                let cs = skew_from_coords(k, &step.as_slice()[nm..]);
                let a_new = polar_factor(&(&a + &a * x));
                let c_new = if k > 1 { polar_factor(&(&c + &c * cs)) } else { c.clone() };
                let r_new = self.residual(&a_new, &c_new);
                let f_new = r_new.norm_squared();
                if f_new < f {
                    let rel_drop = (f - f_new) / f;
                    a = a_new;
                    c = c_new;
                    r = r_new;
                    f = f_new;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = rel_drop > 1e-14;
                    break;
                }
                lambda *= 4.0;
                if lambda > 1e12 {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
        (a, c, f.sqrt())
    }
}

/// Multistart local minimisation of sum_s |A j(z_s) A^T - j2(C z_s)|_F^2.
/// Restart 0 starts at (I, I); restart i > 0 starts at a Haar-random pair
/// drawn from seed ^ i. The lowest residual wins, ties to the lowest index.
pub fn equivalence_search(j: &JMap, j2: &JMap, restarts: usize, seed: u64) -> Result<EquivalenceWitness> {
    equivalence_search_with(j, j2, restarts, seed, SearchSettings::default())
}

pub fn equivalence_search_with(
    j: &JMap,
    j2: &JMap,
    restarts: usize,
    seed: u64,
    settings: SearchSettings,
) -> Result<EquivalenceWitness> {
    if j.m() != j2.m() || j.k() != j2.k() {
        return Err(IsoError::Dimension("equivalence_search: shape mismatch".into()));
    }
    let problem = Problem::new(j, j2);
    let m = j.m();
    let k = j.k();
    let runs: Vec<EquivalenceWitness> = (0..restarts.max(1))
        .into_par_iter()
        .map(|i| {
            let (a0, c0) = if i == 0 {
                (DMatrix::identity(m, m), DMatrix::identity(k, k))
            } else {
                let mut rng = rng_for(derived_seed(seed, i as u64));
                (haar_orthogonal(m, &mut rng), haar_orthogonal(k, &mut rng))
            };
            let (a, c, residual) = problem.solve(a0, c0, settings);
            EquivalenceWitness { a, c, residual, restart: i }
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, w| if w.residual < best.residual { w } else { best })
        .expect("at least one restart");
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jmap::random_generic_jmap;
    use crate::linalg::orthogonality_residual;

    #[test]
    fn identity_is_found_for_equal_maps() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let w = equivalence_search(&j, &j, 1, 0).unwrap();
        assert!(w.residual <= 1e-12);
        assert!(w.certifies_equivalence());
    }

    #[test]
    fn planted_witness_is_recovered() {
        let j = random_generic_jmap(5, 2, 42).unwrap();
        let mut rng = rng_for(77);
        let a0 = haar_orthogonal(5, &mut rng);
        let c0 = haar_orthogonal(2, &mut rng);
        let j2 = substitute_basis_unchecked(&j, &c0).conjugated(&a0);
        let w = equivalence_search(&j, &j2, 20, 5).unwrap();
        assert!(w.residual <= 1e-8, "residual {}", w.residual);
        assert!(orthogonality_residual(&w.a) < 1e-10);
        assert!(orthogonality_residual(&w.c) < 1e-10);
    }

    #[test]
    fn unrelated_maps_leave_a_floor() {
        let j = random_generic_jmap(5, 2, 1).unwrap();
        let j2 = random_generic_jmap(5, 2, 2).unwrap();
        let w = equivalence_search(&j, &j2, 10, 5).unwrap();
        assert!(w.residual > 1e-2);
    }

    #[test]
    fn witness_json_roundtrip() {
        let j = random_generic_jmap(3, 2, 4).unwrap();
        let w = equivalence_search(&j, &j, 1, 0).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        let back: EquivalenceWitness = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }
}
