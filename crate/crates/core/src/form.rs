//! Homogeneous polynomial forms in k variables and their recovery from
//! point values on a fixed set of unit directions.

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::error::{IsoError, Result};
use crate::linalg::singular_values;
use crate::sampling::ShiftedHalton;

/// Exponent vectors of all degree-`degree` monomials in `k` variables, in
/// graded-lex order (lexicographically descending exponents, so
/// z1^d comes first and zk^d last).
pub fn monomials(k: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k - 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(k, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    rec(k, degree, &mut Vec::with_capacity(k), &mut out);
    out
}

/// C(degree + k - 1, k - 1)
pub fn monomial_count(k: usize, degree: usize) -> usize {
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..(k as u128).saturating_sub(1) {
        num *= degree as u128 + 1 + i;
        den *= i + 1;
    }
    (num / den) as usize
}

fn monomial_value(z: &[f64], exps: &[usize]) -> f64 {
    exps.iter().zip(z).map(|(&e, &v)| v.powi(e as i32)).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousForm {
    pub k: usize,
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl HomogeneousForm {
    pub fn zero(k: usize, degree: usize) -> Self {
        Self { k, degree, coeffs: vec![0.0; monomial_count(k, degree)] }
    }

    pub fn new(k: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        let expected = monomial_count(k, degree);
        if coeffs.len() != expected {
            return Err(IsoError::Dimension(format!(
                "form with k={k}, degree={degree} needs {expected} coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(Self { k, degree, coeffs })
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.k);
        monomials(self.k, self.degree)
            .iter()
            .zip(&self.coeffs)
            .map(|(e, c)| c * monomial_value(z, e))
            .sum()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { k: self.k, degree: self.degree, coeffs: self.coeffs.iter().map(|c| c * factor).collect() }
    }
}

/// Coefficientwise deviation between two forms, relative to the larger
/// coefficient magnitude of the pair; absolute when both forms are below
/// `abs_floor`.
pub fn relative_deviation(a: &HomogeneousForm, b: &HomogeneousForm, abs_floor: f64) -> f64 {
    assert_eq!(a.coeffs.len(), b.coeffs.len());
    let diff = a.coeffs.iter().zip(&b.coeffs).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.max_abs_coeff().max(b.max_abs_coeff());
    if scale < abs_floor {
        diff
    } else {
        diff / scale
    }
}

/// Deterministic unit interpolation directions for degree-`degree` forms in
/// `k` variables; exactly `monomial_count(k, degree)` of them.
pub fn interpolation_nodes(k: usize, degree: usize) -> Vec<Vec<f64>> {
    unit_directions(k, monomial_count(k, degree))
}

/// `count` deterministic unit vectors in R^k: equally spaced angles on the
/// half circle for k = 2, Halton points of [-1,1]^k pushed to the sphere
/// for k > 2.
pub fn unit_directions(k: usize, count: usize) -> Vec<Vec<f64>> {
    match k {
        0 => Vec::new(),
        1 => vec![vec![1.0]; count.min(1)],
        2 => (0..count)
            .map(|s| {
                let theta = std::f64::consts::PI * s as f64 / count as f64;
                vec![theta.cos(), theta.sin()]
            })
            .collect(),
        _ => {
            let halton = ShiftedHalton::new(k, 0);
            let mut buf = vec![0.0; k];
            let mut out = Vec::with_capacity(count);
            let mut i = 1u64;
            while out.len() < count {
                halton.point(i, &mut buf);
                i += 1;
                let v: Vec<f64> = buf.iter().map(|u| 2.0 * u - 1.0).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(0.25..=1.0).contains(&norm) {
                    continue;
                }
                out.push(v.iter().map(|x| x / norm).collect());
            }
            out
        }
    }
}

/// LU-factored interpolation system mapping node values to coefficients.
#[derive(Debug, Clone)]
pub struct FormInterpolator {
    pub k: usize,
    pub degree: usize,
    pub nodes: Vec<Vec<f64>>,
    pub condition: f64,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl FormInterpolator {
    pub const MAX_CONDITION: f64 = 1e12;

    pub fn new(k: usize, degree: usize) -> Result<Self> {
        if k == 0 {
            return Err(IsoError::Dimension("forms need at least one variable".into()));
        }
        let nodes = interpolation_nodes(k, degree);
        let mons = monomials(k, degree);
        let n = mons.len();
        let v = DMatrix::from_fn(n, n, |s, c| monomial_value(&nodes[s], &mons[c]));
        let sv = singular_values(&v);
        let condition = match (sv.first(), sv.last()) {
            (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
            _ => f64::INFINITY,
        };
        if !(condition < Self::MAX_CONDITION) {
            return Err(IsoError::SingularInterpolation { k, degree, condition });
        }
        Ok(Self { k, degree, nodes, condition, lu: v.lu() })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Coefficients of the unique form taking `values` at the nodes.
    pub fn fit(&self, values: &[f64]) -> HomogeneousForm {
        let rhs = DVector::from_column_slice(values);
        let c = self.lu.solve(&rhs).expect("interpolation system checked nonsingular");
        HomogeneousForm { k: self.k, degree: self.degree, coeffs: c.iter().copied().collect() }
    }

    /// Applies the node-values-to-coefficients map to each column.
    pub fn fit_columns(&self, node_values: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(node_values).expect("interpolation system checked nonsingular")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nested Horner evaluation, independent of the monomial loop.
    fn horner(form: &HomogeneousForm, z: &[f64]) -> f64 {
        fn rec(coeffs: &mut std::slice::Iter<f64>, z: &[f64], k: usize, d: usize) -> f64 {
            if k == 1 {
                return coeffs.next().unwrap() * z[0].powi(d as i32);
            }
            // exponent of the first variable runs d, d-1, ..., 0
            let mut acc = 0.0;
            for e in (0..=d).rev() {
                let inner = rec(coeffs, &z[1..], k - 1, d - e);
                acc += inner * z[0].powi(e as i32);
            }
            acc
        }
        rec(&mut form.coeffs.iter(), z, form.k, form.degree)
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomial_count(2, 4), 5);
        assert_eq!(monomial_count(3, 4), 15);
        assert_eq!(monomial_count(1, 7), 1);
        for k in 1..5 {
            for d in 0..7 {
                assert_eq!(monomials(k, d).len(), monomial_count(k, d));
            }
        }
        assert_eq!(monomials(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn eval_matches_horner() {
        for k in 1..4 {
            for d in 0..6 {
                let coeffs: Vec<f64> = (0..monomial_count(k, d)).map(|i| (i as f64 * 0.37).sin()).collect();
                let f = HomogeneousForm::new(k, d, coeffs).unwrap();
                let z: Vec<f64> = (0..k).map(|i| 0.3 + 0.21 * i as f64).collect();
                let a = f.eval(&z);
                let b = horner(&f, &z);
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn interpolation_recovers_forms() {
        for k in 1..4 {
            for d in [2usize, 4, 6] {
                let interp = FormInterpolator::new(k, d).unwrap();
                let coeffs: Vec<f64> = (0..monomial_count(k, d)).map(|i| 1.0 + (i as f64).cos()).collect();
                let f = HomogeneousForm::new(k, d, coeffs).unwrap();
                let values: Vec<f64> = interp.nodes.iter().map(|z| f.eval(z)).collect();
                let g = interp.fit(&values);
                assert!(relative_deviation(&f, &g, 1e-12) < 1e-11, "k={k} d={d} cond={}", interp.condition);
            }
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(HomogeneousForm::new(2, 2, vec![1.0; 4]).is_err());
    }
}
