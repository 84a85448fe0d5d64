//! Small dense linear-algebra helpers shared by the geometry modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{IsoError, Result};

/// Dimension of so(m).
pub fn skew_dim(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Upper-triangle index pairs (a < b) in row-major order. This is the
/// coordinate order used for so(m) throughout the crate.
pub fn skew_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(skew_dim(m));
    for a in 0..m {
        for b in (a + 1)..m {
            out.push((a, b));
        }
    }
    out
}

/// The basis element e_a e_b^T - e_b e_a^T of so(m).
pub fn skew_unit(m: usize, a: usize, b: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(m, m);
    e[(a, b)] = 1.0;
    e[(b, a)] = -1.0;
    e
}

pub fn skew_from_coords(m: usize, coords: &[f64]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(m, m);
    for (idx, &(a, b)) in skew_pairs(m).iter().enumerate() {
        s[(a, b)] = coords[idx];
        s[(b, a)] = -coords[idx];
    }
    s
}

pub fn skew_coords(s: &DMatrix<f64>) -> Vec<f64> {
    skew_pairs(s.nrows()).iter().map(|&(a, b)| s[(a, b)]).collect()
}

/// max |S + S^T|
pub fn skew_defect(s: &DMatrix<f64>) -> f64 {
    (s + s.transpose()).amax()
}

/// max |Q^T Q - I|
pub fn orthogonality_residual(q: &DMatrix<f64>) -> f64 {
    let n = q.ncols();
    (q.transpose() * q - DMatrix::<f64>::identity(n, n)).amax()
}

pub fn require_orthogonal(q: &DMatrix<f64>, tol: f64) -> Result<()> {
    if q.nrows() != q.ncols() {
        return Err(IsoError::Dimension(format!(
            "expected a square matrix, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let residual = orthogonality_residual(q);
    if residual > tol {
        return Err(IsoError::NotOrthogonal { residual });
    }
    Ok(())
}

/// Orthogonal polar factor U V^T of a square matrix.
pub fn polar_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    u * v_t
}

/// Haar-distributed element of O(n): QR of a Gaussian matrix with the
/// sign of diag(R) absorbed into Q.
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Numerical rank: singular values above `rel_tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > rel_tol * top).count(),
        _ => 0,
    }
}

/// Orthonormal basis (as columns) of the row space of `m`, using singular
/// values above `rel_tol` times the largest.
pub fn row_space_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| top > 0.0 && svd.singular_values[i] > rel_tol * top)
        .collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        for r in 0..n {
            out[(r, c)] = v_t[(i, r)];
        }
    }
    out
}

/// Orthonormal basis of the orthogonal complement of span(cols(q)) in R^n,
/// `q` having orthonormal columns.
pub fn orthogonal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let p = DMatrix::<f64>::identity(n, n) - q * q.transpose();
    let eig = p.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut out = DMatrix::zeros(n, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        out.set_column(c, &eig.eigenvectors.column(i));
    }
    out
}

/// Orthonormal basis of span(cols(m)) via SVD, with relative rank cutoff.
pub fn column_space_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    row_space_basis(&m.transpose(), rel_tol)
}

/// 1-norm condition number estimate of a symmetric positive-definite
/// matrix together with its inverse.
pub fn spd_inverse(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| IsoError::NearSingularMetric(f64::INFINITY))?;
    let inv = chol.inverse();
    let cond = one_norm(g) * one_norm(&inv);
    Ok((inv, cond))
}

pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Gram–Schmidt orthonormalisation of the columns of `m` with respect to
/// the inner product `x^T g y`.
pub fn g_orthonormalize(m: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let mut v = out.column(j).into_owned();
        for i in 0..j {
            let e = out.column(i).into_owned();
            let proj = (e.transpose() * g * &v)[(0, 0)];
            v -= e * proj;
        }
        let norm = (v.transpose() * g * &v)[(0, 0)].sqrt();
        out.set_column(j, &(v / norm));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn haar_is_orthogonal_and_hits_both_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut signs = [false, false];
        for _ in 0..40 {
            let q = haar_orthogonal(4, &mut rng);
            assert!(orthogonality_residual(&q) < 1e-13);
            signs[(q.determinant() > 0.0) as usize] = true;
        }
        assert!(signs[0] && signs[1]);
    }

    #[test]
    fn polar_of_perturbed_orthogonal_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = haar_orthogonal(5, &mut rng);
        let p = polar_factor(&(&q + gaussian_matrix(5, 5, &mut rng) * 1e-6));
        assert!(orthogonality_residual(&p) < 1e-13);
        assert!((p - q).amax() < 1e-5);
    }

    #[test]
    fn skew_coordinates_roundtrip() {
        let coords = [1.0, -2.0, 3.0, 0.5, 0.25, -4.0];
        let s = skew_from_coords(4, &coords);
        assert_eq!(skew_defect(&s), 0.0);
        assert_eq!(skew_coords(&s), coords.to_vec());
    }

    #[test]
    fn complement_spans_the_rest() {
        let q = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c = orthogonal_complement(&q);
        assert_eq!(c.ncols(), 2);
        assert!((q.transpose() * &c).amax() < 1e-14);
    }
}
