//! The metrics g_j on R^(m+2k), on the unit sphere through graph charts, and
//! on the torus-saturated leaves, together with the torus action and the
//! structural isometries relating them.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsoError, Result};
use crate::jet::{block_metric_jet, MetricJet};
use crate::jmap::JMap;
use crate::linalg::spd_inverse;
use crate::sampling::{ball_point, rng_for, sphere_point};

/// Points with some block radius |u_i| below this are not on a principal orbit.
pub const PRINCIPAL_RADIUS_MIN: f64 = 1e-3;

/// Chart margin: graph charts accept |p|² ≤ 1 − δ².
pub const CHART_MARGIN: f64 = 0.05;

/// The alternating map B(x, y)_i = ⟨J_i x, y⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearMapB {
    m: usize,
    comps: Vec<DMatrix<f64>>,
}

impl BilinearMapB {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[DMatrix<f64>] {
        &self.comps
    }

    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.comps.len(), self.comps.iter().map(|c| (c * x).dot(y)))
    }

    /// Largest |B(x, x)_i| over the given vectors.
    pub fn alternation_defect<'a>(&self, xs: impl IntoIterator<Item = &'a DVector<f64>>) -> f64 {
        xs.into_iter().map(|x| self.eval(x, x).amax()).fold(0.0, f64::max)
    }
}

pub fn bmap_from_j(j: &JMap) -> BilinearMapB {
    BilinearMapB { m: j.m(), comps: j.mats().to_vec() }
}

/// ρ_*(Z): block diagonal with blocks Z_i·[[0, −1], [1, 0]].
pub fn rho_star(z: &[f64]) -> DMatrix<f64> {
    let k = z.len();
    let mut out = DMatrix::zeros(2 * k, 2 * k);
    for (i, &zi) in z.iter().enumerate() {
        out[(2 * i, 2 * i + 1)] = -zi;
        out[(2 * i + 1, 2 * i)] = zi;
    }
    out
}

pub fn fundamental_field(z: &[f64], u: &DVector<f64>) -> DVector<f64> {
    assert_eq!(u.len(), 2 * z.len(), "fiber vector must have 2k entries");
    let mut out = DVector::zeros(u.len());
    for (i, &zi) in z.iter().enumerate() {
        out[2 * i] = -zi * u[2 * i + 1];
        out[2 * i + 1] = zi * u[2 * i];
    }
    out
}

/// exp(ρ_*(θ)): rotation of the i-th 2-block by angle θ_i.
pub fn block_rotation(theta: &[f64]) -> DMatrix<f64> {
    let k = theta.len();
    let mut out = DMatrix::zeros(2 * k, 2 * k);
    for (i, &t) in theta.iter().enumerate() {
        let (s, c) = t.sin_cos();
        out[(2 * i, 2 * i)] = c;
        out[(2 * i, 2 * i + 1)] = -s;
        out[(2 * i + 1, 2 * i)] = s;
        out[(2 * i + 1, 2 * i + 1)] = c;
    }
    out
}

/// Action of the torus element z̄ ∈ R^k / Z^k: x is fixed, the i-th block of
/// u is rotated by 2π z̄_i.
pub fn torus_action(zbar: &[f64], x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let theta: Vec<f64> = zbar.iter().map(|z| TAU * z).collect();
    (x.clone(), block_rotation(&theta) * u)
}

/// Block radii |u_i|.
pub fn block_radii(u: &DVector<f64>) -> Vec<f64> {
    (0..u.len() / 2).map(|i| u[2 * i].hypot(u[2 * i + 1])).collect()
}

/// Solves torus_action(z̄, u) = v for z̄ ∈ [0, 1)^k. Fails unless the block
/// radii agree and the recovered element reproduces v to 1e-10.
pub fn orbit_angles(u: &DVector<f64>, v: &DVector<f64>) -> Result<Vec<f64>> {
    if u.len() != v.len() || u.len() % 2 != 0 {
        return Err(IsoError::Dimension(format!("fiber vectors of lengths {} and {}", u.len(), v.len())));
    }
    let ru = block_radii(u);
    let rv = block_radii(v);
    for (i, (a, b)) in ru.iter().zip(&rv).enumerate() {
        if *a < PRINCIPAL_RADIUS_MIN {
            return Err(IsoError::DegenerateOrbit(*a));
        }
        if (a - b).abs() > 1e-10 * a.max(1.0) {
            return Err(IsoError::Numerical(format!("block {i}: radii {a} and {b} differ, not on one orbit")));
        }
    }
    let zbar: Vec<f64> = (0..ru.len())
        .map(|i| {
            let d = v[2 * i + 1].atan2(v[2 * i]) - u[2 * i + 1].atan2(u[2 * i]);
            (d / TAU).rem_euclid(1.0)
        })
        .collect();
    let (_, w) = torus_action(&zbar, &DVector::zeros(0), u);
    let dev = (&w - v).amax();
    if dev > 1e-10 {
        return Err(IsoError::Numerical(format!("orbit reconstruction deviates by {dev:e}")));
    }
    Ok(zbar)
}

/// The metric g_j on R^m ⊕ R^(2k) = {(x, u)}.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientMetric {
    j: JMap,
}

impl AmbientMetric {
    pub fn new(j: JMap) -> Self {
        Self { j }
    }

    pub fn jmap(&self) -> &JMap {
        &self.j
    }

    pub fn m(&self) -> usize {
        self.j.m()
    }

    pub fn k(&self) -> usize {
        self.j.k()
    }

    pub fn dim(&self) -> usize {
        self.j.m() + 2 * self.j.k()
    }

    pub fn split<'a>(&self, p: &'a [f64]) -> (DVector<f64>, DVector<f64>) {
        let m = self.m();
        (DVector::from_column_slice(&p[..m]), DVector::from_column_slice(&p[m..]))
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(IsoError::Dimension(format!("point has {} coordinates, expected {}", p.len(), self.dim())));
        }
        Ok(())
    }

    /// A(x, u) y = ½ ρ_*(B(x, y)) u, as a 2k×m matrix.
    pub fn a_matrix(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(2 * self.k(), self.m());
        for (i, ji) in self.j.mats().iter().enumerate() {
            let jx = ji * x;
            let (u0, u1) = (u[2 * i], u[2 * i + 1]);
            for b in 0..self.m() {
                a[(2 * i, b)] = -0.5 * u1 * jx[b];
                a[(2 * i + 1, b)] = 0.5 * u0 * jx[b];
            }
        }
        a
    }

    pub fn metric_at(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let (m, n) = (self.m(), self.dim());
        let a = self.a_matrix(x, u);
        let mut g = DMatrix::identity(n, n);
        let ata = a.transpose() * &a;
        for r in 0..m {
            for c in 0..m {
                g[(r, c)] += ata[(r, c)];
            }
        }
        g.view_mut((m, 0), (n - m, m)).copy_from(&(-&a));
        g.view_mut((0, m), (m, n - m)).copy_from(&(-a.transpose()));
        g
    }

    pub fn metric_at_point(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(p)?;
        let (x, u) = self.split(p);
        Ok(self.metric_at(&x, &u))
    }

    /// Horizontal lift (y, A(x, u) y) of a base vector y.
    pub fn horizontal_lift(&self, x: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let ay = self.a_matrix(x, u) * y;
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.m()).copy_from(y);
        out.rows_mut(self.m(), ay.len()).copy_from(&ay);
        out
    }

    /// Metric with exact first and second derivatives at p = (x, u). A is
    /// bilinear in (x, u), so the only nonzero second derivatives of A are
    /// the mixed ones.
    pub fn jet(&self, p: &[f64]) -> Result<MetricJet> {
        self.check_point(p)?;
        let (m, k) = (self.m(), self.k());
        let (x, u) = self.split(p);
        let a = self.a_matrix(&x, &u);
        let zero_u = DVector::zeros(2 * k);
        let zero_x = DVector::zeros(m);
        let mut da = Vec::with_capacity(m + 2 * k);
        for c in 0..m {
            let mut e = zero_x.clone();
            e[c] = 1.0;
            da.push(self.a_matrix(&e, &u));
        }
        for d in 0..2 * k {
            let mut e = zero_u.clone();
            e[d] = 1.0;
            da.push(self.a_matrix(&x, &e));
        }
        let dda = |c: usize, e: usize| -> Option<DMatrix<f64>> {
            if c < m && e >= m {
                let mut ex = DVector::zeros(m);
                ex[c] = 1.0;
                let mut eu = DVector::zeros(2 * k);
                eu[e - m] = 1.0;
                Some(self.a_matrix(&ex, &eu))
            } else {
                None
            }
        };
        Ok(block_metric_jet(&a, &da, dda, &DMatrix::identity(2 * k, 2 * k)))
    }

    /// The same field with j replaced by c·j.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.j.scaled(c))
    }
}

/// Graph chart of the unit sphere over the coordinate hyperplane ⟂ `axis`:
/// p ↦ point with coordinate `axis` equal to ±sqrt(1 − |p|²).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereChart {
    pub dim: usize,
    pub axis: usize,
    pub positive: bool,
}

/// Height function s(p) = ±sqrt(1 − |p|²) and its derivatives.
struct Height {
    s: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl SphereChart {
    pub fn new(dim: usize, axis: usize, positive: bool) -> Result<Self> {
        if axis >= dim || dim < 2 {
            return Err(IsoError::Dimension(format!("axis {axis} in dimension {dim}")));
        }
        Ok(Self { dim, axis, positive })
    }

    pub fn all(dim: usize) -> Vec<Self> {
        (0..dim).flat_map(|axis| [true, false].map(|positive| Self { dim, axis, positive })).collect()
    }

    /// The chart over the largest |coordinate| of a sphere point, and the
    /// chart coordinates of that point. Such points always have
    /// |p|² ≤ 1 − 1/dim, well inside the margin.
    pub fn best_for(point: &[f64]) -> (Self, Vec<f64>) {
        let (axis, v) = point
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("nonempty point");
        let chart = Self { dim: point.len(), axis, positive: *v >= 0.0 };
        (chart, chart.project(point))
    }

    pub fn chart_dim(&self) -> usize {
        self.dim - 1
    }

    #[inline]
    fn lift_index(&self, a: usize) -> usize {
        if a < self.axis {
            a
        } else {
            a + 1
        }
    }

    pub fn project(&self, point: &[f64]) -> Vec<f64> {
        point.iter().enumerate().filter(|(i, _)| *i != self.axis).map(|(_, v)| *v).collect()
    }

    pub fn in_domain(&self, p: &[f64]) -> bool {
        p.len() == self.chart_dim() && p.iter().map(|v| v * v).sum::<f64>() <= 1.0 - CHART_MARGIN * CHART_MARGIN
    }

    fn height(&self, p: &[f64]) -> Result<Height> {
        if p.len() != self.chart_dim() {
            return Err(IsoError::Dimension(format!("chart point has {} coordinates, expected {}", p.len(), self.chart_dim())));
        }
        let norm_sq: f64 = p.iter().map(|v| v * v).sum();
        let limit = 1.0 - CHART_MARGIN * CHART_MARGIN;
        if !(norm_sq <= limit) {
            return Err(IsoError::ChartDomain { norm_sq, limit });
        }
        let s = if self.positive { 1.0 } else { -1.0 } * (1.0 - norm_sq).sqrt();
        let d = p.len();
        let grad = p.iter().map(|pa| -pa / s).collect();
        let mut hess = vec![0.0; d * d];
        let s3 = s * s * s;
        for a in 0..d {
            for b in 0..d {
                hess[a * d + b] = -p[a] * p[b] / s3 - if a == b { 1.0 / s } else { 0.0 };
            }
        }
        Ok(Height { s, grad, hess })
    }

    pub fn embed(&self, p: &[f64]) -> Result<Vec<f64>> {
        let h = self.height(p)?;
        let mut out = Vec::with_capacity(self.dim);
        out.extend_from_slice(&p[..self.axis]);
        out.push(h.s);
        out.extend_from_slice(&p[self.axis..]);
        Ok(out)
    }

    /// Jacobian of the chart map (dim × (dim − 1)).
    pub fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.height(p)?;
        let mut jac = DMatrix::zeros(self.dim, self.chart_dim());
        for a in 0..self.chart_dim() {
            jac[(self.lift_index(a), a)] = 1.0;
            jac[(self.axis, a)] = h.grad[a];
        }
        Ok(jac)
    }

    /// DφᵀXDφ for a dim×dim row-major X, written into an (dim−1)² buffer.
    fn pull(&self, x: &[f64], grad: &[f64], out: &mut [f64]) {
        let (n, d, i) = (self.dim, self.chart_dim(), self.axis);
        let xii = x[i * n + i];
        for a in 0..d {
            let la = self.lift_index(a);
            for b in 0..d {
                let lb = self.lift_index(b);
                out[a * d + b] = x[la * n + lb] + grad[a] * x[i * n + lb] + grad[b] * x[la * n + i] + grad[a] * grad[b] * xii;
            }
        }
    }

    /// w_β = (X Dφ)_{axis, β}.
    fn axis_row(&self, x: &[f64], grad: &[f64], out: &mut [f64]) {
        let (n, i) = (self.dim, self.axis);
        for (b, o) in out.iter_mut().enumerate() {
            *o = x[i * n + self.lift_index(b)] + grad[b] * x[i * n + i];
        }
    }

    /// Pullback jet of an ambient jet taken at the chart image of p.
    pub fn pullback_jet(&self, ambient: &MetricJet, p: &[f64]) -> Result<MetricJet> {
        let h = self.height(p)?;
        let (n, d, ax) = (self.dim, self.chart_dim(), self.axis);
        if ambient.dim() != n {
            return Err(IsoError::Dimension(format!("ambient jet of dimension {} for a chart in dimension {n}", ambient.dim())));
        }
        let s = h.s;
        let third = |a: usize, b: usize, c: usize| -> f64 {
            let s3 = s * s * s;
            let s5 = s3 * s * s;
            let dl = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
            -(dl(a, b) * p[c] + dl(a, c) * p[b] + dl(b, c) * p[a]) / s3 - 3.0 * p[a] * p[b] * p[c] / s5
        };
        let n2 = n * n;
        let gam: Vec<f64> = (0..n2).map(|t| ambient.g(t / n, t % n)).collect();
        // composite derivatives Ĝ_γ = G_γ̄ + s_γ G_axis
        let ghat1: Vec<Vec<f64>> = (0..d)
            .map(|c| {
                let lc = self.lift_index(c);
                (0..n2).map(|t| ambient.d(lc, t / n, t % n) + h.grad[c] * ambient.d(ax, t / n, t % n)).collect()
            })
            .collect();

        let mut jet = MetricJet::zeros(d);
        let mut buf = vec![0.0; d * d];
        self.pull(&gam, &h.grad, &mut buf);
        jet.g_slice_mut().copy_from_slice(&buf);

        let mut w0 = vec![0.0; d];
        self.axis_row(&gam, &h.grad, &mut w0);
        let w1: Vec<Vec<f64>> = ghat1
            .iter()
            .map(|gc| {
                let mut w = vec![0.0; d];
                self.axis_row(gc, &h.grad, &mut w);
                w
            })
            .collect();
        let hs = |a: usize, b: usize| h.hess[a * d + b];
        for c in 0..d {
            self.pull(&ghat1[c], &h.grad, &mut buf);
            for a in 0..d {
                for b in 0..d {
                    buf[a * d + b] += hs(a, c) * w0[b] + w0[a] * hs(b, c);
                }
            }
            jet.d_slice_mut(c).copy_from_slice(&buf);
        }

        let gii = gam[ax * n + ax];
        let mut ghat2 = vec![0.0; n2];
        for c in 0..d {
            let lc = self.lift_index(c);
            for e in c..d {
                let le = self.lift_index(e);
                let (sc, se, sce) = (h.grad[c], h.grad[e], hs(c, e));
                for t in 0..n2 {
                    let (r, q) = (t / n, t % n);
                    ghat2[t] = ambient.dd(lc, le, r, q)
                        + se * ambient.dd(lc, ax, r, q)
                        + sc * ambient.dd(ax, le, r, q)
                        + sc * se * ambient.dd(ax, ax, r, q)
                        + sce * ambient.d(ax, r, q);
                }
                self.pull(&ghat2, &h.grad, &mut buf);
                for a in 0..d {
                    for b in 0..d {
                        let tce_a = third(a, c, e);
                        let tce_b = third(b, c, e);
                        buf[a * d + b] += tce_a * w0[b]
                            + w0[a] * tce_b
                            + hs(a, c) * w1[e][b]
                            + w1[e][a] * hs(b, c)
                            + hs(a, e) * w1[c][b]
                            + w1[c][a] * hs(b, e)
                            + (hs(a, c) * hs(b, e) + hs(a, e) * hs(b, c)) * gii;
                    }
                }
                jet.set_second_slice(c, e, &buf);
            }
        }
        Ok(jet)
    }
}

/// Induced metric of g_j on the unit sphere in the given chart.
pub fn sphere_metric_at(g: &AmbientMetric, chart: &SphereChart, p: &[f64]) -> Result<DMatrix<f64>> {
    if chart.dim != g.dim() {
        return Err(IsoError::Dimension(format!("chart in dimension {} for a metric in dimension {}", chart.dim, g.dim())));
    }
    let jac = chart.jacobian(p)?;
    let big = g.metric_at_point(&chart.embed(p)?)?;
    Ok(jac.transpose() * big * jac)
}

pub fn sphere_jet(g: &AmbientMetric, chart: &SphereChart, p: &[f64]) -> Result<MetricJet> {
    let q = chart.embed(p)?;
    chart.pullback_jet(&g.jet(&q)?, p)
}

/// Induced volume density of g_j on the unit sphere relative to the round
/// one: sqrt(det EᵀGE) for an orthonormal frame E of the tangent space at q.
pub fn sphere_volume_density(g: &AmbientMetric, q: &[f64]) -> Result<f64> {
    let gq = g.metric_at_point(q)?;
    let n = q.len();
    // Householder reflection sending e_0 to ±q; its remaining columns span q⟂.
    let sign = if q[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = DVector::from_column_slice(q);
    v[0] += sign;
    let vv = v.norm_squared();
    let mut frame = DMatrix::zeros(n, n - 1);
    for c in 1..n {
        for r in 0..n {
            let id = if r == c { 1.0 } else { 0.0 };
            frame[(r, c - 1)] = id - 2.0 * v[r] * v[c] / vv;
        }
    }
    let gram = frame.transpose() * gq * &frame;
    let chol = gram.cholesky().ok_or_else(|| IsoError::Numerical("induced metric is not positive definite".into()))?;
    let ldiag: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    Ok(ldiag.exp())
}

/// Radii of a torus-saturated leaf: the leaf is {(x, u) : |u_i| = a_i}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafSpec {
    a: Vec<f64>,
}

impl LeafSpec {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(IsoError::Config(format!("leaf radii must be positive, got {a:?}")));
        }
        Ok(Self { a })
    }

    pub fn radii(&self) -> &[f64] {
        &self.a
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    /// sqrt(1 − |a|²): radius of the R^m factor for leaves inside the sphere.
    pub fn base_radius(&self) -> Option<f64> {
        let s: f64 = self.a.iter().map(|v| v * v).sum();
        (s < 1.0).then(|| (1.0 - s).sqrt())
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.a.iter().map(|v| v * c).collect())
    }

    /// Base fiber point (a_1, 0, a_2, 0, ...).
    pub fn base_fiber_point(&self) -> DVector<f64> {
        let mut u = DVector::zeros(2 * self.a.len());
        for (i, ai) in self.a.iter().enumerate() {
            u[2 * i] = *ai;
        }
        u
    }

    fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(self.a.len(), self.a.iter().map(|v| v * v)))
    }
}

/// Ω(x): the k×m matrix of y ↦ ½B(x, y).
fn omega(j: &JMap, x: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(j.k(), j.m());
    for (i, ji) in j.mats().iter().enumerate() {
        let jx = ji * x;
        for b in 0..j.m() {
            out[(i, b)] = 0.5 * jx[b];
        }
    }
    out
}

fn check_leaf(j: &JMap, leaf: &LeafSpec, x: &DVector<f64>, z: &[f64]) -> Result<()> {
    if leaf.k() != j.k() || z.len() != j.k() || x.len() != j.m() {
        return Err(IsoError::Dimension(format!(
            "leaf with {} radii, group point ({}, {}) for j with (m, k) = ({}, {})",
            leaf.k(),
            x.len(),
            z.len(),
            j.m(),
            j.k()
        )));
    }
    Ok(())
}

/// Left-invariant metric of the leaf through radii a, in coordinates (x, z)
/// where z ∈ R^k / 2πZ^k is the exponential coordinate on the torus:
/// [[I + ΩᵀHΩ, −ΩᵀH], [−HΩ, H]] with H = diag(a_i²).
pub fn leaf_metric_at(j: &JMap, leaf: &LeafSpec, x: &DVector<f64>, z: &[f64]) -> Result<DMatrix<f64>> {
    check_leaf(j, leaf, x, z)?;
    let (m, k) = (j.m(), j.k());
    let om = omega(j, x);
    let h = leaf.h_matrix();
    let ho = &h * &om;
    let mut g = DMatrix::zeros(m + k, m + k);
    let mut tl = om.transpose() * &ho;
    for i in 0..m {
        tl[(i, i)] += 1.0;
    }
    g.view_mut((0, 0), (m, m)).copy_from(&tl);
    g.view_mut((m, 0), (k, m)).copy_from(&(-&ho));
    g.view_mut((0, m), (m, k)).copy_from(&(-ho.transpose()));
    g.view_mut((m, m), (k, k)).copy_from(&h);
    Ok(g)
}

pub fn leaf_jet(j: &JMap, leaf: &LeafSpec, point: &[f64]) -> Result<MetricJet> {
    let (m, k) = (j.m(), j.k());
    if point.len() != m + k {
        return Err(IsoError::Dimension(format!("leaf point has {} coordinates, expected {}", point.len(), m + k)));
    }
    let x = DVector::from_column_slice(&point[..m]);
    check_leaf(j, leaf, &x, &point[m..])?;
    let mut da = Vec::with_capacity(m + k);
    for c in 0..m {
        let mut e = DVector::zeros(m);
        e[c] = 1.0;
        da.push(omega(j, &e));
    }
    da.extend((0..k).map(|_| DMatrix::zeros(k, m)));
    Ok(block_metric_jet(&omega(j, &x), &da, |_, _| None, &leaf.h_matrix()))
}

/// The embedding (x, z) ↦ (x, exp(ρ_*(z)) u₀) of the group onto the leaf.
pub fn leaf_embedding(leaf: &LeafSpec, x: &DVector<f64>, z: &[f64]) -> DVector<f64> {
    let u = block_rotation(z) * leaf.base_fiber_point();
    let mut out = DVector::zeros(x.len() + u.len());
    out.rows_mut(0, x.len()).copy_from(x);
    out.rows_mut(x.len(), u.len()).copy_from(&u);
    out
}

/// |leaf metric − pullback of g_j through the leaf embedding| at (x, z).
pub fn leaf_embedding_residual(j: &JMap, leaf: &LeafSpec, x: &DVector<f64>, z: &[f64]) -> Result<f64> {
    let (m, k) = (j.m(), j.k());
    let leaf_g = leaf_metric_at(j, leaf, x, z)?;
    let p = leaf_embedding(leaf, x, z);
    let big = AmbientMetric::new(j.clone()).metric_at_point(p.as_slice())?;
    let u = p.rows(m, 2 * k).into_owned();
    let mut jac = DMatrix::zeros(m + 2 * k, m + k);
    for c in 0..m {
        jac[(c, c)] = 1.0;
    }
    for i in 0..k {
        let mut e = vec![0.0; k];
        e[i] = 1.0;
        let field = fundamental_field(&e, &u);
        jac.view_mut((m, m + i), (2 * k, 1)).copy_from(&field);
    }
    Ok((jac.transpose() * big * jac - leaf_g).amax())
}

/// μ(x, z) = (x, c z) pulls the leaf metric of (cB, h) back to the leaf
/// metric of (B, c²h); returns the largest entry of the difference.
pub fn leaf_scaling_residual(j: &JMap, leaf: &LeafSpec, c: f64, x: &DVector<f64>, z: &[f64]) -> Result<f64> {
    if !(c > 0.0) {
        return Err(IsoError::NonPositiveScale(c));
    }
    let (m, k) = (j.m(), j.k());
    let zc: Vec<f64> = z.iter().map(|v| v * c).collect();
    let target = leaf_metric_at(&j.scaled(c), leaf, x, &zc)?;
    let mut mu = DMatrix::identity(m + k, m + k);
    for i in 0..k {
        mu[(m + i, m + i)] = c;
    }
    let pulled = mu.transpose() * target * &mu;
    let expected = leaf_metric_at(j, &leaf.scaled(c)?, x, z)?;
    Ok((pulled - expected).amax())
}

/// Random point of the unit ball of R^(m+2k) on a principal orbit.
pub fn principal_ball_point<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let p = ball_point(m + 2 * k, rng);
        if is_principal(&p[m..]) {
            return p;
        }
    }
}

/// Random point of the unit sphere of R^(m+2k) on a principal orbit.
pub fn principal_sphere_point<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let p = sphere_point(m + 2 * k, rng);
        if is_principal(&p[m..]) {
            return p;
        }
    }
}

pub fn is_principal(u: &[f64]) -> bool {
    u.chunks(2).all(|b| b[0].hypot(b[1]) >= PRINCIPAL_RADIUS_MIN)
}

/// Compares g_j with the metric of the associated bundle through
/// τ(x, z, u) = (x, exp(ρ_*(z)) u). The bundle metric makes the frame of
/// left-invariant horizontal fields Ỹ_b together with the fiber
/// coordinate fields orthonormal; τ maps Ỹ_b to (e_b, ρ_*(½B(x, e_b)) R u)
/// and e_a to (0, R e_a). Returns max |FᵀG(τ p)F − I| over the samples.
pub fn bundle_isometry_check(j: &JMap, samples: usize, seed: u64) -> Result<f64> {
    let (m, k) = (j.m(), j.k());
    let metric = AmbientMetric::new(j.clone());
    let bmap = bmap_from_j(j);
    let mut rng = rng_for(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = ball_point(m + 2 * k, &mut rng);
        let x = DVector::from_column_slice(&p[..m]);
        let u = DVector::from_column_slice(&p[m..]);
        let z: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * TAU).collect();
        worst = worst.max(bundle_frame_deviation(&metric, &bmap, &x, &z, &u));
    }
    Ok(worst)
}

fn bundle_frame_deviation(metric: &AmbientMetric, bmap: &BilinearMapB, x: &DVector<f64>, z: &[f64], u: &DVector<f64>) -> f64 {
    let (m, k) = (metric.m(), metric.k());
    let n = m + 2 * k;
    let rot = block_rotation(z);
    let ru = &rot * u;
    let mut frame = DMatrix::zeros(n, n);
    for b in 0..m {
        let mut e = DVector::zeros(m);
        e[b] = 1.0;
        let half_b: Vec<f64> = bmap.eval(x, &e).iter().map(|v| 0.5 * v).collect();
        frame[(b, b)] = 1.0;
        frame.view_mut((m, b), (2 * k, 1)).copy_from(&fundamental_field(&half_b, &ru));
    }
    frame.view_mut((m, m), (2 * k, 2 * k)).copy_from(&rot);
    let g = metric.metric_at(x, &ru);
    (frame.transpose() * g * &frame - DMatrix::identity(n, n)).amax()
}

/// Bundle-frame deviation at explicit data, for equivariance checks.
pub fn bundle_isometry_deviation_at(j: &JMap, x: &DVector<f64>, z: &[f64], u: &DVector<f64>) -> f64 {
    bundle_frame_deviation(&AmbientMetric::new(j.clone()), &bmap_from_j(j), x, z, u)
}

/// Largest |det G − 1| over `samples` random ball points.
pub fn determinant_defect(metric: &AmbientMetric, samples: usize, seed: u64) -> f64 {
    let mut rng = rng_for(seed);
    (0..samples)
        .map(|_| {
            let p = ball_point(metric.dim(), &mut rng);
            let g = metric.metric_at_point(&p).expect("dimension matches");
            (g.determinant() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Condition number (1-norm) of g_j at a point.
pub fn metric_condition(metric: &AmbientMetric, p: &[f64]) -> Result<f64> {
    Ok(spd_inverse(&metric.metric_at_point(p)?)?.1)
}

/// Writes sampled points and the row-major metric entries as CSV.
pub fn write_metric_csv<W: Write>(out: &mut W, metric: &AmbientMetric, points: &[Vec<f64>]) -> Result<()> {
    let (m, n) = (metric.m(), metric.dim());
    let mut header: Vec<String> = (1..=m).map(|i| format!("x{i}")).collect();
    header.extend((1..=n - m).map(|i| format!("u{i}")));
    for r in 1..=n {
        for c in 1..=n {
            header.push(format!("g_{r}_{c}"));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for p in points {
        let g = metric.metric_at_point(p)?;
        let mut row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
        for r in 0..n {
            for c in 0..n {
                row.push(format!("{:?}", g[(r, c)]));
            }
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jmap::random_generic_jmap;
    use crate::linalg::gaussian_vector;

    fn random_j() -> JMap {
        random_generic_jmap(5, 2, 42).unwrap()
    }

    #[test]
    fn bilinear_map_matches_j() {
        let j = random_j();
        let b = bmap_from_j(&j);
        let mut rng = rng_for(1);
        for _ in 0..50 {
            let x = gaussian_vector(5, &mut rng);
            let y = gaussian_vector(5, &mut rng);
            let z = gaussian_vector(2, &mut rng);
            assert!(b.eval(&x, &x).amax() < 1e-13);
            let lhs = b.eval(&x, &y).dot(&z);
            let rhs = (j.eval(z.as_slice()) * &x).dot(&y);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn fundamental_field_basics() {
        let u = DVector::from_vec(vec![0.3, 0.7, 1.0, 2.0]);
        let v = fundamental_field(&[1.0, 0.0], &u);
        assert_eq!(v.as_slice(), &[-0.7, 0.3, 0.0, 0.0]);
        assert_eq!(fundamental_field(&[0.4, -1.3], &u).dot(&u), 0.0);
        assert_eq!(rho_star(&[0.4, -1.3]) * &u, fundamental_field(&[0.4, -1.3], &u));
    }

    #[test]
    fn exponential_of_generator_is_torus_action() {
        let mut rng = rng_for(9);
        for _ in 0..20 {
            let z = gaussian_vector(2, &mut rng);
            let u = gaussian_vector(4, &mut rng);
            let expm = rho_star(z.as_slice()).exp();
            let zbar: Vec<f64> = z.iter().map(|v| v / TAU).collect();
            let (_, w) = torus_action(&zbar, &DVector::zeros(0), &u);
            assert!((expm * &u - w).amax() < 1e-12);
        }
    }

    #[test]
    fn metric_structure() {
        let metric = AmbientMetric::new(random_j());
        let flat = AmbientMetric::new(JMap::zero(5, 2));
        let mut rng = rng_for(3);
        for _ in 0..100 {
            let p = ball_point(9, &mut rng);
            let (x, u) = metric.split(&p);
            assert_eq!(flat.metric_at(&x, &u), DMatrix::identity(9, 9));
            let g = metric.metric_at(&x, &u);
            assert!((g.determinant() - 1.0).abs() < 1e-12);
            assert_eq!(g.view((5, 5), (4, 4)).into_owned(), DMatrix::identity(4, 4));
            let y = gaussian_vector(5, &mut rng);
            let lift = metric.horizontal_lift(&x, &u, &y);
            assert!(((lift.transpose() * &g * &lift)[0] - y.norm_squared()).abs() < 1e-12 * (1.0 + y.norm_squared()));
            let mut vert = DVector::zeros(9);
            vert.rows_mut(5, 4).copy_from(&gaussian_vector(4, &mut rng));
            assert!((lift.transpose() * &g * vert)[0].abs() < 1e-12);
        }
        assert!(determinant_defect(&metric, 1000, 5) < 1e-12);
    }

    #[test]
    fn torus_invariance() {
        let metric = AmbientMetric::new(random_j());
        let mut rng = rng_for(4);
        for _ in 0..100 {
            let p = ball_point(9, &mut rng);
            let (x, u) = metric.split(&p);
            let zbar = [rng.random::<f64>(), rng.random::<f64>()];
            let theta: Vec<f64> = zbar.iter().map(|z| TAU * z).collect();
            let rot = block_rotation(&theta);
            let mut d = DMatrix::identity(9, 9);
            d.view_mut((5, 5), (4, 4)).copy_from(&rot);
            let (x2, u2) = torus_action(&zbar, &x, &u);
            assert_eq!(x2, x);
            let pulled = d.transpose() * metric.metric_at(&x2, &u2) * &d;
            assert!((pulled - metric.metric_at(&x, &u)).amax() < 1e-12);
            let (r1, r2) = (block_radii(&u), block_radii(&u2));
            assert!(r1.iter().zip(&r2).all(|(a, b)| (a - b).abs() < 1e-14));
        }
        let (_, same) = torus_action(&[0.0, 0.0], &DVector::zeros(5), &DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(same.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn orbit_angles_recovered() {
        let mut rng = rng_for(7);
        for _ in 0..20 {
            let u = gaussian_vector(4, &mut rng);
            let zbar = [rng.random::<f64>(), rng.random::<f64>()];
            let (_, v) = torus_action(&zbar, &DVector::zeros(0), &u);
            let back = orbit_angles(&u, &v).unwrap();
            let (_, w) = torus_action(&back, &DVector::zeros(0), &u);
            assert!((w - &v).amax() < 1e-10);
        }
        let u = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let v = DVector::from_vec(vec![2.0, 0.0, 1.0, 0.0]);
        assert!(orbit_angles(&u, &v).is_err());
    }

    #[test]
    fn round_sphere_in_graph_coordinates() {
        let flat = AmbientMetric::new(JMap::zero(5, 2));
        let chart = SphereChart::new(9, 3, false).unwrap();
        let mut rng = rng_for(11);
        for _ in 0..50 {
            let q = sphere_point(9, &mut rng);
            let (_, p) = SphereChart::best_for(&q);
            let s2 = 1.0 - p.iter().map(|v| v * v).sum::<f64>();
            let g = sphere_metric_at(&flat, &chart, &p).unwrap();
            for a in 0..8 {
                for b in 0..8 {
                    let expected = if a == b { 1.0 } else { 0.0 } + p[a] * p[b] / s2;
                    assert!((g[(a, b)] - expected).abs() < 1e-13);
                }
            }
        }
        let outside = vec![0.999; 8];
        assert!(matches!(sphere_metric_at(&flat, &chart, &outside), Err(IsoError::ChartDomain { .. })));
    }

    #[test]
    fn chart_embedding_and_transitions() {
        let metric = AmbientMetric::new(random_j());
        let mut rng = rng_for(12);
        let mut checked = 0;
        while checked < 50 {
            let q = sphere_point(9, &mut rng);
            let (c1, p1) = SphereChart::best_for(&q);
            let image = c1.embed(&p1).unwrap();
            assert!((image.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-14);
            // second chart over another axis with |q_axis| large enough
            let Some((axis2, _)) = q.iter().enumerate().filter(|(i, v)| *i != c1.axis && v.abs() > 0.2).next() else { continue };
            let c2 = SphereChart::new(9, axis2, q[axis2] > 0.0).unwrap();
            let p2 = c2.project(&q);
            if !c2.in_domain(&p2) {
                continue;
            }
            let g1 = sphere_metric_at(&metric, &c1, &p1).unwrap();
            let g2 = sphere_metric_at(&metric, &c2, &p2).unwrap();
            let d_psi = {
                let j1 = c1.jacobian(&p1).unwrap();
                let mut proj = DMatrix::zeros(8, 9);
                for a in 0..8 {
                    proj[(a, c2.lift_index(a))] = 1.0;
                }
                proj * j1
            };
            assert!((d_psi.transpose() * g2 * &d_psi - &g1).amax() < 1e-10);
            assert!(g1.clone().cholesky().is_some());
            checked += 1;
        }
    }

    #[test]
    fn sphere_jet_matches_finite_differences() {
        let metric = AmbientMetric::new(random_j());
        let mut rng = rng_for(13);
        let q = sphere_point(9, &mut rng);
        let (chart, p) = SphereChart::best_for(&q);
        let jet = sphere_jet(&metric, &chart, &p).unwrap();
        assert!((jet.metric() - sphere_metric_at(&metric, &chart, &p).unwrap()).amax() < 1e-14);
        let h = 1e-4;
        let at = |shift: &[(usize, f64)]| {
            let mut pp = p.clone();
            for (i, v) in shift {
                pp[*i] += v;
            }
            sphere_metric_at(&metric, &chart, &pp).unwrap()
        };
        for c in 0..8 {
            let fd = (at(&[(c, h)]) - at(&[(c, -h)])) / (2.0 * h);
            assert!((fd - jet.first(c)).amax() < 1e-6, "first derivative {c}");
            for e in 0..8 {
                let fd2 = jet_first_at(&metric, &chart, &p, c, e, h);
                assert!((fd2 - jet.second(c, e)).amax() < 1e-5, "second derivative {c},{e}");
            }
        }
    }

    fn jet_first_at(metric: &AmbientMetric, chart: &SphereChart, p: &[f64], c: usize, e: usize, h: f64) -> DMatrix<f64> {
        let mut plus = p.to_vec();
        plus[e] += h;
        let mut minus = p.to_vec();
        minus[e] -= h;
        (sphere_jet(metric, chart, &plus).unwrap().first(c) - sphere_jet(metric, chart, &minus).unwrap().first(c)) / (2.0 * h)
    }

    #[test]
    fn ambient_jet_matches_finite_differences() {
        let metric = AmbientMetric::new(random_j());
        let mut rng = rng_for(14);
        let p = ball_point(9, &mut rng);
        let jet = metric.jet(&p).unwrap();
        let h = 1e-5;
        for c in 0..9 {
            let mut plus = p.clone();
            plus[c] += h;
            let mut minus = p.clone();
            minus[c] -= h;
            let fd = (metric.metric_at_point(&plus).unwrap() - metric.metric_at_point(&minus).unwrap()) / (2.0 * h);
            assert!((fd - jet.first(c)).amax() < 1e-8);
            for e in 0..9 {
                let fd2 = (metric.jet(&plus).unwrap().first(e) - metric.jet(&minus).unwrap().first(e)) / (2.0 * h);
                assert!((fd2 - jet.second(c, e)).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn leaf_metric_structure_and_isometries() {
        let j = random_j();
        let leaf = LeafSpec::new(vec![0.4, 0.7]).unwrap();
        let flat = leaf_metric_at(&JMap::zero(5, 2), &leaf, &DVector::from_element(5, 0.3), &[0.1, 0.2]).unwrap();
        let mut expected = DMatrix::identity(7, 7);
        expected[(5, 5)] = 0.16;
        expected[(6, 6)] = 0.49;
        assert!((flat - expected).amax() < 1e-16);
        let mut rng = rng_for(15);
        for _ in 0..100 {
            let x = gaussian_vector(5, &mut rng);
            let z = [rng.random::<f64>() * TAU, rng.random::<f64>() * TAU];
            assert!(leaf_embedding_residual(&j, &leaf, &x, &z).unwrap() < 1e-11);
            assert!(leaf_scaling_residual(&j, &leaf, 0.3, &x, &z).unwrap() < 1e-11);
        }
        assert_eq!(leaf.base_radius().map(|r| (r * r - 0.35).abs() < 1e-15), Some(true));
        assert!(LeafSpec::new(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn leaf_jet_is_consistent() {
        let j = random_j();
        let leaf = LeafSpec::new(vec![0.4, 0.7]).unwrap();
        let point = [0.1, -0.2, 0.3, 0.05, 0.4, 1.0, 2.0];
        let jet = leaf_jet(&j, &leaf, &point).unwrap();
        let x = DVector::from_column_slice(&point[..5]);
        assert!((jet.metric() - leaf_metric_at(&j, &leaf, &x, &point[5..]).unwrap()).amax() < 1e-15);
        let h = 1e-5;
        let mut xp = x.clone();
        xp[2] += h;
        let mut xm = x.clone();
        xm[2] -= h;
        let fd = (leaf_metric_at(&j, &leaf, &xp, &point[5..]).unwrap() - leaf_metric_at(&j, &leaf, &xm, &point[5..]).unwrap()) / (2.0 * h);
        assert!((fd - jet.first(2)).amax() < 1e-9);
        assert_eq!(jet.first(6), DMatrix::zeros(7, 7));
    }

    #[test]
    fn bundle_isometry() {
        // both sides flat; only rounding in the fiber rotation remains
        assert!(bundle_isometry_check(&JMap::zero(5, 2), 20, 1).unwrap() <= 1e-15);
        assert!(bundle_isometry_check(&random_j(), 200, 2).unwrap() <= 1e-10);
        let j = random_j();
        let x = DVector::from_vec(vec![0.2, -0.1, 0.3, 0.4, 0.1]);
        let u = DVector::from_vec(vec![0.3, 0.1, -0.2, 0.5]);
        let d1 = bundle_isometry_deviation_at(&j, &x, &[0.3, 1.1], &u);
        let d2 = bundle_isometry_deviation_at(&j, &x, &[0.3 + 0.7, 1.1 - 2.0], &u);
        assert!(d1 <= 1e-12 && d2 <= 1e-12);
    }

    #[test]
    fn csv_emission() {
        let metric = AmbientMetric::new(random_j());
        let mut buf = Vec::new();
        write_metric_csv(&mut buf, &metric, &[vec![0.1; 9]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 9 + 81);
        assert!(lines[0].starts_with("x1,") && lines[0].contains("u4,g_1_1"));
    }

    #[test]
    fn sphere_density_is_one() {
        let metric = AmbientMetric::new(random_j());
        let mut rng = rng_for(21);
        for _ in 0..100 {
            let q = sphere_point(9, &mut rng);
            assert!((sphere_volume_density(&metric, &q).unwrap() - 1.0).abs() < 1e-13);
        }
    }
}
