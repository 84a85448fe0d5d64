//! Second-order jets of a metric tensor in a coordinate chart.

use nalgebra::DMatrix;

/// Metric value with first and second coordinate derivatives, stored flat:
/// `d(c, a, b) = ∂_c g_ab` and `dd(c, e, a, b) = ∂_c ∂_e g_ab`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricJet {
    n: usize,
    g: Vec<f64>,
    d: Vec<f64>,
    dd: Vec<f64>,
}

impl MetricJet {
    pub fn zeros(n: usize) -> Self {
        Self { n, g: vec![0.0; n * n], d: vec![0.0; n * n * n], dd: vec![0.0; n * n * n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn g(&self, a: usize, b: usize) -> f64 {
        self.g[a * self.n + b]
    }

    #[inline]
    pub fn d(&self, c: usize, a: usize, b: usize) -> f64 {
        self.d[(c * self.n + a) * self.n + b]
    }

    #[inline]
    pub fn dd(&self, c: usize, e: usize, a: usize, b: usize) -> f64 {
        self.dd[((c * self.n + e) * self.n + a) * self.n + b]
    }

    pub fn metric(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.g)
    }

    pub fn first(&self, c: usize) -> DMatrix<f64> {
        let n2 = self.n * self.n;
        DMatrix::from_row_slice(self.n, self.n, &self.d[c * n2..(c + 1) * n2])
    }

    pub fn second(&self, c: usize, e: usize) -> DMatrix<f64> {
        let n2 = self.n * self.n;
        let off = (c * self.n + e) * n2;
        DMatrix::from_row_slice(self.n, self.n, &self.dd[off..off + n2])
    }

    pub(crate) fn g_slice_mut(&mut self) -> &mut [f64] {
        &mut self.g
    }

    pub(crate) fn d_slice_mut(&mut self, c: usize) -> &mut [f64] {
        let n2 = self.n * self.n;
        &mut self.d[c * n2..(c + 1) * n2]
    }

    pub(crate) fn set_metric(&mut self, m: &DMatrix<f64>) {
        write_row_major(m, &mut self.g);
    }

    pub(crate) fn set_first(&mut self, c: usize, m: &DMatrix<f64>) {
        let n2 = self.n * self.n;
        write_row_major(m, &mut self.d[c * n2..(c + 1) * n2]);
    }

    /// Writes both ∂_c∂_e and ∂_e∂_c.
    pub(crate) fn set_second(&mut self, c: usize, e: usize, m: &DMatrix<f64>) {
        let n2 = self.n * self.n;
        for (x, y) in [(c, e), (e, c)] {
            let off = (x * self.n + y) * n2;
            write_row_major(m, &mut self.dd[off..off + n2]);
        }
    }

    pub(crate) fn set_second_slice(&mut self, c: usize, e: usize, vals: &[f64]) {
        let n2 = self.n * self.n;
        for (x, y) in [(c, e), (e, c)] {
            let off = (x * self.n + y) * n2;
            self.dd[off..off + n2].copy_from_slice(vals);
        }
    }
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.ncols();
    for a in 0..m.nrows() {
        for b in 0..n {
            out[a * n + b] = m[(a, b)];
        }
    }
}

/// Jet of the block metric [[I + AᵀMA, −AᵀM], [−MA, M]] in coordinates
/// (x, w) where A is r×m and M a constant r×r matrix. `da[c]` is ∂A/∂c for
/// every coordinate; `dda(c, e)` returns ∂²A/∂c∂e when it is nonzero.
pub(crate) fn block_metric_jet(
    a: &DMatrix<f64>,
    da: &[DMatrix<f64>],
    dda: impl Fn(usize, usize) -> Option<DMatrix<f64>>,
    mm: &DMatrix<f64>,
) -> MetricJet {
    let (r, m) = a.shape();
    let n = m + r;
    let mut jet = MetricJet::zeros(n);
    let ma = mm * a;
    let mut g = DMatrix::zeros(n, n);
    {
        let mut tl = a.transpose() * &ma;
        for i in 0..m {
            tl[(i, i)] += 1.0;
        }
        g.view_mut((0, 0), (m, m)).copy_from(&tl);
        g.view_mut((m, 0), (r, m)).copy_from(&(-&ma));
        g.view_mut((0, m), (m, r)).copy_from(&(-ma.transpose()));
        g.view_mut((m, m), (r, r)).copy_from(mm);
    }
    jet.set_metric(&g);

    let mda: Vec<DMatrix<f64>> = da.iter().map(|d| mm * d).collect();
    let is_zero: Vec<bool> = da.iter().map(|d| d.iter().all(|&v| v == 0.0)).collect();
    let mut block = DMatrix::zeros(n, n);
    for c in 0..n {
        if is_zero[c] {
            continue;
        }
        let sym = da[c].transpose() * &ma;
        let tl = &sym + sym.transpose();
        block.fill(0.0);
        block.view_mut((0, 0), (m, m)).copy_from(&tl);
        block.view_mut((m, 0), (r, m)).copy_from(&(-&mda[c]));
        block.view_mut((0, m), (m, r)).copy_from(&(-mda[c].transpose()));
        jet.set_first(c, &block);
    }
    for c in 0..n {
        for e in c..n {
            let second = dda(c, e);
            if (is_zero[c] || is_zero[e]) && second.is_none() {
                continue;
            }
            block.fill(0.0);
            let mut tl = DMatrix::zeros(m, m);
            if !is_zero[c] && !is_zero[e] {
                let cross = da[c].transpose() * &mda[e];
                tl += &cross + cross.transpose();
            }
            if let Some(dd) = second {
                let sym = dd.transpose() * &ma;
                tl += &sym + sym.transpose();
                let mdd = mm * &dd;
                block.view_mut((m, 0), (r, m)).copy_from(&(-&mdd));
                block.view_mut((0, m), (m, r)).copy_from(&(-mdd.transpose()));
            }
            block.view_mut((0, 0), (m, m)).copy_from(&tl);
            jet.set_second(c, e, &block);
        }
    }
    jet
}
