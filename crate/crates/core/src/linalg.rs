//! Small dense kernels shared by training and regridding.

use nalgebra::DMatrix;

/// `XᵀX` for the row-major block `x[rows][nfeat]`, accumulated into `out`
/// (full symmetric `nfeat × nfeat`, row-major).
pub(crate) fn accumulate_gram(x: &[f64], nfeat: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), nfeat * nfeat);
    for row in x.chunks_exact(nfeat) {
        for (j, &xj) in row.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let dst = &mut out[j * nfeat + j..(j + 1) * nfeat];
            for (d, &xk) in dst.iter_mut().zip(&row[j..]) {
                *d += xj * xk;
            }
        }
    }
    for j in 0..nfeat {
        for k in 0..j {
            out[j * nfeat + k] = out[k * nfeat + j];
        }
    }
}

/// `Xᵀy` for the row-major block `x[rows][nfeat]`, accumulated into `out`.
pub(crate) fn accumulate_xty(x: &[f64], nfeat: usize, y: &[f64], out: &mut [f64]) {
    for (row, &yi) in x.chunks_exact(nfeat).zip(y) {
        for (o, &xv) in out.iter_mut().zip(row) {
            *o += xv * yi;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sym_matvec(a: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(n) {
        *o = dot(&a[i * n..(i + 1) * n], v);
    }
}

/// How a symmetric system was solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Cholesky factorization plus one refinement sweep.
    Cholesky,
    /// Minimum-norm solution through the SVD pseudo-inverse; used when the
    /// matrix is not numerically positive definite.
    MinimumNorm,
}

#[derive(Debug, Clone)]
enum Factor {
    Cholesky(Vec<f64>),
    Pseudo(Vec<f64>),
}

/// Reusable solver for `A c = b` with `A` symmetric positive semi-definite.
#[derive(Debug, Clone)]
pub(crate) struct SymmetricSolver {
    n: usize,
    a: Vec<f64>,
    factor: Factor,
}

impl SymmetricSolver {
    pub(crate) fn new(a: Vec<f64>, n: usize) -> Self {
        let factor = match cholesky(&a, n) {
            Some(l) => Factor::Cholesky(l),
            None => {
                tracing::debug!(n, "normal matrix not positive definite, using pseudo-inverse");
                Factor::Pseudo(pseudo_inverse(&a, n))
            }
        };
        SymmetricSolver { n, a, factor }
    }

    pub(crate) fn method(&self) -> SolveMethod {
        match self.factor {
            Factor::Cholesky(_) => SolveMethod::Cholesky,
            Factor::Pseudo(_) => SolveMethod::MinimumNorm,
        }
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.factor {
            Factor::Cholesky(l) => {
                let mut c = cholesky_solve(l, self.n, b);
                let mut r = vec![0.0; self.n];
                sym_matvec(&self.a, self.n, &c, &mut r);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri = bi - *ri;
                }
                let dc = cholesky_solve(l, self.n, &r);
                for (ci, d) in c.iter_mut().zip(dc) {
                    *ci += d;
                }
                c
            }
            Factor::Pseudo(p) => {
                let mut c = vec![0.0; self.n];
                sym_matvec(p, self.n, b, &mut c);
                c
            }
        }
    }
}

/// Lower-triangular Cholesky factor, row-major; `None` if a pivot is not
/// strictly positive.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0_f64, f64::max);
    let tiny = scale * (n as f64) * f64::EPSILON;
    for i in 0..n {
        for j in 0..=i {
            let s = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > tiny) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - dot(&l[i * n..i * n + i], &y[..i])) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

fn pseudo_inverse(a: &[f64], n: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, a);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * n as f64 * f64::EPSILON;
    let pinv = svd
        .pseudo_inverse(eps)
        .expect("SVD computed with both singular-vector sets");
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = pinv[(i, j)];
        }
    }
    out
}
