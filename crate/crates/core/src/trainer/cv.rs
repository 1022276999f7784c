use std::ops::Range;

use serde::Serialize;

use super::ridge::{check_system, regularized};
use crate::error::{MlozError, Result};
use crate::linalg::{accumulate_gram, accumulate_xty, dot, sym_matvec, SymmetricSolver};

/// Relative tolerance within which two mean validation errors count as tied.
pub const CV_TIE_RTOL: f64 = 1e-12;

/// Contiguous time blocks of near-equal size; the first `n % nfolds` blocks
/// hold one extra sample.
pub fn fold_ranges(n: usize, nfolds: usize) -> Vec<Range<usize>> {
    let base = n / nfolds;
    let extra = n % nfolds;
    let mut start = 0;
    (0..nfolds)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub best_alpha: f64,
    pub best_index: usize,
    /// Mean validation MSE per alpha, in grid order.
    pub cv_scores: Vec<f64>,
}

/// Picks the largest alpha whose score is within [`CV_TIE_RTOL`] of the
/// minimum.
pub fn select_alpha(alpha_grid: &[f64], scores: &[f64]) -> (usize, f64) {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let idx = scores
        .iter()
        .rposition(|&s| s <= min + CV_TIE_RTOL * min.abs())
        .unwrap_or(0);
    (idx, alpha_grid[idx])
}

pub(crate) fn check_alpha_grid(alpha_grid: &[f64]) -> Result<()> {
    if alpha_grid.is_empty() {
        return Err(MlozError::config("alpha_grid", "must not be empty"));
    }
    if alpha_grid.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(MlozError::config("alpha_grid", "values must be finite and >= 0"));
    }
    if alpha_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MlozError::config("alpha_grid", "must be strictly ascending"));
    }
    Ok(())
}

/// Cross-validation and refit machinery for one standardized design matrix.
///
/// Every output level of a column shares the same inputs, so the per-fold
/// Gram matrices and their factorizations are built once and reused for
/// every target.
pub(crate) struct ColumnSolver {
    nfeat: usize,
    folds: Vec<Range<usize>>,
    xs: Vec<f64>,
    block_gram: Vec<Vec<f64>>,
    alpha_grid: Vec<f64>,
    /// `[fold][alpha]` solvers for the training part of each fold.
    fold_solvers: Vec<Vec<SymmetricSolver>>,
    /// Solvers on all samples, one per alpha.
    full_solvers: Vec<SymmetricSolver>,
}

impl ColumnSolver {
    pub(crate) fn new(xs: Vec<f64>, nfeat: usize, alpha_grid: &[f64], nfolds: usize) -> Result<Self> {
        check_alpha_grid(alpha_grid)?;
        if nfolds < 2 {
            return Err(MlozError::config("nfolds", "need at least 2 folds"));
        }
        let n = xs.len() / nfeat.max(1);
        if n < nfolds {
            return Err(MlozError::InsufficientData(format!(
                "{n} samples cannot be split into {nfolds} folds"
            )));
        }
        let folds = fold_ranges(n, nfolds);
        let block_gram: Vec<Vec<f64>> = folds
            .iter()
            .map(|r| {
                let mut g = vec![0.0; nfeat * nfeat];
                accumulate_gram(&xs[r.start * nfeat..r.end * nfeat], nfeat, &mut g);
                g
            })
            .collect();
        let sum_except = |skip: Option<usize>| {
            let mut g = vec![0.0; nfeat * nfeat];
            for (b, bg) in block_gram.iter().enumerate() {
                if Some(b) != skip {
                    g.iter_mut().zip(bg).for_each(|(a, v)| *a += v);
                }
            }
            g
        };
        let fold_solvers = (0..nfolds)
            .map(|f| {
                let g = sum_except(Some(f));
                alpha_grid
                    .iter()
                    .map(|&a| SymmetricSolver::new(regularized(&g, nfeat, a), nfeat))
                    .collect()
            })
            .collect();
        let full = sum_except(None);
        let full_solvers = alpha_grid
            .iter()
            .map(|&a| SymmetricSolver::new(regularized(&full, nfeat, a), nfeat))
            .collect();
        Ok(ColumnSolver {
            nfeat,
            folds,
            xs,
            block_gram,
            alpha_grid: alpha_grid.to_vec(),
            fold_solvers,
            full_solvers,
        })
    }

    pub(crate) fn nsamples(&self) -> usize {
        self.xs.len() / self.nfeat
    }

    /// Cross-validates one standardized target and refits on all samples at
    /// the selected alpha.
    pub(crate) fn fit(&self, ys: &[f64]) -> Result<(CvResult, Vec<f64>)> {
        if ys.len() != self.nsamples() {
            return Err(MlozError::Structural(format!(
                "target has {} samples, design has {}",
                ys.len(),
                self.nsamples()
            )));
        }
        if ys.iter().any(|v| !v.is_finite()) {
            return Err(MlozError::Input("non-finite target value".into()));
        }
        let nfeat = self.nfeat;
        let block_rhs: Vec<Vec<f64>> = self
            .folds
            .iter()
            .map(|r| {
                let mut b = vec![0.0; nfeat];
                accumulate_xty(&self.xs[r.start * nfeat..r.end * nfeat], nfeat, &ys[r.clone()], &mut b);
                b
            })
            .collect();
        let block_yy: Vec<f64> = self.folds.iter().map(|r| dot(&ys[r.clone()], &ys[r.clone()])).collect();
        let rhs_except = |skip: Option<usize>| {
            let mut b = vec![0.0; nfeat];
            for (i, rb) in block_rhs.iter().enumerate() {
                if Some(i) != skip {
                    b.iter_mut().zip(rb).for_each(|(a, v)| *a += v);
                }
            }
            b
        };

        let mut scores = vec![0.0; self.alpha_grid.len()];
        let mut gc = vec![0.0; nfeat];
        for (f, range) in self.folds.iter().enumerate() {
            let rhs = rhs_except(Some(f));
            for (ai, solver) in self.fold_solvers[f].iter().enumerate() {
                let c = solver.solve(&rhs);
                // ‖y_v − X_v c‖² = y_vᵀy_v − 2 cᵀX_vᵀy_v + cᵀ(X_vᵀX_v)c
                sym_matvec(&self.block_gram[f], nfeat, &c, &mut gc);
                let sse = block_yy[f] - 2.0 * dot(&c, &block_rhs[f]) + dot(&c, &gc);
                scores[ai] += sse.max(0.0) / range.len() as f64;
            }
        }
        let nfolds = self.folds.len() as f64;
        scores.iter_mut().for_each(|s| *s /= nfolds);
        let (best_index, best_alpha) = select_alpha(&self.alpha_grid, &scores);
        let coeffs = self.full_solvers[best_index].solve(&rhs_except(None));
        Ok((
            CvResult {
                best_alpha,
                best_index,
                cv_scores: scores,
            },
            coeffs,
        ))
    }
}

/// K-fold cross-validation over `alpha_grid` using contiguous blocks.
pub fn cross_validate(xs: &[f64], nfeat: usize, ys: &[f64], alpha_grid: &[f64], nfolds: usize) -> Result<CvResult> {
    check_system(xs, nfeat, ys)?;
    let solver = ColumnSolver::new(xs.to_vec(), nfeat, alpha_grid, nfolds)?;
    Ok(solver.fit(ys)?.0)
}
