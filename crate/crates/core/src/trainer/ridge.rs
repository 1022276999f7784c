use crate::error::{MlozError, Result};
use crate::linalg::{accumulate_gram, accumulate_xty, SymmetricSolver};

pub use crate::linalg::SolveMethod;

/// Coefficients of one ridge fit and the route taken to obtain them.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub coeffs: Vec<f64>,
    pub method: SolveMethod,
}

pub(crate) fn check_system(xs: &[f64], nfeat: usize, ys: &[f64]) -> Result<()> {
    if nfeat == 0 || xs.len() != ys.len() * nfeat {
        return Err(MlozError::Structural(format!(
            "design matrix has {} values, expected {} x {nfeat}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(MlozError::Input("non-finite value in ridge system".into()));
    }
    Ok(())
}

/// Regularized normal matrix `XᵀX + αI`.
pub(crate) fn regularized(gram: &[f64], nfeat: usize, alpha: f64) -> Vec<f64> {
    let mut a = gram.to_vec();
    for j in 0..nfeat {
        a[j * nfeat + j] += alpha;
    }
    a
}

/// Minimizes `Σᵢ (ysᵢ − Σⱼ xsᵢⱼ cⱼ)² + α Σⱼ cⱼ²` over `c` by solving
/// `(XᵀX + αI) c = Xᵀy`. There is no intercept; inputs are expected to be
/// standardized.
///
/// A normal matrix that is not positive definite (only possible for
/// `α = 0`) yields the minimum-norm least-squares solution instead.
pub fn ridge_solve(xs: &[f64], nfeat: usize, ys: &[f64], alpha: f64) -> Result<RidgeSolution> {
    check_system(xs, nfeat, ys)?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(MlozError::Input(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let mut gram = vec![0.0; nfeat * nfeat];
    accumulate_gram(xs, nfeat, &mut gram);
    let mut rhs = vec![0.0; nfeat];
    accumulate_xty(xs, nfeat, ys, &mut rhs);
    let solver = SymmetricSolver::new(regularized(&gram, nfeat, alpha), nfeat);
    Ok(RidgeSolution {
        coeffs: solver.solve(&rhs),
        method: solver.method(),
    })
}

/// Penalized residual sum of squares of `coeffs`.
pub fn ridge_objective(xs: &[f64], nfeat: usize, ys: &[f64], alpha: f64, coeffs: &[f64]) -> f64 {
    let rss: f64 = xs
        .chunks_exact(nfeat)
        .zip(ys)
        .map(|(row, y)| {
            let r = y - crate::linalg::dot(row, coeffs);
            r * r
        })
        .sum();
    rss + alpha * coeffs.iter().map(|c| c * c).sum::<f64>()
}
