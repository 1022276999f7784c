use nalgebra::DMatrix;

use crate::error::{MlozError, Result};

/// Dense weights `W[target][knot]` such that the not-a-knot cubic spline
/// through `(knots, y)` evaluates to `W · y` at each target.
///
/// Targets outside the knot span take the nearest end value. A target that
/// coincides with a knot gets a unit weight row, so evaluation there copies
/// the knot value exactly.
pub fn not_a_knot_weights(knots: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    let n = knots.len();
    if n < 4 {
        return Err(MlozError::SplineInfeasible(n));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) || targets.iter().any(|t| !t.is_finite()) {
        return Err(MlozError::Input(
            "spline knots must be strictly increasing and targets finite".into(),
        ));
    }
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();

    // Second derivatives M satisfy A·M = R·y.
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut r = DMatrix::<f64>::zeros(n, n);
    a[(0, 0)] = h[1];
    a[(0, 1)] = -(h[0] + h[1]);
    a[(0, 2)] = h[0];
    for i in 1..n - 1 {
        a[(i, i - 1)] = h[i - 1];
        a[(i, i)] = 2.0 * (h[i - 1] + h[i]);
        a[(i, i + 1)] = h[i];
        r[(i, i - 1)] = 6.0 / h[i - 1];
        r[(i, i)] = -6.0 / h[i - 1] - 6.0 / h[i];
        r[(i, i + 1)] = 6.0 / h[i];
    }
    a[(n - 1, n - 3)] = h[n - 2];
    a[(n - 1, n - 2)] = -(h[n - 3] + h[n - 2]);
    a[(n - 1, n - 1)] = h[n - 3];
    let m = a
        .lu()
        .solve(&r)
        .ok_or_else(|| MlozError::Numeric("singular spline system".into()))?;

    let mut w = vec![0.0; targets.len() * n];
    for (t, &e) in targets.iter().enumerate() {
        let row = &mut w[t * n..(t + 1) * n];
        if e <= knots[0] {
            row[0] = 1.0;
            continue;
        }
        if e >= knots[n - 1] {
            row[n - 1] = 1.0;
            continue;
        }
        if let Some(k) = knots.iter().position(|&x| x == e) {
            row[k] = 1.0;
            continue;
        }
        let k = knots.partition_point(|&x| x <= e) - 1;
        let hk = h[k];
        let dl = e - knots[k];
        let dr = knots[k + 1] - e;
        // S = M_k dr³/6h + M_{k+1} dl³/6h + (y_k/h − M_k h/6) dr + (y_{k+1}/h − M_{k+1} h/6) dl
        let cm0 = dr * dr * dr / (6.0 * hk) - hk * dr / 6.0;
        let cm1 = dl * dl * dl / (6.0 * hk) - hk * dl / 6.0;
        for (j, v) in row.iter_mut().enumerate() {
            *v = cm0 * m[(k, j)] + cm1 * m[(k + 1, j)];
        }
        row[k] += dr / hk;
        row[k + 1] += dl / hk;
    }
    Ok(w)
}
