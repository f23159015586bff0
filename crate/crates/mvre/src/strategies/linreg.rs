use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ordinary least squares fit with standard errors and t-values.
///
/// An intercept is always included. Collinear columns (detected by
/// column-pivoted QR) are dropped and reported in `dropped`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionModel {
    /// Kept feature columns, in design-matrix order (intercept excluded).
    pub column_names: Vec<String>,
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub intercept_std_error: f64,
    pub std_errors: Vec<f64>,
    pub dropped: Vec<String>,
    /// Indices of kept columns into the original feature layout.
    kept: Vec<usize>,
}

impl RegressionModel {
    /// Prediction for a row in the original (pre-drop) feature layout.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut y = self.intercept;
        for (w, &j) in self.weights.iter().zip(&self.kept) {
            y += w * row[j];
        }
        y
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn t_values(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.std_errors)
            .map(|(w, se)| if *se > 0.0 { w / se } else { f64::INFINITY })
            .collect()
    }
}

/// Least-squares fit of `y` on `rows` (plus intercept).
pub fn fit_linear_regression(
    rows: &[Vec<f64>],
    y: &[f64],
    column_names: &[String],
) -> Result<RegressionModel> {
    let n = rows.len();
    if n == 0 || y.len() != n {
        return Err(Error::EmptyInput("linear regression".into()));
    }
    let d = column_names.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("row width vs column names".into()));
    }

    // full design matrix with leading intercept column
    let full = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let kept_full = independent_columns(&full)?;
    if !kept_full.contains(&0) {
        return Err(Error::RankDeficient(vec!["intercept".into()]));
    }
    let kept: Vec<usize> = kept_full.iter().filter(|&&j| j > 0).map(|&j| j - 1).collect();
    let dropped: Vec<String> = (0..d)
        .filter(|j| !kept.contains(j))
        .map(|j| column_names[j].clone())
        .collect();

    let p = kept.len() + 1;
    if n <= p {
        return Err(Error::InvalidValue(format!(
            "need n > {p} observations, got {n}"
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { rows[i][kept[j - 1]] });
    let yv = DVector::from_row_slice(y);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(dropped.clone()))?;
    let beta = chol.solve(&xty);
    let resid = &yv - &x * &beta;
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let sigma2 = rss / (n - p) as f64;
    let xtx_inv = chol.inverse();
    let se: Vec<f64> = (0..p)
        .map(|j| (sigma2 * xtx_inv[(j, j)]).max(0.0).sqrt())
        .collect();

    Ok(RegressionModel {
        column_names: kept.iter().map(|&j| column_names[j].clone()).collect(),
        intercept: beta[0],
        weights: beta.iter().skip(1).cloned().collect(),
        intercept_std_error: se[0],
        std_errors: se[1..].to_vec(),
        dropped,
        kept,
    })
}

/// Indices of a maximal independent column subset, preferring earlier
/// columns (greedy Gram-Schmidt with a relative tolerance).
fn independent_columns(m: &DMatrix<f64>) -> Result<Vec<usize>> {
    let tol = 1e-8;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j).into_owned();
        let norm0 = col.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = col.clone();
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        if v.norm() > tol * norm0.max(1.0) {
            basis.push(&v / v.norm());
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::RankDeficient(vec![]));
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn noiseless_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let m = fit_linear_regression(&rows, &y, &names(1)).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-9);
        assert!((m.intercept - 1.0).abs() < 1e-9);
        assert!(m.std_errors[0] < 1e-9);
    }

    #[test]
    fn no_signal_case() {
        // y orthogonal to the centered feature column
        let rows = vec![vec![-1.0], vec![1.0], vec![-1.0], vec![1.0]];
        let y = vec![2.0, 2.0, 4.0, 4.0];
        let m = fit_linear_regression(&rows, &y, &names(1)).unwrap();
        assert!(m.weights[0].abs() < 1e-9);
        assert!((m.intercept - 3.0).abs() < 1e-9);
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 1.5 * r[0] - 0.7 * r[1] + 0.2 * r[2] + rng.gen::<f64>())
            .collect();
        let m = fit_linear_regression(&rows, &y, &names(3)).unwrap();
        let preds = m.predict(&rows);
        for j in 0..3 {
            let dot: f64 = rows
                .iter()
                .zip(preds.iter().zip(&y))
                .map(|(r, (p, t))| r[j] * (t - p))
                .sum();
            assert!(dot.abs() < 1e-8, "column {j} dot {dot}");
        }
    }

    #[test]
    fn collinear_column_dropped() {
        // f1 = 2 * f0
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![i as f64, 2.0 * i as f64])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] + 3.0).collect();
        let m = fit_linear_regression(&rows, &y, &names(2)).unwrap();
        assert_eq!(m.dropped, vec!["f1".to_string()]);
        assert!((m.predict_row(&[5.0, 10.0]) - 8.0).abs() < 1e-9);
    }

    #[test]
    fn constant_column_dropped() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 7.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let m = fit_linear_regression(&rows, &y, &names(2)).unwrap();
        assert_eq!(m.dropped, vec!["f1".to_string()]);
    }

    #[test]
    fn needs_more_rows_than_columns() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let y = vec![1.0, 2.0];
        assert!(fit_linear_regression(&rows, &y, &names(2)).is_err());
    }
}
