//! Weighted least squares with heteroskedasticity-robust covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition floor: smallest over largest singular value of the weighted design.
pub const SINGULAR_RATIO: f64 = 1e-10;

/// Result of one weighted least-squares fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub coef: DVector<f64>,
    /// `(X'WX)^-1`.
    pub bread: DMatrix<f64>,
}

/// Minimizes `sum w_i (y_i - x_i b)^2` through a QR factorization of
/// `sqrt(W) X`. All weights must be positive.
pub fn wls(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Result<Fit> {
    let (n, k) = x.shape();
    if n < k {
        return Err(Error::SingularDesign { ratio: 0.0 });
    }
    let mut xw = x.clone();
    let mut yw = y.clone();
    for (i, wi) in w.iter().enumerate() {
        let r = wi.sqrt();
        xw.row_mut(i).scale_mut(r);
        yw[i] *= r;
    }
    let sv = xw.singular_values();
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(ratio >= SINGULAR_RATIO) {
        return Err(Error::SingularDesign { ratio });
    }
    let qr = xw.qr();
    let r = qr.r();
    let qty = qr.q().transpose() * yw;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularDesign { ratio })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::SingularDesign { ratio })?;
    let bread = &r_inv * r_inv.transpose();
    Ok(Fit { coef, bread })
}

/// HC1 sandwich `n/(n-k) B (sum w_i^2 u_i^2 x_i x_i') B`.
pub fn hc1(x: &DMatrix<f64>, w: &[f64], resid: &DVector<f64>, bread: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let s = w[i] * resid[i];
        let xi = x.row(i).transpose() * s;
        meat.ger(1.0, &xi, &xi, 1.0);
    }
    let dof = if n > k { n as f64 / (n - k) as f64 } else { f64::INFINITY };
    bread * meat * bread * dof
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_line() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let fit = wls(&x, &y, &[1.0, 0.5, 2.0, 1.0]).unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 1e-12);
        assert!((fit.coef[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_is_intercept_only_fit() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 6.0]);
        let w = [1.0, 1.0, 2.0];
        let fit = wls(&x, &y, &w).unwrap();
        assert!((fit.coef[0] - 15.0 / 4.0).abs() < 1e-12);
        assert!((fit.bread[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_are_singular() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(wls(&x, &y, &[1.0; 3]), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn hc1_matches_closed_form_for_mean() {
        // For an intercept-only OLS fit, the HC1 variance is n/(n-1) * sum(u^2) / n^2.
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 6.0]);
        let w = [1.0; 4];
        let fit = wls(&x, &y, &w).unwrap();
        let resid = &y - &x * &fit.coef;
        let v = hc1(&x, &w, &resid, &fit.bread);
        let ss: f64 = resid.iter().map(|u| u * u).sum();
        assert!((v[(0, 0)] - 4.0 / 3.0 * ss / 16.0).abs() < 1e-12);
    }
}
