//! Conditional-normal imputation of missing coordinates at one age.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::distributions::{chol_psd, mvn_sample_factored, symmetrize, JITTER_LADDER};
use crate::error::{Error, Result};

/// Mean and covariance of `y_m | y_o` for `y ~ N(μ, V)` where `missing`
/// flags the coordinates in `m`. Observed coordinates of `y` are read;
/// missing ones are ignored.
pub fn conditional_normal(
    mu: &DVector<f64>,
    v: &DMatrix<f64>,
    y: &DVector<f64>,
    missing: &[bool],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let j = mu.len();
    if v.shape() != (j, j) || y.len() != j || missing.len() != j {
        return Err(Error::Domain("imputation dimensions disagree".into()));
    }
    let m_idx: Vec<usize> = (0..j).filter(|&i| missing[i]).collect();
    let o_idx: Vec<usize> = (0..j).filter(|&i| !missing[i]).collect();
    if m_idx.is_empty() {
        return Err(Error::Domain("no missing coordinate to impute".into()));
    }
    let v_mm = v.select_rows(&m_idx).select_columns(&m_idx);
    let mu_m = mu.select_rows(&m_idx);
    if o_idx.is_empty() {
        return Ok((mu_m, v_mm));
    }
    let v_oo = v.select_rows(&o_idx).select_columns(&o_idx);
    let v_om = v.select_rows(&o_idx).select_columns(&m_idx);
    let resid = y.select_rows(&o_idx) - mu.select_rows(&o_idx);
    if resid.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("observed coordinate is not finite".into()));
    }
    let factor = chol_psd(&v_oo, JITTER_LADDER[JITTER_LADDER.len() - 1])
        .map_err(|e| e.context("observed block of V"))?;
    if factor.l.diagonal().iter().any(|&d| d == 0.0) {
        return Err(Error::Numerical("observed block of V is singular".into()));
    }
    // K = V_oo⁻¹ V_om, so V_mo V_oo⁻¹ = Kᵀ.
    let half = factor
        .l
        .solve_lower_triangular(&v_om)
        .ok_or_else(|| Error::Numerical("observed block of V is singular".into()))?;
    let k = factor
        .l
        .transpose()
        .solve_upper_triangular(&half)
        .ok_or_else(|| Error::Numerical("observed block of V is singular".into()))?;
    let mean = mu_m + k.transpose() * resid;
    let cov = symmetrize(&(v_mm - k.transpose() * v_om));
    Ok((mean, cov))
}

/// Draws the missing coordinates of the observation at one age given the
/// state's fitted vector `fitted = F θ_x` and observational covariance `v`.
/// Values come back in population order of the missing coordinates.
pub fn impute_missing<R: Rng + ?Sized>(
    fitted: &DVector<f64>,
    v: &DMatrix<f64>,
    y: &DVector<f64>,
    missing: &[bool],
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (mean, cov) = conditional_normal(fitted, v, y, missing)?;
    let l = if cov.amax() <= 1e-14 * v.amax() {
        DMatrix::zeros(cov.nrows(), cov.ncols())
    } else {
        chol_psd(&cov, JITTER_LADDER[JITTER_LADDER.len() - 1])?.l
    };
    Ok(mvn_sample_factored(&mean, &l, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn correlated_pair_example() {
        let v = dmatrix![1.0, 0.9; 0.9, 1.0];
        let (m, c) =
            conditional_normal(&dvector![0.0, 0.0], &v, &dvector![1.0, f64::NAN], &[false, true])
                .unwrap();
        assert!((m[0] - 0.9).abs() < 1e-15);
        assert!((c[(0, 0)] - 0.19).abs() < 1e-15);
    }

    #[test]
    fn diagonal_v_gives_fitted_mean() {
        let v = dmatrix![0.3, 0.0; 0.0, 0.2];
        let (m, c) =
            conditional_normal(&dvector![-4.0, -5.0], &v, &dvector![7.0, 0.0], &[false, true])
                .unwrap();
        assert_eq!(m[0], -5.0);
        assert_eq!(c[(0, 0)], 0.2);
    }

    #[test]
    fn all_missing_is_marginal() {
        let v = dmatrix![0.3, 0.1; 0.1, 0.2];
        let mu = dvector![-4.0, -5.0];
        let (m, c) = conditional_normal(&mu, &v, &dvector![0.0, 0.0], &[true, true]).unwrap();
        assert_eq!(m, mu);
        assert_eq!(c, v);
    }

    #[test]
    fn nothing_missing_is_rejected() {
        let v = DMatrix::identity(2, 2);
        assert!(conditional_normal(&dvector![0.0, 0.0], &v, &dvector![0.0, 0.0], &[false, false]).is_err());
    }

    #[test]
    fn seeded_draws_repeat() {
        let v = dmatrix![1.0, 0.5; 0.5, 1.0];
        let y = dvector![0.2, 0.0];
        let a = impute_missing(&dvector![0.0, 0.0], &v, &y, &[false, true], &mut RngStream::new(3)).unwrap();
        let b = impute_missing(&dvector![0.0, 0.0], &v, &y, &[false, true], &mut RngStream::new(3)).unwrap();
        assert_eq!(a, b);
    }
}
