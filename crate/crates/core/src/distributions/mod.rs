//! Sampling primitives: seeded streams, PSD Cholesky with a jitter ladder,
//! multivariate normal draws and Bartlett-decomposition Wishart draws.

mod rng;
mod wishart;

pub use rng::RngStream;
pub use wishart::WishartParams;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative jitters tried in order, scaled by `trace / p`.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Lower-triangular factor of a PSD matrix together with the jitter that was
/// needed to obtain it.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    pub l: DMatrix<f64>,
    /// Absolute amount added to the diagonal (zero if none was needed).
    pub jitter: f64,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a symmetric PSD matrix.
///
/// Tries `M + εI` for ε on [`JITTER_LADDER`] (relative to `trace / p`),
/// skipping rungs above `max_relative_jitter`. A matrix that is exactly zero
/// factors to the zero matrix.
pub fn chol_psd(m: &DMatrix<f64>, max_relative_jitter: f64) -> Result<PsdFactor> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Domain(format!(
            "cholesky of non-square {}x{} matrix",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("cholesky of non-finite matrix".into()));
    }
    let sym = symmetrize(m);
    if sym.iter().all(|&v| v == 0.0) {
        return Ok(PsdFactor {
            l: DMatrix::zeros(n, n),
            jitter: 0.0,
        });
    }
    let scale = sym.trace() / n as f64;
    if scale > 0.0 {
        for &rel in JITTER_LADDER.iter().filter(|&&r| r <= max_relative_jitter) {
            let eps = rel * scale;
            let mut candidate = sym.clone();
            for i in 0..n {
                candidate[(i, i)] += eps;
            }
            if let Some(ch) = candidate.cholesky() {
                return Ok(PsdFactor {
                    l: ch.l(),
                    jitter: eps,
                });
            }
        }
    }
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    Err(Error::Numerical(format!(
        "matrix is not positive semi-definite within jitter (eigenvalues in [{min:e}, {max:e}])"
    )))
}

/// Solves `R X = B` for symmetric PSD `R`.
///
/// Well-conditioned systems go through Cholesky. Rank-deficient ones are
/// solved with the eigen pseudo-inverse restricted to the column space of
/// `R`, which gives the minimum-norm solution.
pub fn psd_solve(r: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(r);
    if let Some(ch) = sym.clone().cholesky() {
        let l = ch.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..l.nrows() {
            let d = l[(i, i)] * l[(i, i)];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo > hi * 1e-13 {
            return Ok(ch.solve(b));
        }
    }
    pseudo_solve(&sym, b)
}

fn pseudo_solve(sym: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(sym.clone());
    let top = eig.eigenvalues.amax();
    if !top.is_finite() {
        return Err(Error::Numerical("pseudo-solve of non-finite matrix".into()));
    }
    let cutoff = top * 1e-11;
    let n = sym.nrows();
    let mut inv_diag = DVector::zeros(n);
    for i in 0..n {
        let lambda = eig.eigenvalues[i];
        if lambda < -cutoff.max(1e-300) * 1e3 {
            return Err(Error::Numerical(format!(
                "pseudo-solve: matrix has negative eigenvalue {lambda:e}"
            )));
        }
        if lambda > cutoff && lambda > 0.0 {
            inv_diag[i] = 1.0 / lambda;
        }
    }
    let q = &eig.eigenvectors;
    let qtb = q.transpose() * b;
    let scaled = DMatrix::from_fn(n, b.ncols(), |i, j| qtb[(i, j)] * inv_diag[i]);
    Ok(q * scaled)
}

/// Inverse of a symmetric positive definite matrix through its Cholesky
/// factor; fails when the matrix is not positive definite.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(symmetrize(&ch.inverse()))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// One draw from `N(mean, cov)` as `mean + L z`.
pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(Error::Domain(format!(
            "mvn_sample: mean has length {} but covariance is {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let factor = chol_psd(cov, JITTER_LADDER[JITTER_LADDER.len() - 1])?;
    Ok(mvn_sample_factored(mean, &factor.l, rng))
}

/// Draw using a precomputed lower factor. Always consumes `mean.len()`
/// normals so streams stay aligned regardless of the factor's contents.
pub fn mvn_sample_factored<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    l: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = standard_normal_vector(mean.len(), rng);
    mean + l * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn chol_identity() {
        let f = chol_psd(&DMatrix::identity(3, 3), 1e-8).unwrap();
        assert_eq!(f.l, DMatrix::identity(3, 3));
        assert_eq!(f.jitter, 0.0);
    }

    #[test]
    fn chol_hand_example() {
        let f = chol_psd(&dmatrix![4.0, 2.0; 2.0, 3.0], 1e-8).unwrap();
        assert_relative_eq!(f.l, dmatrix![2.0, 0.0; 1.0, 2f64.sqrt()], epsilon = 1e-14);
    }

    #[test]
    fn chol_rank_deficient_needs_jitter() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        let f = chol_psd(&m, 1e-8).unwrap();
        assert!(f.jitter > 0.0);
        let back = &f.l * f.l.transpose();
        assert!((back - m).amax() < 1e-6);
    }

    #[test]
    fn chol_rejects_indefinite() {
        let err = chol_psd(&dmatrix![1.0, 0.0; 0.0, -1.0], 1e-8).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let mut rng = RngStream::new(1);
        let mean = DVector::from_vec(vec![1.5, -2.0]);
        let draw = mvn_sample(&mean, &DMatrix::zeros(2, 2), &mut rng).unwrap();
        assert_eq!(draw, mean);
    }

    #[test]
    fn mvn_is_deterministic_per_seed() {
        let mean = DVector::from_vec(vec![0.0, 1.0]);
        let cov = dmatrix![2.0, 1.0; 1.0, 2.0];
        let a = mvn_sample(&mean, &cov, &mut RngStream::new(9)).unwrap();
        let b = mvn_sample(&mean, &cov, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mvn_sample_covariance() {
        let mut rng = RngStream::new(2024);
        let mean = DVector::zeros(2);
        let cov = dmatrix![2.0, 1.0; 1.0, 2.0];
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        let mut sum = DVector::<f64>::zeros(2);
        for _ in 0..n {
            let d = mvn_sample(&mean, &cov, &mut rng).unwrap();
            acc += &d * d.transpose();
            sum += d;
        }
        let m = sum / n as f64;
        let s = acc / n as f64 - &m * m.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert!(((s[(i, j)] - cov[(i, j)]) / cov[(i, j)]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn diagonal_covariance_components_uncorrelated() {
        let mut rng = RngStream::new(5);
        let mean = DVector::zeros(2);
        let cov = dmatrix![1.0, 0.0; 0.0, 4.0];
        let n = 40_000;
        let draws: Vec<_> = (0..n)
            .map(|_| mvn_sample(&mean, &cov, &mut rng).unwrap())
            .collect();
        let cross: f64 = draws.iter().map(|d| d[0] * d[1]).sum::<f64>() / n as f64;
        let corr = cross / 2.0;
        // 4 standard errors of a zero correlation estimate.
        assert!(corr.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn psd_solve_matches_inverse_when_regular() {
        let r = dmatrix![4.0, 1.0; 1.0, 3.0];
        let b = dmatrix![1.0; 2.0];
        let x = psd_solve(&r, &b).unwrap();
        assert_relative_eq!(&r * x, b, epsilon = 1e-12);
    }

    #[test]
    fn psd_solve_rank_deficient_is_minimum_norm() {
        let r = dmatrix![1.0, 1.0; 1.0, 1.0];
        let b = dmatrix![2.0; 2.0];
        let x = psd_solve(&r, &b).unwrap();
        assert_relative_eq!(x, dmatrix![1.0; 1.0], epsilon = 1e-10);
        let zero = psd_solve(&DMatrix::zeros(2, 2), &b).unwrap();
        assert_eq!(zero, DMatrix::zeros(2, 1));
    }
}
