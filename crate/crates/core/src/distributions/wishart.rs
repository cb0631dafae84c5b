//! Wishart distribution in the shape/rate-matrix convention.
//!
//! The density kernel is `det(Φ)^(v - (p+1)/2) · exp(-tr(S Φ))`. Matching
//! it against the textbook `W_p(n, Σ)` kernel
//! `det(Φ)^((n-p-1)/2) · exp(-tr(Σ⁻¹ Φ)/2)` gives `n = 2v` and
//! `Σ = (2S)⁻¹`, hence `E[Φ] = n Σ = v S⁻¹`. [`WishartParams::standard_form`]
//! is the only place where that conversion happens.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{spd_inverse, symmetrize};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    /// Shape `v`.
    pub shape: f64,
    /// Rate matrix `S` (symmetric positive definite).
    pub rate: DMatrix<f64>,
}

impl WishartParams {
    pub fn new(shape: f64, rate: DMatrix<f64>) -> Result<Self> {
        let p = rate.nrows();
        if p == 0 || rate.ncols() != p {
            return Err(Error::Domain("wishart rate matrix must be square".into()));
        }
        if !shape.is_finite() || 2.0 * shape <= (p as f64) - 1.0 {
            return Err(Error::Domain(format!(
                "wishart shape {shape} must exceed (p-1)/2 = {}",
                (p as f64 - 1.0) / 2.0
            )));
        }
        if symmetrize(&rate).cholesky().is_none() {
            return Err(Error::Domain(
                "wishart rate matrix must be positive definite".into(),
            ));
        }
        Ok(Self { shape, rate })
    }

    pub fn dim(&self) -> usize {
        self.rate.nrows()
    }

    /// Degrees of freedom and scale matrix of the equivalent `W_p(n, Σ)`.
    pub fn standard_form(&self) -> Result<(f64, DMatrix<f64>)> {
        let scale = spd_inverse(&(&self.rate * 2.0))?;
        Ok((2.0 * self.shape, scale))
    }

    pub fn mean(&self) -> Result<DMatrix<f64>> {
        let (df, scale) = self.standard_form()?;
        Ok(scale * df)
    }

    /// Conjugate update after observing residual cross-products `ss` from
    /// `n` independent `N(0, Φ⁻¹)` vectors: `(v + n/2, S + ss/2)`.
    pub fn posterior(&self, n: usize, ss: &DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.shape + n as f64 / 2.0,
            symmetrize(&(&self.rate + ss * 0.5)),
        )
    }

    /// Bartlett draw: `Φ = (L A)(L A)ᵀ` with `L Lᵀ = Σ`, `A` lower
    /// triangular, `A_ii² ~ χ²(n - i)` and standard normal entries below the
    /// diagonal. Works for non-integer `n`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DMatrix<f64>> {
        let (df, scale) = self.standard_form()?;
        let p = self.dim();
        let l = scale
            .cholesky()
            .ok_or_else(|| Error::Numerical("wishart scale is not positive definite".into()))?
            .l();
        let mut a = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            let chi = ChiSquared::new(df - i as f64)
                .map_err(|e| Error::Domain(format!("wishart chi-square draw: {e}")))?;
            a[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let la = l * a;
        Ok(symmetrize(&(&la * la.transpose())))
    }
}
