use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric positive-definite matrix B defining the distance
/// sqrt((x−y)ᵀB(x−y)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct AnisotropyMatrix {
    b: DMatrix<f64>,
    b_inv: DMatrix<f64>,
    lambda_min: f64,
    lambda_max: f64,
    ln_det: f64,
}

impl AnisotropyMatrix {
    pub fn new(b: DMatrix<f64>) -> Result<Self> {
        if !b.is_square() || b.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "anisotropy matrix must be square and non-empty, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("anisotropy matrix entry".into()));
        }
        let scale = b.amax().max(1.0);
        let asym = (&b - b.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument(format!(
                "anisotropy matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let b = (&b + b.transpose()) * 0.5;
        let eig = SymmetricEigen::new(b.clone());
        let lambda_min = eig.eigenvalues.min();
        let lambda_max = eig.eigenvalues.max();
        if !(lambda_min > 0.0) {
            return Err(Error::Condition(format!(
                "anisotropy matrix must be positive definite, smallest eigenvalue is {lambda_min:e}"
            )));
        }
        let ln_det = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let b_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
        let b_inv = (&b_inv + b_inv.transpose()) * 0.5;
        Ok(Self {
            b,
            b_inv,
            lambda_min,
            lambda_max,
            ln_det,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(
                "anisotropy matrix rows must form a square".into(),
            ));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d, d))
    }

    /// s·I in dimension d.
    pub fn scaled_identity(d: usize, s: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d) * s)
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// λ_min/λ_max ∈ (0, 1].
    pub fn eigen_ratio(&self) -> f64 {
        self.lambda_min / self.lambda_max
    }

    /// ln det B.
    pub fn ln_det(&self) -> f64 {
        self.ln_det
    }

    /// The same matrix multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let d = self.dim() as f64;
        Ok(Self {
            b: &self.b * factor,
            b_inv: &self.b_inv / factor,
            lambda_min: self.lambda_min * factor,
            lambda_max: self.lambda_max * factor,
            ln_det: self.ln_det + d * factor.ln(),
        })
    }

    /// The same shape rescaled so that its largest eigenvalue is `target`.
    pub fn with_lambda_max(&self, target: f64) -> Result<Self> {
        self.scaled(target / self.lambda_max)
    }

    /// hᵀBh.
    pub fn quad_form(&self, h: &[f64]) -> f64 {
        quad(&self.b, h)
    }

    /// λᵀB⁻¹λ.
    pub fn inv_quad_form(&self, lam: &[f64]) -> f64 {
        quad(&self.b_inv, lam)
    }
}

fn quad(m: &DMatrix<f64>, h: &[f64]) -> f64 {
    let d = h.len();
    let mut s = 0.0;
    for j in 0..d {
        let mut col = 0.0;
        for i in 0..d {
            col += m[(i, j)] * h[i];
        }
        s += col * h[j];
    }
    s.max(0.0)
}

impl TryFrom<Vec<Vec<f64>>> for AnisotropyMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<AnisotropyMatrix> for Vec<Vec<f64>> {
    fn from(a: AnisotropyMatrix) -> Self {
        let n = a.dim();
        (0..n).map(|i| (0..n).map(|j| a.b[(i, j)]).collect()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_and_inverse() {
        let a = AnisotropyMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!((a.lambda_min() - 1.0).abs() < 1e-12);
        assert!((a.lambda_max() - 3.0).abs() < 1e-12);
        assert!((a.ln_det() - 3f64.ln()).abs() < 1e-12);
        // B⁻¹ = [[2,−1],[−1,2]]/3.
        assert!((a.inv_quad_form(&[1.0, 0.0]) - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.inv_quad_form(&[1.0, 1.0]) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        assert!(AnisotropyMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(matches!(
            AnisotropyMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]),
            Err(Error::Condition(_))
        ));
    }

    #[test]
    fn rescaling_tracks_spectrum() {
        let a = AnisotropyMatrix::diagonal(&[4.0, 1.0]).unwrap();
        let s = a.with_lambda_max(10.0).unwrap();
        assert!((s.lambda_max() - 10.0).abs() < 1e-12);
        assert!((s.lambda_min() - 2.5).abs() < 1e-12);
        assert!((s.eigen_ratio() - 0.25).abs() < 1e-15);
        assert!((s.quad_form(&[1.0, 1.0]) - 12.5).abs() < 1e-12);
    }

    #[test]
    fn serde_round_trip() {
        let a = AnisotropyMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let rows: Vec<Vec<f64>> = a.clone().into();
        assert_eq!(AnisotropyMatrix::try_from(rows).unwrap(), a);
    }
}
