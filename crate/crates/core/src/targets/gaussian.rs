use nalgebra::{DMatrix, DVector};

use super::{check_dim, TargetDensity};
use crate::{Error, Result};

/// `φ(θ) = ½(θ-μ)ᵀH(θ-μ)`: the case where the Laplace approximation is exact.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mu: DVector<f64>,
    precision: DMatrix<f64>,
}

pub fn gaussian_target(mu: Vec<f64>, precision: DMatrix<f64>) -> Result<GaussianTarget> {
    let p = mu.len();
    if p == 0 || precision.nrows() != p || precision.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "mean of length {p} with a {}x{} precision",
            precision.nrows(),
            precision.ncols()
        )));
    }
    let asym = (&precision - precision.transpose()).abs().max();
    if asym > 1e-12 * (1.0 + precision.abs().max()) {
        return Err(Error::NotPositiveDefinite("precision is not symmetric".into()));
    }
    if precision.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("Cholesky factorization of the precision failed".into()));
    }
    Ok(GaussianTarget {
        mu: DVector::from_vec(mu),
        precision,
    })
}

impl GaussianTarget {
    fn centered(&self, theta: &[f64]) -> DVector<f64> {
        check_dim(self.mu.len(), theta);
        DVector::from_column_slice(theta) - &self.mu
    }
}

impl TargetDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn phi(&self, theta: &[f64]) -> f64 {
        let d = self.centered(theta);
        0.5 * d.dot(&(&self.precision * &d))
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.centered(theta);
        (&self.precision * d).iter().copied().collect()
    }

    fn hess(&self, theta: &[f64]) -> DMatrix<f64> {
        check_dim(self.mu.len(), theta);
        self.precision.clone()
    }

    fn third_dir(&self, _: &[f64], _: &[f64], _: &[f64], _: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn fourth_dir(&self, _: &[f64], _: &[f64], _: &[f64], _: &[f64], _: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn analytic_higher_derivs(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "gaussian"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::testing::check_derivatives;

    #[test]
    fn quadratic_form_values() {
        let g = gaussian_target(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        assert_eq!(g.phi(&[1.0, 0.0]), 0.5);
        assert_eq!(g.third_dir(&[0.3, 0.1], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]), Some(0.0));
        let g = gaussian_target(vec![0.0, 0.0], DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 8.0]))).unwrap();
        assert_eq!(g.phi(&[1.0, 1.0]), 5.0);
    }

    #[test]
    fn rejects_non_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(gaussian_target(vec![0.0; 2], bad), Err(Error::NotPositiveDefinite(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(gaussian_target(vec![0.0; 2], asym).is_err());
        assert!(gaussian_target(vec![0.0; 3], DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        check_derivatives(&gaussian_target(vec![1.0, -2.0, 0.5], h).unwrap(), 20, 2.0, 3);
    }
}
