use nalgebra::DMatrix;

use super::{check_dim, TargetDensity};
use crate::geometry::dot;

/// `φ(θ) = ½‖θ‖² + ε‖θ‖⁴`: log-concave, radially symmetric, mode at 0 with unit
/// Hessian there, so the Laplace approximation is exactly the standard normal
/// and `δ(θ̃) = ε‖θ̃‖⁴`.
#[derive(Debug, Clone)]
pub struct QuarticTarget {
    dim: usize,
    eps: f64,
}

/// The quartic perturbation in any dimension.
pub fn quartic_target(dim: usize, eps: f64) -> QuarticTarget {
    assert!(dim >= 1, "quartic target needs dim >= 1");
    assert!(eps > 0.0, "quartic target needs eps > 0, got {eps}");
    QuarticTarget { dim, eps }
}

/// One-dimensional `φ(θ) = θ²/2 + εθ⁴`.
pub fn quartic_target_1d(eps: f64) -> QuarticTarget {
    quartic_target(1, eps)
}

impl QuarticTarget {
    pub fn eps(&self) -> f64 {
        self.eps
    }
}

impl TargetDensity for QuarticTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn phi(&self, theta: &[f64]) -> f64 {
        check_dim(self.dim, theta);
        let r2 = dot(theta, theta);
        0.5 * r2 + self.eps * r2 * r2
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        check_dim(self.dim, theta);
        let s = 1.0 + 4.0 * self.eps * dot(theta, theta);
        theta.iter().map(|t| s * t).collect()
    }

    fn hess(&self, theta: &[f64]) -> DMatrix<f64> {
        check_dim(self.dim, theta);
        let s = 1.0 + 4.0 * self.eps * dot(theta, theta);
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            let diag = if i == j { s } else { 0.0 };
            diag + 8.0 * self.eps * theta[i] * theta[j]
        })
    }

    fn third_dir(&self, theta: &[f64], v1: &[f64], v2: &[f64], v3: &[f64]) -> Option<f64> {
        Some(
            8.0 * self.eps
                * (dot(theta, v1) * dot(v2, v3) + dot(theta, v2) * dot(v1, v3) + dot(theta, v3) * dot(v1, v2)),
        )
    }

    fn fourth_dir(&self, _theta: &[f64], v1: &[f64], v2: &[f64], v3: &[f64], v4: &[f64]) -> Option<f64> {
        Some(8.0 * self.eps * (dot(v1, v4) * dot(v2, v3) + dot(v2, v4) * dot(v1, v3) + dot(v3, v4) * dot(v1, v2)))
    }

    fn analytic_higher_derivs(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "quartic"
    }
}
