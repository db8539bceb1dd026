use nalgebra::DMatrix;

use super::{check_dim, TargetDensity};
use crate::stats::log_add_exp;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `φ(θ) = -log(½ N(θ; 0, 1) + ½ N(θ; 0, σ²))`: a thin and a wide component.
/// Not log-concave; it exists to show where KL-variance diagnostics break.
#[derive(Debug, Clone)]
pub struct MixtureTarget {
    sigma_wide: f64,
}

pub fn mixture_target_1d(sigma_wide: f64) -> MixtureTarget {
    assert!(sigma_wide >= 1.0, "wide component needs sigma >= 1, got {sigma_wide}");
    MixtureTarget { sigma_wide }
}

impl MixtureTarget {
    pub fn sigma_wide(&self) -> f64 {
        self.sigma_wide
    }

    /// Log-weights of both components (up to the shared constant) and the
    /// posterior responsibility of the thin one.
    fn components(&self, t: f64) -> (f64, f64, f64) {
        let s = self.sigma_wide;
        let l1 = -0.5 * t * t;
        let l2 = -s.ln() - 0.5 * t * t / (s * s);
        let w1 = 1.0 / (1.0 + (l2 - l1).exp());
        (l1, l2, w1)
    }
}

impl TargetDensity for MixtureTarget {
    fn dim(&self) -> usize {
        1
    }

    fn phi(&self, theta: &[f64]) -> f64 {
        check_dim(1, theta);
        let (l1, l2, _) = self.components(theta[0]);
        -(log_add_exp(l1, l2) + 0.5f64.ln() - HALF_LN_2PI)
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        check_dim(1, theta);
        let t = theta[0];
        let (_, _, w1) = self.components(t);
        let s2 = self.sigma_wide * self.sigma_wide;
        vec![t * (w1 + (1.0 - w1) / s2)]
    }

    fn hess(&self, theta: &[f64]) -> DMatrix<f64> {
        check_dim(1, theta);
        let t = theta[0];
        let (_, _, w1) = self.components(t);
        let s2 = self.sigma_wide * self.sigma_wide;
        let k = 1.0 - 1.0 / s2;
        let m = w1 + (1.0 - w1) / s2;
        DMatrix::from_element(1, 1, m - w1 * (1.0 - w1) * t * t * k * k)
    }

    fn log_concave(&self) -> bool {
        self.sigma_wide == 1.0
    }

    fn name(&self) -> &str {
        "mixture"
    }
}
