use nalgebra::{DMatrix, DVector};

use super::{check_dim, LogisticDataset, TargetDensity};

/// Posterior of the logistic classifier under an isotropic Gaussian prior:
/// `φ(θ) = ‖θ‖²/(2σ²) + Σᵢ log(1 + exp(-yᵢ θᵀxᵢ))`.
#[derive(Debug, Clone)]
pub struct LogisticTarget {
    data: LogisticDataset,
    prior_precision: f64,
}

pub fn logistic_target(data: LogisticDataset) -> LogisticTarget {
    let prior_precision = 1.0 / (data.prior_sd * data.prior_sd);
    LogisticTarget { data, prior_precision }
}

/// `log(1 + exp(-a))` without overflow.
#[inline]
pub(crate) fn softplus_neg(a: f64) -> f64 {
    (-a).max(0.0) + (-a.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl LogisticTarget {
    pub fn data(&self) -> &LogisticDataset {
        &self.data
    }

    /// Signed margins `yᵢ θᵀxᵢ`.
    fn margins(&self, theta: &[f64]) -> DVector<f64> {
        check_dim(self.data.p(), theta);
        let t = DVector::from_column_slice(theta);
        let mut m = &self.data.x * t;
        for (mi, yi) in m.iter_mut().zip(&self.data.y) {
            *mi *= yi;
        }
        m
    }

    fn projections(&self, v: &[f64]) -> DVector<f64> {
        &self.data.x * DVector::from_column_slice(v)
    }
}

impl TargetDensity for LogisticTarget {
    fn dim(&self) -> usize {
        self.data.p()
    }

    fn phi(&self, theta: &[f64]) -> f64 {
        let m = self.margins(theta);
        let prior = 0.5 * self.prior_precision * theta.iter().map(|t| t * t).sum::<f64>();
        prior + m.iter().map(|&a| softplus_neg(a)).sum::<f64>()
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        self.phi_grad(theta).1
    }

    fn phi_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let m = self.margins(theta);
        let mut phi = 0.5 * self.prior_precision * theta.iter().map(|t| t * t).sum::<f64>();
        // d/dθ log(1+exp(-yθᵀx)) = (σ(yθᵀx) - 1) y x
        let mut w = DVector::zeros(m.len());
        for i in 0..m.len() {
            phi += softplus_neg(m[i]);
            w[i] = (sigmoid(m[i]) - 1.0) * self.data.y[i];
        }
        let g = self.data.x.tr_mul(&w);
        let grad = g.iter().zip(theta).map(|(gi, t)| gi + self.prior_precision * t).collect();
        (phi, grad)
    }

    fn hess(&self, theta: &[f64]) -> DMatrix<f64> {
        let m = self.margins(theta);
        let p = self.data.p();
        let mut weighted = self.data.x.clone();
        for i in 0..m.len() {
            let s = sigmoid(m[i]);
            let w = s * (1.0 - s);
            for j in 0..p {
                weighted[(i, j)] *= w;
            }
        }
        let mut h = self.data.x.tr_mul(&weighted);
        for j in 0..p {
            h[(j, j)] += self.prior_precision;
        }
        h
    }

    fn third_dir(&self, theta: &[f64], v1: &[f64], v2: &[f64], v3: &[f64]) -> Option<f64> {
        let m = self.margins(theta);
        let (a, b, c) = (self.projections(v1), self.projections(v2), self.projections(v3));
        let mut s = 0.0;
        for i in 0..m.len() {
            let sg = sigmoid(m[i]);
            let y = self.data.y[i];
            s += sg * (1.0 - sg) * (1.0 - 2.0 * sg) * y * y * y * a[i] * b[i] * c[i];
        }
        Some(s)
    }

    fn fourth_dir(&self, theta: &[f64], v1: &[f64], v2: &[f64], v3: &[f64], v4: &[f64]) -> Option<f64> {
        let m = self.margins(theta);
        let (a, b, c, d) = (
            self.projections(v1),
            self.projections(v2),
            self.projections(v3),
            self.projections(v4),
        );
        let mut s = 0.0;
        for i in 0..m.len() {
            let sg = sigmoid(m[i]);
            s += sg * (1.0 - sg) * (1.0 - 6.0 * sg + 6.0 * sg * sg) * a[i] * b[i] * c[i] * d[i];
        }
        Some(s)
    }

    fn analytic_higher_derivs(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "logistic"
    }
}
