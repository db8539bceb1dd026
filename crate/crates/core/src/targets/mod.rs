//! Target densities `f(θ) ∝ exp(-φ_f(θ))` and the concrete models.
//!
//! Higher derivatives are exposed as directional derivatives rather than full
//! tensors; [`crate::taylor`] assembles tensors when they are needed.

mod data;
mod gaussian;
mod logistic;
mod mixture;
mod quartic;

use nalgebra::DMatrix;

pub use data::{generate_logistic_data, LogisticDataset};
pub use gaussian::{gaussian_target, GaussianTarget};
pub use logistic::{logistic_target, LogisticTarget};
pub use mixture::{mixture_target_1d, MixtureTarget};
pub use quartic::{quartic_target, quartic_target_1d, QuarticTarget};

/// An unnormalized negative log-density with derivative access.
///
/// Implementations are pure functions of their inputs and are shared across
/// worker threads.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn phi(&self, theta: &[f64]) -> f64;

    fn grad(&self, theta: &[f64]) -> Vec<f64>;

    fn hess(&self, theta: &[f64]) -> DMatrix<f64>;

    /// `φ` and its gradient in one pass; models override this when the two
    /// share work.
    fn phi_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        (self.phi(theta), self.grad(theta))
    }

    /// `φ^{(3)}(θ)[v1, v2, v3]`, if known in closed form.
    fn third_dir(&self, _theta: &[f64], _v1: &[f64], _v2: &[f64], _v3: &[f64]) -> Option<f64> {
        None
    }

    /// `φ^{(4)}(θ)[v1, v2, v3, v4]`, if known in closed form.
    fn fourth_dir(
        &self,
        _theta: &[f64],
        _v1: &[f64],
        _v2: &[f64],
        _v3: &[f64],
        _v4: &[f64],
    ) -> Option<f64> {
        None
    }

    fn analytic_higher_derivs(&self) -> bool {
        false
    }

    /// Whether the model is log-concave everywhere (only then do the bounds
    /// and the Laplace machinery apply globally).
    fn log_concave(&self) -> bool {
        true
    }

    fn name(&self) -> &str;
}

/// Step for central differences of first-order quantities: `eps^{1/3}(1+|x|)`.
pub(crate) fn fd_step(scale: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + scale.abs())
}

fn axpy(theta: &[f64], t: f64, v: &[f64]) -> Vec<f64> {
    theta.iter().zip(v).map(|(a, b)| a + t * b).collect()
}

fn quad_form(m: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * b[j];
        }
        s += a[i] * row;
    }
    s
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Third directional derivative from central differences of the Hessian along
/// `v1`.
pub fn third_dir_fd<T: TargetDensity + ?Sized>(
    target: &T,
    theta: &[f64],
    v1: &[f64],
    v2: &[f64],
    v3: &[f64],
) -> f64 {
    let h = fd_step(max_abs(theta)) / norm_or_one(v1);
    let hp = target.hess(&axpy(theta, h, v1));
    let hm = target.hess(&axpy(theta, -h, v1));
    (quad_form(&hp, v2, v3) - quad_form(&hm, v2, v3)) / (2.0 * h)
}

/// Fourth directional derivative from a mixed second difference of the
/// Hessian along `v1` and `v2`. Uses `eps^{1/4}` scaling, the balance point
/// for a second difference.
pub fn fourth_dir_fd<T: TargetDensity + ?Sized>(
    target: &T,
    theta: &[f64],
    v1: &[f64],
    v2: &[f64],
    v3: &[f64],
    v4: &[f64],
) -> f64 {
    let base = f64::EPSILON.powf(0.25) * (1.0 + max_abs(theta));
    let h1 = base / norm_or_one(v1);
    let h2 = base / norm_or_one(v2);
    let eval = |s1: f64, s2: f64| {
        let point: Vec<f64> = theta
            .iter()
            .zip(v1.iter().zip(v2))
            .map(|(t, (a, b))| t + s1 * h1 * a + s2 * h2 * b)
            .collect();
        quad_form(&target.hess(&point), v3, v4)
    };
    (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h1 * h2)
}

fn norm_or_one(v: &[f64]) -> f64 {
    let n = crate::geometry::norm(v);
    if n > 0.0 {
        n
    } else {
        1.0
    }
}

/// Closed-form third derivative when available, finite differences otherwise.
pub fn third_dir<T: TargetDensity + ?Sized>(target: &T, theta: &[f64], v1: &[f64], v2: &[f64], v3: &[f64]) -> f64 {
    target
        .third_dir(theta, v1, v2, v3)
        .unwrap_or_else(|| third_dir_fd(target, theta, v1, v2, v3))
}

/// Closed-form fourth derivative when available, finite differences otherwise.
pub fn fourth_dir<T: TargetDensity + ?Sized>(
    target: &T,
    theta: &[f64],
    v1: &[f64],
    v2: &[f64],
    v3: &[f64],
    v4: &[f64],
) -> f64 {
    target
        .fourth_dir(theta, v1, v2, v3, v4)
        .unwrap_or_else(|| fourth_dir_fd(target, theta, v1, v2, v3, v4))
}

/// Central-difference gradient of `φ`.
pub fn grad_fd<T: TargetDensity + ?Sized>(target: &T, theta: &[f64]) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = fd_step(theta[i]);
            x[i] = theta[i] + h;
            let fp = target.phi(&x);
            x[i] = theta[i] - h;
            let fm = target.phi(&x);
            x[i] = theta[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian from the analytic gradient.
pub fn hess_fd<T: TargetDensity + ?Sized>(target: &T, theta: &[f64]) -> DMatrix<f64> {
    let p = theta.len();
    let mut out = DMatrix::zeros(p, p);
    let mut x = theta.to_vec();
    for j in 0..p {
        let h = fd_step(theta[j]);
        x[j] = theta[j] + h;
        let gp = target.grad(&x);
        x[j] = theta[j] - h;
        let gm = target.grad(&x);
        x[j] = theta[j];
        for i in 0..p {
            out[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    out
}

pub(crate) fn check_dim(expected: usize, theta: &[f64]) {
    assert_eq!(
        theta.len(),
        expected,
        "parameter vector has length {} but the target has dimension {}",
        theta.len(),
        expected
    );
}
