//! Numerical check of the cumulant path between `g` and `f`.
//!
//! With `h(θ; λ) ∝ g(θ) e^{-λδ(θ)}`, `K(λ) = KL(g, h(·; λ)) =
//! λ E_g[δ] + log E_g[e^{-λδ}]`. Then `K(0) = K'(0) = 0`, `K''(λ) = Var_h[δ]`
//! and `K'''(λ) = -κ₃(λ)`, so `K(1) = ½ Var_g[δ] - ∫₀¹ (1-λ)²/2 κ₃(λ) dλ`
//! and `|K(1) - ½ Var_g[δ]| <= M³/6` when `|δ| <= M`.

use serde::Serialize;

use super::quadrature::{integrate, integrate_partition, symmetric_geometric_breaks};
use crate::laplace::StandardizedTarget;
use crate::{Error, Result};

/// Half-width of the window on which `|δ| <= M` is verified and the
/// Gaussian expectations are integrated.
const WINDOW: f64 = 12.0;
const GRID_CHECK: usize = 24_001;
const QUAD_TOL: f64 = 1e-13;
const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct CumulantPathReport {
    pub lambdas: Vec<f64>,
    pub k_values: Vec<f64>,
    /// Mean, variance and third central moment of `δ` under `h(·; λ)`.
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub k3: Vec<f64>,
    pub var_g: f64,
    pub k_prime_0: f64,
    pub k_second_0: f64,
    pub k_at_1: f64,
    pub m: f64,
    /// `|K(1) - ½ Var_g δ|`.
    pub deviation: f64,
    /// `M³/6`.
    pub bound: f64,
    /// `bound - deviation`.
    pub slack: f64,
    /// `|K(1) - (½ Var_g δ - ∫₀¹ (1-λ)²/2 κ₃)|`.
    pub identity_residual: f64,
    pub passed: bool,
}

/// Moments of `δ` under `h(·; λ)` plus `K(λ)`, by quadrature.
fn path_point<D: Fn(f64) -> f64>(delta: &D, lambda: f64, mean_g: f64) -> Result<(f64, f64, f64, f64)> {
    let breaks = symmetric_geometric_breaks(WINDOW);
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    let w = |x: f64| (-0.5 * x * x - lambda * delta(x)).exp() / norm;
    let z = integrate_partition(w, &breaks, QUAD_TOL)?.value;
    let m1 = integrate_partition(|x| w(x) * delta(x), &breaks, QUAD_TOL)?.value / z;
    let c2 = integrate_partition(|x| w(x) * (delta(x) - m1).powi(2), &breaks, QUAD_TOL)?.value / z;
    let c3 = integrate_partition(|x| w(x) * (delta(x) - m1).powi(3), &breaks, QUAD_TOL)?.value / z;
    Ok((lambda * mean_g + z.ln(), m1, c2, c3))
}

/// Runs the check for a 1-D `δ` bounded by `m` on `[-12, 12]`.
pub fn prop1_path_check_delta<D: Fn(f64) -> f64>(delta: D, lambda_grid: &[f64], m: f64) -> Result<CumulantPathReport> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("bound M must be positive, got {m}")));
    }
    for i in 0..GRID_CHECK {
        let x = -WINDOW + 2.0 * WINDOW * i as f64 / (GRID_CHECK - 1) as f64;
        let d = delta(x);
        if !(d.abs() <= m) {
            return Err(Error::Precondition(format!(
                "|δ({x})| = {} exceeds M = {m}: δ must be bounded for the cumulant bound",
                d.abs()
            )));
        }
    }
    let (_, mean_g, var_g, _) = path_point(&delta, 0.0, 0.0)?;

    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let mut k_values = Vec::new();
    let (mut k1, mut k2, mut k3) = (Vec::new(), Vec::new(), Vec::new());
    for &l in &lambdas {
        let (k, a, b, c) = path_point(&delta, l, mean_g)?;
        k_values.push(k);
        k1.push(a);
        k2.push(b);
        k3.push(c);
    }

    let k_at = |l: f64| path_point(&delta, l, mean_g).map(|r| r.0);
    let (kp, k0, km) = (k_at(FD_STEP)?, k_at(0.0)?, k_at(-FD_STEP)?);
    let k_prime_0 = (kp - km) / (2.0 * FD_STEP);
    let k_second_0 = (kp - 2.0 * k0 + km) / (FD_STEP * FD_STEP);
    let k_at_1 = k_at(1.0)?;

    let deviation = (k_at_1 - 0.5 * var_g).abs();
    let bound = m.powi(3) / 6.0;
    let remainder = integrate(
        |l| {
            let c3 = path_point(&delta, l, mean_g).map(|r| r.3).unwrap_or(f64::NAN);
            0.5 * (1.0 - l) * (1.0 - l) * c3
        },
        0.0,
        1.0,
        1e-12,
    )?
    .value;
    let identity_residual = (k_at_1 - (0.5 * var_g - remainder)).abs();

    let tol = 1e-8;
    let passed = k0.abs() < tol
        && k_prime_0.abs() < 1e-6 * (1.0 + var_g)
        && (k_second_0 - var_g).abs() < 1e-4 * (1.0 + var_g)
        && deviation <= bound + tol
        && identity_residual < 1e-8;
    Ok(CumulantPathReport {
        lambdas,
        k_values,
        k1,
        k2,
        k3,
        var_g,
        k_prime_0,
        k_second_0,
        k_at_1,
        m,
        deviation,
        bound,
        slack: bound - deviation,
        identity_residual,
        passed,
    })
}

/// [`prop1_path_check_delta`] on the `δ` of a 1-D standardized target.
pub fn prop1_path_check(st: &StandardizedTarget, lambda_grid: &[f64], m: f64) -> Result<CumulantPathReport> {
    if st.dim() != 1 {
        return Err(Error::DimensionMismatch(format!("path check needs p = 1, got {}", st.dim())));
    }
    prop1_path_check_delta(|x| st.delta(&[x]), lambda_grid, m)
}
