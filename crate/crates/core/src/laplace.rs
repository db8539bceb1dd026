//! MAP search, the Laplace approximation and the standardized target.
//!
//! With `μ = argmin φ_f`, `Σ⁻¹ = Hφ_f(μ)` and `L Lᵀ = Σ` (`L` lower
//! triangular), the standardized coordinates are `θ = μ + L θ̃`. In those
//! coordinates the Laplace approximation is `N(0, I)` and every estimator in
//! the crate works with
//!
//! `δ(θ̃) = φ̃_f(θ̃) - φ̃_f(0) - ½‖θ̃‖²`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{dot, norm};
use crate::targets::{self, TargetDensity};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Outcome of [`find_map`].
#[derive(Debug, Clone)]
pub struct MapFit {
    pub mu: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Convergence threshold actually applied: `tol · (1 + ‖∇φ(init)‖)`.
    pub threshold: f64,
    /// `φ` at the initial point and after every accepted step.
    pub phi_trace: Vec<f64>,
}

/// Damped Newton with Armijo backtracking (factor ½, `c = 1e-4`).
pub fn find_map(target: &dyn TargetDensity, init: &[f64], tol: f64, max_iter: usize) -> Result<MapFit> {
    let p = target.dim();
    if init.len() != p {
        return Err(Error::DimensionMismatch(format!("init has length {} for a {p}-dimensional target", init.len())));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut x = init.to_vec();
    let (mut phi, mut g) = target.phi_grad(&x);
    if !phi.is_finite() {
        return Err(Error::NonFinite(format!("φ at the initial point {x:?}")));
    }
    let threshold = tol * (1.0 + norm(&g));
    let mut trace = vec![phi];

    for iter in 0..max_iter {
        let gn = norm(&g);
        if gn <= threshold {
            let (x, gn) = polish(target, x, phi, gn);
            return Ok(MapFit { mu: x, grad_norm: gn, iterations: iter, threshold, phi_trace: trace });
        }
        let h = target.hess(&x);
        let chol = h.cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite(format!("Hessian at iterate {iter} (θ = {x:?}) is not positive definite"))
        })?;
        let step = chol.solve(&DVector::from_column_slice(&g));
        let dir: Vec<f64> = step.iter().map(|s| -s).collect();
        let slope = dot(&g, &dir);

        // Once the predicted decrease is below the rounding level of φ the
        // Armijo test is noise; switch to accepting full steps that shrink ∇φ.
        if -slope <= 64.0 * f64::EPSILON * (1.0 + phi.abs()) {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + d).collect();
            let (phi_c, g_c) = target.phi_grad(&cand);
            if norm(&g_c) < gn && phi_c.is_finite() {
                x = cand;
                phi = phi_c;
                g = g_c;
                trace.push(phi);
                continue;
            }
            return Err(Error::NotConverged { iterations: iter, grad_norm: gn });
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let (phi_c, g_c) = target.phi_grad(&cand);
            if phi_c.is_finite() && phi_c <= phi + ARMIJO_C * alpha * slope {
                accepted = Some((cand, phi_c, g_c));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, phi_c, g_c)) => {
                x = cand;
                phi = phi_c;
                g = g_c;
                trace.push(phi);
            }
            // The line search can only stall once φ is flat to rounding.
            None => {
                let gn = norm(&g);
                return Err(Error::NotConverged { iterations: iter, grad_norm: gn });
            }
        }
    }
    let gn = norm(&g);
    if gn <= threshold {
        return Ok(MapFit { mu: x, grad_norm: gn, iterations: max_iter, threshold, phi_trace: trace });
    }
    Err(Error::NotConverged { iterations: max_iter, grad_norm: gn })
}

/// One extra full Newton step, kept only if it lowers the gradient norm
/// without raising φ. Near the mode this squares the residual for free.
fn polish(target: &dyn TargetDensity, x: Vec<f64>, phi: f64, gn: f64) -> (Vec<f64>, f64) {
    let Some(chol) = target.hess(&x).cholesky() else {
        return (x, gn);
    };
    let g = target.grad(&x);
    let step = chol.solve(&DVector::from_column_slice(&g));
    let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
    let (phi_c, g_c) = target.phi_grad(&cand);
    let gn_c = norm(&g_c);
    if phi_c <= phi && gn_c < gn {
        (cand, gn_c)
    } else {
        (x, gn)
    }
}

/// Gaussian approximation at the mode.
#[derive(Debug, Clone)]
pub struct LaplaceApprox {
    pub mu: Vec<f64>,
    /// `Hφ_f(μ) = Σ⁻¹`.
    pub precision: DMatrix<f64>,
    /// Lower-triangular `L` with `L Lᵀ = Σ`.
    pub factor: DMatrix<f64>,
    pub log_det_sigma: f64,
    /// `(p/2) log 2π + ½ log det Σ`.
    pub log_z_g: f64,
    pub phi_at_mode: f64,
    pub grad_norm: f64,
    pub tol: f64,
    /// Diagonal jitter added to the Hessian when its factorization failed.
    pub jitter: Option<f64>,
}

impl LaplaceApprox {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `μ + L θ̃`.
    pub fn to_original(&self, theta_tilde: &[f64]) -> Vec<f64> {
        let t = &self.factor * DVector::from_column_slice(theta_tilde);
        t.iter().zip(&self.mu).map(|(a, m)| a + m).collect()
    }

    /// `L⁻¹ (θ - μ)`.
    pub fn to_standard(&self, theta: &[f64]) -> Vec<f64> {
        let d = DVector::from_iterator(theta.len(), theta.iter().zip(&self.mu).map(|(a, m)| a - m));
        self.factor
            .solve_lower_triangular(&d)
            .expect("factor has a positive diagonal")
            .iter()
            .copied()
            .collect()
    }

    /// `‖θ̃‖²` computed from `(θ-μ)ᵀ H (θ-μ)` without a triangular solve.
    pub fn standard_sq_norm(&self, theta: &[f64]) -> f64 {
        let d = DVector::from_iterator(theta.len(), theta.iter().zip(&self.mu).map(|(a, m)| a - m));
        d.dot(&(&self.precision * &d))
    }

    /// Largest entry of `|H Σ - I|`.
    pub fn inverse_residual(&self) -> f64 {
        let sigma = &self.factor * self.factor.transpose();
        let prod = &self.precision * sigma;
        (prod - DMatrix::<f64>::identity(self.dim(), self.dim())).abs().max()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(LaplaceJson::from(self)).expect("plain numbers serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let j: LaplaceJson = serde_json::from_value(value.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        j.try_into()
    }
}

/// Matrix in explicit row-major layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for RowMajor {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        RowMajor { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl RowMajor {
    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Parse(format!(
                "{}x{} matrix with {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LaplaceJson {
    dim: usize,
    mu: Vec<f64>,
    precision: RowMajor,
    factor: RowMajor,
    log_det_sigma: f64,
    log_z_g: f64,
    phi_at_mode: f64,
    grad_norm: f64,
    tol: f64,
    jitter: Option<f64>,
}

impl From<&LaplaceApprox> for LaplaceJson {
    fn from(l: &LaplaceApprox) -> Self {
        LaplaceJson {
            dim: l.dim(),
            mu: l.mu.clone(),
            precision: (&l.precision).into(),
            factor: (&l.factor).into(),
            log_det_sigma: l.log_det_sigma,
            log_z_g: l.log_z_g,
            phi_at_mode: l.phi_at_mode,
            grad_norm: l.grad_norm,
            tol: l.tol,
            jitter: l.jitter,
        }
    }
}

impl TryFrom<LaplaceJson> for LaplaceApprox {
    type Error = Error;

    fn try_from(j: LaplaceJson) -> Result<Self> {
        let precision = j.precision.to_matrix()?;
        let factor = j.factor.to_matrix()?;
        if j.mu.len() != j.dim || precision.nrows() != j.dim || factor.nrows() != j.dim {
            return Err(Error::DimensionMismatch("inconsistent sizes in Laplace document".into()));
        }
        Ok(LaplaceApprox {
            mu: j.mu,
            precision,
            factor,
            log_det_sigma: j.log_det_sigma,
            log_z_g: j.log_z_g,
            phi_at_mode: j.phi_at_mode,
            grad_norm: j.grad_norm,
            tol: j.tol,
            jitter: j.jitter,
        })
    }
}

/// Reverses row and column order.
fn flip(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_fn(r, c, |i, j| m[(r - 1 - i, c - 1 - j)])
}

/// Lower-triangular `L` with `L Lᵀ = H⁻¹`, plus `log det H`.
///
/// Factorizes the order-reversed `J H J = C Cᵀ`; then `L = J C⁻ᵀ J` is lower
/// triangular and squares to `H⁻¹`.
fn inverse_cholesky(h: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = flip(h).cholesky()?;
    let c = chol.l();
    let log_det_h = 2.0 * c.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let p = h.nrows();
    let c_inv = c.solve_lower_triangular(&DMatrix::identity(p, p))?;
    Some((flip(&c_inv.transpose()), log_det_h))
}

pub fn build_laplace(target: &dyn TargetDensity, mu: &[f64]) -> Result<LaplaceApprox> {
    build_laplace_with_tol(target, mu, DEFAULT_TOL)
}

pub fn build_laplace_with_tol(target: &dyn TargetDensity, mu: &[f64], tol: f64) -> Result<LaplaceApprox> {
    let p = target.dim();
    if mu.len() != p {
        return Err(Error::DimensionMismatch(format!("mode has length {} for a {p}-dimensional target", mu.len())));
    }
    let (phi_at_mode, g) = target.phi_grad(mu);
    let h = target.hess(mu);
    let (h, factored, jitter) = match inverse_cholesky(&h) {
        Some(f) => (h, f, None),
        None => {
            let eps = 1e-10 * h.trace().abs() / p as f64;
            let hj = &h + DMatrix::<f64>::identity(p, p) * eps;
            let f = inverse_cholesky(&hj).ok_or_else(|| {
                Error::NotPositiveDefinite(
                    "Hessian at the mode is not positive definite: the target is not strictly log-concave there".into(),
                )
            })?;
            (hj, f, Some(eps))
        }
    };
    let (factor, log_det_h) = factored;
    let log_det_sigma = -log_det_h;
    let log_z_g = 0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det_sigma;
    Ok(LaplaceApprox {
        mu: mu.to_vec(),
        precision: h,
        factor,
        log_det_sigma,
        log_z_g,
        phi_at_mode,
        grad_norm: norm(&g),
        tol,
        jitter,
    })
}

/// `find_map` followed by `build_laplace`.
pub fn fit(target: &dyn TargetDensity, init: &[f64]) -> Result<LaplaceApprox> {
    let m = find_map(target, init, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    build_laplace_with_tol(target, &m.mu, m.threshold)
}

/// The target seen from the standardized coordinates of its Laplace
/// approximation.
#[derive(Clone)]
pub struct StandardizedTarget {
    base: Arc<dyn TargetDensity>,
    laplace: LaplaceApprox,
}

impl std::fmt::Debug for StandardizedTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StandardizedTarget")
            .field("base", &self.base.name())
            .field("laplace", &self.laplace)
            .finish()
    }
}

pub fn standardize(target: Arc<dyn TargetDensity>, laplace: LaplaceApprox) -> StandardizedTarget {
    assert_eq!(target.dim(), laplace.dim(), "Laplace approximation does not match the target dimension");
    StandardizedTarget { base: target, laplace }
}

impl StandardizedTarget {
    pub fn dim(&self) -> usize {
        self.laplace.dim()
    }

    pub fn base(&self) -> &dyn TargetDensity {
        self.base.as_ref()
    }

    pub fn base_arc(&self) -> Arc<dyn TargetDensity> {
        Arc::clone(&self.base)
    }

    pub fn laplace(&self) -> &LaplaceApprox {
        &self.laplace
    }

    /// `φ_f(μ + L θ̃)`.
    pub fn phi_tilde(&self, theta_tilde: &[f64]) -> f64 {
        self.base.phi(&self.laplace.to_original(theta_tilde))
    }

    /// `Lᵀ ∇φ_f(μ + L θ̃)`.
    pub fn grad_tilde(&self, theta_tilde: &[f64]) -> Vec<f64> {
        self.phi_grad_tilde(theta_tilde).1
    }

    pub fn phi_grad_tilde(&self, theta_tilde: &[f64]) -> (f64, Vec<f64>) {
        let (phi, g) = self.base.phi_grad(&self.laplace.to_original(theta_tilde));
        let gt = self.laplace.factor.tr_mul(&DVector::from_vec(g));
        (phi, gt.iter().copied().collect())
    }

    /// `Lᵀ Hφ_f(μ + L θ̃) L`.
    pub fn hess_tilde(&self, theta_tilde: &[f64]) -> DMatrix<f64> {
        let h = self.base.hess(&self.laplace.to_original(theta_tilde));
        let l = &self.laplace.factor;
        l.transpose() * h * l
    }

    /// `δ(θ̃) = φ̃_f(θ̃) - φ̃_f(0) - ½‖θ̃‖²`; zero at the origin by construction.
    pub fn delta(&self, theta_tilde: &[f64]) -> f64 {
        if theta_tilde.iter().all(|&t| t == 0.0) {
            return 0.0;
        }
        self.phi_tilde(theta_tilde) - self.laplace.phi_at_mode - 0.5 * dot(theta_tilde, theta_tilde)
    }

    fn map_dir(&self, v: &[f64]) -> Vec<f64> {
        (&self.laplace.factor * DVector::from_column_slice(v)).iter().copied().collect()
    }

    /// Standardized third directional derivative at `θ̃`.
    pub fn third_dir(&self, theta_tilde: &[f64], v1: &[f64], v2: &[f64], v3: &[f64]) -> f64 {
        let x = self.laplace.to_original(theta_tilde);
        targets::third_dir(self.base.as_ref(), &x, &self.map_dir(v1), &self.map_dir(v2), &self.map_dir(v3))
    }

    /// Standardized fourth directional derivative at `θ̃`.
    pub fn fourth_dir(&self, theta_tilde: &[f64], v1: &[f64], v2: &[f64], v3: &[f64], v4: &[f64]) -> f64 {
        let x = self.laplace.to_original(theta_tilde);
        targets::fourth_dir(
            self.base.as_ref(),
            &x,
            &self.map_dir(v1),
            &self.map_dir(v2),
            &self.map_dir(v3),
            &self.map_dir(v4),
        )
    }
}

/// Fits the Laplace approximation of `target` from `init` and standardizes.
pub fn fit_standardized(target: Arc<dyn TargetDensity>, init: &[f64]) -> Result<StandardizedTarget> {
    let lap = fit(target.as_ref(), init)?;
    Ok(standardize(target, lap))
}
