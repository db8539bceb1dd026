//! Sampling-based approximations of `KL(g_LAP, f)`: half the KL-variance,
//! the LSI radial term, the varELBO, and their sums.
//!
//! All of them work in the standardized coordinates where the Laplace
//! approximation is `N(0, I)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{dot, norm, par_draws, sample_chi, sample_sphere, sample_std_normal, RngStream};
use crate::laplace::StandardizedTarget;
use crate::stats::{self, DEFAULT_BATCHES};
use crate::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 50_000;
pub const DEFAULT_VAR_ELBO_DIRECTIONS: usize = 2_000;
pub const DEFAULT_VAR_ELBO_RADII: usize = 100;
pub const MIN_SAMPLES: usize = 100;

/// Which quantity a [`KlEstimate`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Klvar,
    Lsi,
    VarElbo,
    KlvarPlusLsi,
    VarelboPlusLsi,
    RadialKlBound,
    KlDirect,
    KlViaChain,
    KlQuadrature,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Klvar => "klvar",
            Estimator::Lsi => "lsi",
            Estimator::VarElbo => "var_elbo",
            Estimator::KlvarPlusLsi => "klvar_plus_lsi",
            Estimator::VarelboPlusLsi => "varelbo_plus_lsi",
            Estimator::RadialKlBound => "radial_kl_bound",
            Estimator::KlDirect => "kl_direct",
            Estimator::KlViaChain => "kl_via_chain",
            Estimator::KlQuadrature => "kl_quadrature",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A Monte Carlo estimate in nats with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl KlEstimate {
    pub fn new(value: f64, std_error: f64, n_samples: usize, estimator: Estimator) -> Self {
        Self { value, std_error, n_samples, estimator, warnings: Vec::new() }
    }

    /// Sum of two independent estimates, standard errors in quadrature.
    pub fn combine(a: &KlEstimate, b: &KlEstimate, estimator: Estimator) -> KlEstimate {
        let mut warnings = a.warnings.clone();
        warnings.extend(b.warnings.iter().cloned());
        KlEstimate {
            value: a.value + b.value,
            std_error: a.std_error.hypot(b.std_error),
            n_samples: a.n_samples.max(b.n_samples),
            estimator,
            warnings,
        }
    }
}

fn check_samples(name: &str, s: usize, min: usize) -> Result<()> {
    if s < min {
        return Err(Error::InvalidArgument(format!("{name} needs at least {min} samples, got {s}")));
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} at draw {i} is {}", values[i])));
    }
    Ok(())
}

/// `δ` at `s` standard normal draws.
pub fn delta_draws(st: &StandardizedTarget, s: usize, stream: &RngStream) -> Result<Vec<f64>> {
    let p = st.dim();
    let d = par_draws(s, stream, |rng| st.delta(&sample_std_normal(p, rng)));
    check_finite(&d, "δ")?;
    Ok(d)
}

/// `½ Var_g[δ]` with a batch-means standard error.
pub fn estimate_klvar(st: &StandardizedTarget, s: usize, stream: &RngStream) -> Result<KlEstimate> {
    check_samples("estimate_klvar", s, MIN_SAMPLES)?;
    let d = delta_draws(st, s, stream)?;
    let value = 0.5 * stats::variance(&d);
    let se = 0.5 * stats::batch_means_se(&d, DEFAULT_BATCHES, stats::variance);
    Ok(KlEstimate::new(value, se, s, Estimator::Klvar))
}

/// `r^{4/3} (eᵀ∇φ̃(re) - r)²` at `s` standard normal draws.
pub fn lsi_integrand_draws(st: &StandardizedTarget, s: usize, stream: &RngStream) -> Result<Vec<f64>> {
    let p = st.dim();
    let v = par_draws(s, stream, |rng| {
        let z = sample_std_normal(p, rng);
        let r = norm(&z);
        if r == 0.0 {
            return 0.0;
        }
        let radial = dot(&z, &st.grad_tilde(&z)) / r - r;
        r.powf(4.0 / 3.0) * radial * radial
    });
    check_finite(&v, "radial gradient term")?;
    Ok(v)
}

/// `(1/(2p^{2/3})) E[r^{4/3}(eᵀ∇φ̃(re) - r)²]`.
pub fn estimate_lsi(st: &StandardizedTarget, s: usize, stream: &RngStream) -> Result<KlEstimate> {
    check_samples("estimate_lsi", s, MIN_SAMPLES)?;
    let v = lsi_integrand_draws(st, s, stream)?;
    let scale = 1.0 / (2.0 * (st.dim() as f64).powf(2.0 / 3.0));
    let value = scale * stats::mean(&v);
    let se = scale * stats::std_dev(&v) / (s as f64).sqrt();
    Ok(KlEstimate::new(value, se, s, Estimator::Lsi))
}

/// Finite-`s_r` correction applied to the across-direction variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarElboCorrection {
    /// Plain variance of the inner means; biased upward.
    None,
    /// Subtract the direction-by-radius interaction mean square over `s_r`.
    /// With shared radii this is the term by which the inner means' variance
    /// overshoots.
    #[default]
    Anova,
}

fn var_elbo_statistic(rows: &[Vec<f64>], correction: VarElboCorrection) -> f64 {
    let se = rows.len();
    let sr = rows[0].len();
    let means: Vec<f64> = rows.iter().map(|r| stats::mean(r)).collect();
    let between = stats::variance(&means);
    match correction {
        VarElboCorrection::None => 0.5 * between,
        VarElboCorrection::Anova => {
            let grand = stats::mean(&means);
            let col: Vec<f64> = (0..sr).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / se as f64).collect();
            let mut ss = 0.0;
            for (r, m) in rows.iter().zip(&means) {
                for k in 0..sr {
                    let e = r[k] - m - col[k] + grand;
                    ss += e * e;
                }
            }
            let ms = ss / ((se - 1) * (sr - 1)) as f64;
            0.5 * (between - ms / sr as f64)
        }
    }
}

/// `½ Var_e[E_r δ(re)]` with `s_e` directions and `s_r` radii shared by all
/// directions.
pub fn estimate_var_elbo(st: &StandardizedTarget, s_e: usize, s_r: usize, stream: &RngStream) -> Result<KlEstimate> {
    estimate_var_elbo_with(st, s_e, s_r, stream, VarElboCorrection::default())
}

pub fn estimate_var_elbo_with(
    st: &StandardizedTarget,
    s_e: usize,
    s_r: usize,
    stream: &RngStream,
    correction: VarElboCorrection,
) -> Result<KlEstimate> {
    if s_r < 2 {
        return Err(Error::InvalidArgument(format!(
            "varELBO needs at least 2 radii per direction for the bias correction, got {s_r}"
        )));
    }
    check_samples("estimate_var_elbo (directions)", s_e, MIN_SAMPLES)?;
    let p = st.dim();
    let dirs = par_draws(s_e, &stream.child(0), |rng| sample_sphere(p, rng));
    let mut rrng = stream.child(1).rng();
    let radii: Vec<f64> = (0..s_r).map(|_| sample_chi(p, &mut rrng)).collect();

    let rows: Vec<Vec<f64>> = dirs
        .par_iter()
        .map(|e| {
            radii
                .iter()
                .map(|&r| st.delta(&e.iter().map(|x| r * x).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    for (j, row) in rows.iter().enumerate() {
        if let Some(k) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("δ at direction {j}, radius {k}")));
        }
    }

    let raw = var_elbo_statistic(&rows, correction);
    let batches = (s_e / 20).clamp(5, DEFAULT_BATCHES);
    let size = s_e / batches;
    let batch_values: Vec<f64> = (0..batches)
        .map(|b| {
            let end = if b + 1 == batches { s_e } else { (b + 1) * size };
            var_elbo_statistic(&rows[b * size..end], correction)
        })
        .collect();
    let se = stats::std_dev(&batch_values) / (batches as f64).sqrt();

    let mut est = KlEstimate::new(raw.max(0.0), se, s_e * s_r, Estimator::VarElbo);
    if raw < 0.0 {
        est.warnings.push(format!("bias-corrected varELBO was {raw:e}; clamped to 0"));
    }
    Ok(est)
}

/// `½ KL_var + LSI`; the LSI part uses the child stream 1.
pub fn klvar_plus_lsi(st: &StandardizedTarget, s: usize, stream: &RngStream) -> Result<KlEstimate> {
    let a = estimate_klvar(st, s, stream)?;
    let b = estimate_lsi(st, s, &stream.child(1))?;
    Ok(KlEstimate::combine(&a, &b, Estimator::KlvarPlusLsi))
}

/// `½ varELBO + LSI`; the LSI part uses the child stream 2.
pub fn varelbo_plus_lsi(
    st: &StandardizedTarget,
    s_e: usize,
    s_r: usize,
    s: usize,
    stream: &RngStream,
) -> Result<KlEstimate> {
    let a = estimate_var_elbo(st, s_e, s_r, stream)?;
    let b = estimate_lsi(st, s, &stream.child(2))?;
    Ok(KlEstimate::combine(&a, &b, Estimator::VarelboPlusLsi))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;

    use super::*;
    use crate::geometry::chi_moment;
    use crate::laplace::fit_standardized;
    use crate::targets::{gaussian_target, generate_logistic_data, logistic_target, quartic_target, TargetDensity};

    fn quartic(p: usize, eps: f64) -> StandardizedTarget {
        fit_standardized(Arc::new(quartic_target(p, eps)), &vec![0.0; p]).unwrap()
    }

    fn logistic(n: usize, p: usize, seed: u64) -> StandardizedTarget {
        let t = logistic_target(generate_logistic_data(n, p, seed).unwrap());
        fit_standardized(Arc::new(t), &vec![0.0; p]).unwrap()
    }

    fn gaussian() -> StandardizedTarget {
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        fit_standardized(Arc::new(gaussian_target(vec![1.0, 2.0], prec).unwrap()), &[0.0, 0.0]).unwrap()
    }

    #[test]
    fn gaussian_is_null() {
        let st = gaussian();
        let s = RngStream::new(1, 0);
        for e in [
            estimate_klvar(&st, 2000, &s).unwrap(),
            estimate_lsi(&st, 2000, &s).unwrap(),
            estimate_var_elbo(&st, 200, 10, &s).unwrap(),
        ] {
            assert!(e.value <= 3.0 * e.std_error + 1e-20, "{e:?}");
        }
    }

    #[test]
    fn quartic_klvar_is_48_eps_squared() {
        let eps = 1e-3;
        let st = quartic(1, eps);
        let e = estimate_klvar(&st, 400_000, &RngStream::new(3, 0)).unwrap();
        assert!((e.value - 48.0 * eps * eps).abs() < 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn quartic_lsi_matches_chi_moment() {
        let eps = 1e-3;
        let st = quartic(1, eps);
        let e = estimate_lsi(&st, 200_000, &RngStream::new(4, 0)).unwrap();
        let exact = 8.0 * eps * eps * chi_moment(1, 22.0 / 3.0).unwrap();
        assert!((e.value - exact).abs() < 3.0 * e.std_error, "{e:?} vs {exact}");
    }

    #[test]
    fn klvar_scales_as_eps_squared() {
        let s = RngStream::new(5, 0);
        let a = estimate_klvar(&quartic(1, 1e-4), 200_000, &s).unwrap();
        let b = estimate_klvar(&quartic(1, 1e-3), 200_000, &s).unwrap();
        // Same stream: the ratio is exact up to rounding.
        assert!((b.value / a.value - 100.0).abs() < 1e-6 * 100.0);
    }

    #[test]
    fn radially_symmetric_var_elbo_is_zero() {
        let st = quartic(3, 0.01);
        let e = estimate_var_elbo(&st, 1000, 50, &RngStream::new(6, 0)).unwrap();
        assert!(e.value <= 3.0 * e.std_error + 1e-20, "{e:?}");
    }

    #[test]
    fn uncorrected_var_elbo_is_larger() {
        let st = logistic(100, 3, 1);
        let s = RngStream::new(7, 0);
        let a = estimate_var_elbo_with(&st, 500, 20, &s, VarElboCorrection::None).unwrap();
        let b = estimate_var_elbo_with(&st, 500, 20, &s, VarElboCorrection::Anova).unwrap();
        assert!(a.value >= b.value);
    }

    #[test]
    fn sums_dominate_their_parts() {
        let st = logistic(50, 3, 2);
        let s = RngStream::new(8, 0);
        let kv = estimate_klvar(&st, 5000, &s).unwrap();
        let sum = klvar_plus_lsi(&st, 5000, &s).unwrap();
        assert!(sum.value >= kv.value);
        assert!(sum.std_error >= kv.std_error);
        let ve = estimate_var_elbo(&st, 200, 10, &s).unwrap();
        let sum = varelbo_plus_lsi(&st, 200, 10, 5000, &s).unwrap();
        assert!(sum.value >= ve.value);
    }

    #[test]
    fn same_stream_same_estimate() {
        let st = logistic(50, 3, 2);
        let s = RngStream::new(9, 1);
        assert_eq!(estimate_klvar(&st, 3000, &s).unwrap(), estimate_klvar(&st, 3000, &s).unwrap());
        assert_ne!(
            estimate_klvar(&st, 3000, &s).unwrap().value,
            estimate_klvar(&st, 3000, &RngStream::new(9, 2)).unwrap().value
        );
    }

    #[test]
    fn argument_checks() {
        let st = gaussian();
        let s = RngStream::new(1, 1);
        assert!(estimate_klvar(&st, 99, &s).is_err());
        assert!(estimate_lsi(&st, 10, &s).is_err());
        assert!(matches!(estimate_var_elbo(&st, 200, 1, &s), Err(Error::InvalidArgument(_))));
        assert!(estimate_var_elbo(&st, 50, 10, &s).is_err());
    }

    struct Shifted(crate::targets::LogisticTarget, f64);

    impl TargetDensity for Shifted {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn phi(&self, t: &[f64]) -> f64 {
            self.0.phi(t) + self.1
        }
        fn grad(&self, t: &[f64]) -> Vec<f64> {
            self.0.grad(t)
        }
        fn hess(&self, t: &[f64]) -> DMatrix<f64> {
            self.0.hess(t)
        }
        fn name(&self) -> &str {
            "shifted"
        }
    }

    #[test]
    fn invariant_to_constant_shift() {
        let base = logistic_target(generate_logistic_data(40, 2, 3).unwrap());
        let a = fit_standardized(Arc::new(base.clone()), &[0.0, 0.0]).unwrap();
        let b = fit_standardized(Arc::new(Shifted(base, 0.375)), &[0.0, 0.0]).unwrap();
        let s = RngStream::new(2, 2);
        let (ea, eb) = (estimate_klvar(&a, 2000, &s).unwrap(), estimate_klvar(&b, 2000, &s).unwrap());
        assert!((ea.value - eb.value).abs() <= 1e-9 * ea.value);
    }

    #[test]
    fn json_field_names() {
        let e = KlEstimate::new(0.5, 0.1, 100, Estimator::VarelboPlusLsi);
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["estimator"], "varelbo_plus_lsi");
        assert!(v.get("warnings").is_none());
    }
}
