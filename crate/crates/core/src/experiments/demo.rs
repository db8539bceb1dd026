//! The Gaussian mixture where KL-variance diagnostics fail.

use std::sync::Arc;

use serde::Serialize;

use crate::diagnostics::{estimate_klvar, KlEstimate, DEFAULT_SAMPLES};
use crate::geometry::RngStream;
use crate::laplace::fit_standardized;
use crate::reference::kl_quadrature_1d;
use crate::targets::mixture_target_1d;
use crate::{Error, Result};

pub const LOG_CONCAVITY_WARNING: &str = "warning: this target is not log-concave. KL-variance, LSI and \
varELBO estimates are only meaningful for log-concave targets; here the Laplace approximation fits the \
narrow component and the sampling diagnostics never see the wide one.";

#[derive(Debug, Clone, Serialize)]
pub struct MixtureReport {
    pub sigma_wide: f64,
    pub mode: f64,
    pub laplace_sd: f64,
    pub klvar: KlEstimate,
    pub kl_quadrature: f64,
    /// `kl_quadrature / klvar`.
    pub ratio: f64,
    pub warning: String,
}

impl std::fmt::Display for MixtureReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "mixture ½N(0,1) + ½N(0,{}²)", self.sigma_wide)?;
        writeln!(f, "  Laplace approximation   N({:.6}, {:.6}²)", self.mode, self.laplace_sd)?;
        writeln!(f, "  ½ KL variance (MC)      {:.6e} ± {:.2e}", self.klvar.value, self.klvar.std_error)?;
        writeln!(f, "  KL(g, f) by quadrature  {:.6e}", self.kl_quadrature)?;
        writeln!(f, "  ratio KL / ½ KLvar      {:.4e}", self.ratio)?;
        write!(f, "{}", self.warning)
    }
}

/// [`demo_mixture_with`] using 50 000 draws and seed 0.
pub fn demo_mixture(sigma_wide: f64) -> Result<MixtureReport> {
    demo_mixture_with(sigma_wide, DEFAULT_SAMPLES, &RngStream::new(0, 0))
}

/// Fits the Laplace approximation at the mode of the mixture and compares
/// the KL-variance estimate with the quadrature KL. `sigma_wide = 1` is the
/// Gaussian sanity case.
pub fn demo_mixture_with(sigma_wide: f64, samples: usize, stream: &RngStream) -> Result<MixtureReport> {
    if !(sigma_wide >= 1.0) || !sigma_wide.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma_wide must be a finite value >= 1, got {sigma_wide}")));
    }
    let st = fit_standardized(Arc::new(mixture_target_1d(sigma_wide)), &[0.0])?;
    let klvar = estimate_klvar(&st, samples, stream)?;
    let kl_quadrature = kl_quadrature_1d(&st)?;
    let laplace = st.laplace();
    Ok(MixtureReport {
        sigma_wide,
        mode: laplace.mu[0],
        laplace_sd: laplace.factor[(0, 0)],
        ratio: kl_quadrature / klvar.value,
        klvar,
        kl_quadrature,
        warning: LOG_CONCAVITY_WARNING.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_case_is_null() {
        let r = demo_mixture(1.0).unwrap();
        assert!(r.kl_quadrature.abs() < 1e-10);
        assert!(r.klvar.value.abs() < 1e-12);
        assert!(r.to_string().contains("not log-concave"));
    }

    #[test]
    fn wide_component_breaks_klvar() {
        let r = demo_mixture(100.0).unwrap();
        assert!(r.kl_quadrature > 10.0 * r.klvar.value, "{r}");
        assert!(r.mode.abs() < 1e-12);
        assert_eq!(r.warning, LOG_CONCAVITY_WARNING);
    }

    #[test]
    fn rejects_small_sigma() {
        assert!(demo_mixture(0.5).is_err());
        assert!(demo_mixture(f64::NAN).is_err());
    }
}
