//! Non-sampling bounds: the logistic third-derivative constant `Δ₃`, the
//! certified minimum radial curvature and the radial KL bound built on it,
//! Pinsker, coverage of credible regions, and the evidence bracket.

use serde::Serialize;

use crate::diagnostics::{lsi_integrand_draws, Estimator, KlEstimate, MIN_SAMPLES};
use crate::geometry::RngStream;
use crate::laplace::{LaplaceApprox, StandardizedTarget};
use crate::stats;
use crate::targets::LogisticDataset;
use crate::{Error, Result};

/// `max_a |σ(a)(1-σ(a))(1-2σ(a))|`, attained at `σ = (3 ± √3)/6`.
pub const LOGISTIC_THIRD_MAX: f64 = 0.096_225_044_864_937_63;

/// Upper bound on the largest standardized third derivative of the logistic
/// posterior: `LOGISTIC_THIRD_MAX · Σᵢ ‖Lᵀxᵢ‖³`. The Gaussian prior adds
/// nothing.
pub fn delta3_upper_logistic(data: &LogisticDataset, laplace: &LaplaceApprox) -> f64 {
    let proj = &data.x * &laplace.factor;
    let total: f64 = proj.row_iter().map(|row| row.norm().powi(3)).sum();
    LOGISTIC_THIRD_MAX * total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureBranch {
    GaussianLimit,
    /// Curvature bound evaluated at `c₀ = Δ₃^{-1/3}`.
    C0Branch,
    /// Interior minimum of the `c ≥ c₀` bound, for large `Δ₃`.
    TailBranch,
    FixedPointBranch,
}

/// Certified lower bound on the curvature of the radial log-density in the
/// cube-root variable `c = r^{1/3}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureBound {
    pub p: usize,
    pub delta3: f64,
    pub psi_min_second: f64,
    pub branch: CurvatureBranch,
    pub r_infinity: Option<f64>,
}

const FP_REL_TOL: f64 = 1e-12;
const FP_MAX_ITER: usize = 10_000;

/// Iterates of `r ← √(((3p-1)/3 + 14Δ₃r³)/10)` from `r₀ = √((3p-1)/30)`,
/// stopped at relative change `1e-12` or 10 000 steps.
pub fn fixed_point_iterates(p: usize, delta3: f64) -> Vec<f64> {
    let a = (3 * p) as f64 - 1.0;
    let mut r = (a / 30.0).sqrt();
    let mut out = vec![r];
    for _ in 0..FP_MAX_ITER {
        let next = ((a / 3.0 + 14.0 * delta3 * r.powi(3)) / 10.0).sqrt();
        out.push(next);
        let done = (next - r).abs() <= FP_REL_TOL * next;
        r = next;
        if done || !r.is_finite() {
            break;
        }
    }
    out
}

/// `min_c ψ″_f(c|e)` lower bound for a `p`-dimensional target whose
/// standardized third derivative is bounded by `delta3`.
pub fn psi_min_second(p: usize, delta3: f64) -> Result<CurvatureBound> {
    if p == 0 {
        return Err(Error::InvalidArgument("psi_min_second needs p >= 1".into()));
    }
    if !(delta3 >= 0.0 && delta3.is_finite()) {
        return Err(Error::InvalidArgument(format!("Δ₃ must be finite and >= 0, got {delta3}")));
    }
    let a = (3 * p) as f64 - 1.0;
    if delta3 == 0.0 {
        let value = 45.0 * 0.1f64.powf(2.0 / 3.0) * (a / 3.0).powf(2.0 / 3.0);
        return Ok(CurvatureBound {
            p,
            delta3,
            psi_min_second: value,
            branch: CurvatureBranch::GaussianLimit,
            r_infinity: Some((a / 30.0).sqrt()),
        });
    }

    let c0_value = a * delta3.powf(2.0 / 3.0) + 3.0 * delta3.powf(-4.0 / 3.0);
    let mut best = (c0_value, CurvatureBranch::C0Branch, None);

    if delta3 > (1.5 / a).sqrt() {
        let tail = 4.5 * (2.0 / 3.0 * a).cbrt() / delta3.powf(2.0 / 3.0);
        if tail < best.0 {
            best = (tail, CurvatureBranch::TailBranch, None);
        }
    }

    if delta3 <= (1000.0 / (441.0 * a)).sqrt() {
        let r = *fixed_point_iterates(p, delta3).last().expect("at least r₀");
        let fp = r.powf(4.0 / 3.0) * (15.0 + a / (r * r)) - 12.0 * delta3 * r.powf(7.0 / 3.0);
        if fp < best.0 {
            best = (fp, CurvatureBranch::FixedPointBranch, Some(r));
        }
    }

    Ok(CurvatureBound { p, delta3, psi_min_second: best.0, branch: best.1, r_infinity: best.2 })
}

/// `(1/(2ψ″_min)) E_g[9 r^{4/3}(eᵀ∇φ̃(re) - r)²]`.
///
/// Uses the same draws as [`crate::diagnostics::estimate_lsi`] on the same
/// stream, so the ratio of the two is exactly `9p^{2/3}/ψ″_min`.
pub fn radial_kl_bound(
    st: &StandardizedTarget,
    cb: &CurvatureBound,
    s: usize,
    stream: &RngStream,
) -> Result<KlEstimate> {
    if !(cb.psi_min_second > 0.0) {
        return Err(Error::Precondition(format!(
            "curvature bound {} is not positive; the radial bound is vacuous",
            cb.psi_min_second
        )));
    }
    if cb.p != st.dim() {
        return Err(Error::DimensionMismatch(format!(
            "curvature bound for p={} applied to a {}-dimensional target",
            cb.p,
            st.dim()
        )));
    }
    if s < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!("radial_kl_bound needs at least {MIN_SAMPLES} samples")));
    }
    let v = lsi_integrand_draws(st, s, stream)?;
    let scale = 9.0 / (2.0 * cb.psi_min_second);
    Ok(KlEstimate::new(
        scale * stats::mean(&v),
        scale * stats::std_dev(&v) / (s as f64).sqrt(),
        s,
        Estimator::RadialKlBound,
    ))
}

/// `d(a, b)`, the KL divergence between Bernoulli(a) and Bernoulli(b).
pub fn binary_kl(a: f64, b: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    term(a, b) + term(1.0 - a, 1.0 - b)
}

const COVERAGE_TOL: f64 = 1e-10;

/// Range of `p_f = f(A)` compatible with `g(A) = p_g` and
/// `KL(g, f) <= kl`, from `d(p_g, p_f) <= kl`.
pub fn coverage_bounds(p_g: f64, kl: f64) -> Result<(f64, f64)> {
    if !(p_g > 0.0 && p_g < 1.0) {
        return Err(Error::InvalidArgument(format!("p_g must lie in (0, 1), got {p_g}")));
    }
    if !(kl >= 0.0) {
        return Err(Error::InvalidArgument(format!("KL must be >= 0, got {kl}")));
    }
    if kl == 0.0 {
        return Ok((p_g, p_g));
    }
    // d(p_g, ·) decreases on (0, p_g] and increases on [p_g, 1).
    let excess = |x: f64| binary_kl(p_g, x) - kl;
    let bisect = |mut inside: f64, mut outside: f64| {
        while (outside - inside).abs() > COVERAGE_TOL * 1e-2 {
            let mid = 0.5 * (inside + outside);
            if excess(mid) <= 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    Ok((bisect(p_g, 0.0), bisect(p_g, 1.0)))
}

/// `min(1, √(KL/2))`.
pub fn pinsker_tv_bound(kl: f64) -> Result<f64> {
    if !(kl >= 0.0) {
        return Err(Error::InvalidArgument(format!("KL must be >= 0, got {kl}")));
    }
    Ok((kl / 2.0).sqrt().min(1.0))
}

/// Lower and estimated values of `log ∫ exp(-φ_f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvidenceBracket {
    /// `E_g[log f̄ - log g] = -φ_f(μ) + log Z_g - E_g δ`.
    pub elbo: f64,
    /// `elbo + KL(g, f)`, with the supplied KL.
    pub log_evidence: f64,
}

/// The gap between the log normalizing constant of `f` and the ELBO of the
/// Laplace approximation is exactly `KL(g, f)`.
pub fn evidence_bracket(laplace: &LaplaceApprox, mean_delta: f64, kl: f64) -> EvidenceBracket {
    let elbo = -laplace.phi_at_mode + laplace.log_z_g - mean_delta;
    EvidenceBracket { elbo, log_evidence: elbo + kl }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;
    use proptest::prelude::*;

    use super::*;
    use crate::diagnostics::estimate_lsi;
    use crate::laplace::{build_laplace, fit, fit_standardized};
    use crate::targets::{gaussian_target, generate_logistic_data, logistic_target, quartic_target_1d};

    #[test]
    fn logistic_third_max_is_exact() {
        let g = |s: f64| (s * (1.0 - s) * (1.0 - 2.0 * s)).abs();
        assert!((LOGISTIC_THIRD_MAX - 1.0 / (6.0 * 3f64.sqrt())).abs() < 1e-16);
        assert!((g((3.0 - 3f64.sqrt()) / 6.0) - LOGISTIC_THIRD_MAX).abs() < 1e-16);
        let grid_max = (1..100_000).map(|i| g(i as f64 / 100_000.0)).fold(0.0, f64::max);
        assert!(grid_max <= LOGISTIC_THIRD_MAX && grid_max > LOGISTIC_THIRD_MAX - 1e-9);
    }

    #[test]
    fn delta3_edge_cases() {
        let empty = LogisticDataset::new(DMatrix::zeros(0, 2), vec![], 1.0).unwrap();
        let lap = fit(&logistic_target(empty.clone()), &[0.0, 0.0]).unwrap();
        assert_eq!(delta3_upper_logistic(&empty, &lap), 0.0);

        // Unit prior precision and a tiny datum: L ≈ I, so ‖Lᵀx‖ = 1 after rescaling.
        let one = LogisticDataset::new(DMatrix::from_row_slice(1, 2, &[0.6, 0.8]), vec![1.0], 1.0).unwrap();
        let mut lap = fit(&logistic_target(one.clone()), &[0.0, 0.0]).unwrap();
        lap.factor = DMatrix::identity(2, 2);
        assert!((delta3_upper_logistic(&one, &lap) - LOGISTIC_THIRD_MAX).abs() < 1e-15);
    }

    #[test]
    fn delta3_is_subadditive() {
        let d = generate_logistic_data(60, 3, 4).unwrap();
        let lap = fit(&logistic_target(d.clone()), &[0.0; 3]).unwrap();
        let split = |rows: std::ops::Range<usize>| {
            let x = d.x.rows(rows.start, rows.len()).into_owned();
            LogisticDataset::new(x, d.y[rows].to_vec(), d.prior_sd).unwrap()
        };
        let whole = delta3_upper_logistic(&d, &lap);
        let parts = delta3_upper_logistic(&split(0..25), &lap) + delta3_upper_logistic(&split(25..60), &lap);
        assert!(whole <= parts * (1.0 + 1e-14));
    }

    #[test]
    fn delta3_shrinks_like_inverse_sqrt_n() {
        for seed in 1..=3 {
            let bound = |n| {
                let d = generate_logistic_data(n, 10, seed).unwrap();
                let lap = fit(&logistic_target(d.clone()), &[0.0; 10]).unwrap();
                delta3_upper_logistic(&d, &lap)
            };
            let ratio = bound(250) / bound(1000);
            assert!((1.5..=2.7).contains(&ratio), "seed {seed}: {ratio}");
        }
    }

    #[test]
    fn gaussian_limit() {
        let cb = psi_min_second(1, 0.0).unwrap();
        assert_eq!(cb.branch, CurvatureBranch::GaussianLimit);
        assert!((cb.psi_min_second - 45.0 * (1.0f64 / 15.0).powf(2.0 / 3.0)).abs() < 1e-12);
        assert!((cb.psi_min_second - 7.3987).abs() < 1e-4);
        for p in [1, 5, 50] {
            let g = psi_min_second(p, 0.0).unwrap().psi_min_second;
            let small = psi_min_second(p, 1e-9).unwrap();
            assert_eq!(small.branch, CurvatureBranch::FixedPointBranch);
            assert!((small.psi_min_second - g).abs() / g < 1e-6);
        }
    }

    #[test]
    fn recursion_increases_and_stays_below_root_bound() {
        let (p, d) = (10, 0.05);
        let it = fixed_point_iterates(p, d);
        assert!(it.len() > 2);
        for w in it.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(*it.last().unwrap() < 10.0 / 21.0 / d);
        let cb = psi_min_second(p, d).unwrap();
        assert!(cb.psi_min_second > 0.0);
    }

    #[test]
    fn branches_are_continuous() {
        for p in [1usize, 3, 10, 40] {
            let a = (3 * p) as f64 - 1.0;
            for t in [(1.5 / a).sqrt(), (1000.0 / (441.0 * a)).sqrt()] {
                let lo = psi_min_second(p, t * (1.0 - 1e-9)).unwrap().psi_min_second;
                let hi = psi_min_second(p, t * (1.0 + 1e-9)).unwrap().psi_min_second;
                assert!((lo - hi).abs() <= 1e-6 * lo.abs().max(1.0), "p={p} at {t}: {lo} vs {hi}");
            }
        }
    }

    #[test]
    fn large_delta_uses_tail_branch() {
        let cb = psi_min_second(2, 10.0).unwrap();
        assert_eq!(cb.branch, CurvatureBranch::TailBranch);
        assert!(cb.psi_min_second > 0.0);
        assert!(psi_min_second(0, 0.1).is_err());
        assert!(psi_min_second(1, -0.1).is_err());
    }

    #[test]
    fn radial_bound_is_a_rescaled_lsi() {
        let eps = 1e-3;
        let st = fit_standardized(Arc::new(quartic_target_1d(eps)), &[0.0]).unwrap();
        // φ̃‴ = 24εθ is unbounded; use the bound valid on |θ| <= 10.
        let cb = psi_min_second(1, 240.0 * eps).unwrap();
        let s = RngStream::new(2, 3);
        let rb = radial_kl_bound(&st, &cb, 20_000, &s).unwrap();
        let lsi = estimate_lsi(&st, 20_000, &s).unwrap();
        let ratio = 9.0 / cb.psi_min_second;
        assert!(rb.value > 0.0);
        assert!((rb.value - ratio * lsi.value).abs() <= 1e-12 * rb.value);
    }

    #[test]
    fn radial_bound_gaussian_and_errors() {
        let t = gaussian_target(vec![0.0], DMatrix::from_element(1, 1, 3.0)).unwrap();
        let st = fit_standardized(Arc::new(t), &[1.0]).unwrap();
        let cb = psi_min_second(1, 0.0).unwrap();
        let rb = radial_kl_bound(&st, &cb, 1000, &RngStream::new(1, 1)).unwrap();
        assert!(rb.value <= 3.0 * rb.std_error + 1e-20);
        let bad = CurvatureBound { psi_min_second: 0.0, ..cb.clone() };
        assert!(radial_kl_bound(&st, &bad, 1000, &RngStream::new(1, 1)).is_err());
        let wrong_dim = psi_min_second(2, 0.0).unwrap();
        assert!(radial_kl_bound(&st, &wrong_dim, 1000, &RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage_bounds(0.5, 0.0).unwrap(), (0.5, 0.5));
        let (lo, hi) = coverage_bounds(0.95, 0.01).unwrap();
        assert!(lo < 0.95 && hi > 0.95);
        assert!((binary_kl(0.95, lo) - 0.01).abs() < 1e-8);
        assert!((binary_kl(0.95, hi) - 0.01).abs() < 1e-8);
        assert!(coverage_bounds(0.0, 0.1).is_err());
        assert!(coverage_bounds(0.5, -1.0).is_err());
    }

    #[test]
    fn pinsker_examples() {
        assert_eq!(pinsker_tv_bound(0.0).unwrap(), 0.0);
        assert!((pinsker_tv_bound(0.02).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(pinsker_tv_bound(10.0).unwrap(), 1.0);
        assert!(pinsker_tv_bound(-0.1).is_err());
    }

    #[test]
    fn evidence_is_exact_for_gaussian() {
        // ∫ exp(-½ x² · 4) dx = √(2π/4).
        let t = gaussian_target(vec![0.0], DMatrix::from_element(1, 1, 4.0)).unwrap();
        let lap = build_laplace(&t, &[0.0]).unwrap();
        let b = evidence_bracket(&lap, 0.0, 0.0);
        assert!((b.elbo - (2.0 * std::f64::consts::PI / 4.0).sqrt().ln()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn coverage_interval_contains_p_g_and_grows(p_g in 0.01f64..0.99, k1 in 0.0f64..2.0, dk in 0.0f64..2.0) {
            let (lo1, hi1) = coverage_bounds(p_g, k1).unwrap();
            let (lo2, hi2) = coverage_bounds(p_g, k1 + dk).unwrap();
            prop_assert!(lo1 <= p_g && p_g <= hi1);
            prop_assert!(lo2 <= lo1 + 1e-10 && hi1 <= hi2 + 1e-10);
        }

        #[test]
        fn curvature_bound_positive_below_threshold(p in 1usize..200, frac in 0.0f64..1.0) {
            let a = (3 * p) as f64 - 1.0;
            let d = frac * (1.5 / a).sqrt();
            prop_assert!(psi_min_second(p, d).unwrap().psi_min_second > 0.0);
        }

        #[test]
        fn pinsker_in_unit_interval(kl in 0.0f64..1e6) {
            let tv = pinsker_tv_bound(kl).unwrap();
            prop_assert!((0.0..=1.0).contains(&tv));
        }
    }
}
