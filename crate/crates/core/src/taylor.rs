//! Third and fourth derivative tensors of `φ̃_f` at the mode and the
//! closed-form approximations built from them.
//!
//! Truncating `δ` at fourth order, `δ ≈ T3[θ,θ,θ]/6 + T4[θ,θ,θ,θ]/24`, the
//! Gaussian moments of the polynomial reduce to sums of squared tensor
//! entries and squared partial traces (the Isserlis pairings).

use rayon::prelude::*;

use crate::laplace::StandardizedTarget;
use crate::{Error, Result};

/// Largest dimension for which dense tensors are assembled by default.
pub const DEFAULT_MAX_DIM: usize = 150;

/// Fully symmetric `p × p × p` tensor, stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    dim: usize,
    data: Vec<f64>,
}

/// Fully symmetric `p × p × p × p` tensor, stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor4 {
    dim: usize,
    data: Vec<f64>,
}

/// All permutations of `[0, 1, 2]` and of `[0, 1, 2, 3]`.
fn perms(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in perms(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

impl SymTensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim * dim] }
    }

    /// Builds a symmetric tensor by evaluating `f` on sorted index triples.
    pub fn from_fn<F: Fn(usize, usize, usize) -> f64 + Sync>(dim: usize, f: F) -> Self {
        let mut t = Self::zeros(dim);
        let entries: Vec<(usize, usize, usize, f64)> = (0..dim)
            .into_par_iter()
            .flat_map_iter(|i| {
                let f = &f;
                (i..dim).flat_map(move |j| (j..dim).map(move |k| (i, j, k, f(i, j, k))))
            })
            .collect();
        for (i, j, k, v) in entries {
            for p in perms(3) {
                let idx = [i, j, k];
                t.set(idx[p[0]], idx[p[1]], idx[p[2]], v);
            }
        }
        t
    }

    /// Averages an arbitrary dense array over index permutations.
    pub fn symmetrized(dim: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != dim * dim * dim {
            return Err(Error::DimensionMismatch(format!("{} entries for a {dim}^3 tensor", raw.len())));
        }
        let at = |i: usize, j: usize, k: usize| raw[(i * dim + j) * dim + k];
        let ps = perms(3);
        Ok(Self::from_fn(dim, |i, j, k| {
            let idx = [i, j, k];
            ps.iter().map(|p| at(idx[p[0]], idx[p[1]], idx[p[2]])).sum::<f64>() / 6.0
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let d = self.dim;
        self.data[(i * d + j) * d + k] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `Σ T[i,j,k]²`.
    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `vᵢ = Σⱼ T[i,j,j]`.
    pub fn trace(&self) -> Vec<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j, j)).sum()).collect()
    }

    /// `T[x,x,x]`.
    pub fn contract(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                let xij = x[i] * x[j];
                for k in 0..d {
                    s += self.get(i, j, k) * xij * x[k];
                }
            }
        }
        s
    }

    /// Largest `|T[i,j,k] - T[π(i,j,k)]|` over permutations.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let ps = perms(3);
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let idx = [i, j, k];
                    for p in &ps {
                        worst = worst.max((self.get(i, j, k) - self.get(idx[p[0]], idx[p[1]], idx[p[2]])).abs());
                    }
                }
            }
        }
        worst
    }
}

impl SymTensor4 {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim * dim * dim] }
    }

    pub fn from_fn<F: Fn(usize, usize, usize, usize) -> f64 + Sync>(dim: usize, f: F) -> Self {
        let mut t = Self::zeros(dim);
        let entries: Vec<([usize; 4], f64)> = (0..dim)
            .into_par_iter()
            .flat_map_iter(|i| {
                let f = &f;
                (i..dim).flat_map(move |j| {
                    (j..dim).flat_map(move |k| (k..dim).map(move |l| ([i, j, k, l], f(i, j, k, l))))
                })
            })
            .collect();
        let ps = perms(4);
        for (idx, v) in entries {
            for p in &ps {
                t.set(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]], v);
            }
        }
        t
    }

    pub fn symmetrized(dim: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != dim * dim * dim * dim {
            return Err(Error::DimensionMismatch(format!("{} entries for a {dim}^4 tensor", raw.len())));
        }
        let at = |i: usize, j: usize, k: usize, l: usize| raw[((i * dim + j) * dim + k) * dim + l];
        let ps = perms(4);
        Ok(Self::from_fn(dim, |i, j, k, l| {
            let idx = [i, j, k, l];
            ps.iter().map(|p| at(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]])).sum::<f64>() / 24.0
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = self.dim;
        self.data[((i * d + j) * d + k) * d + l]
    }

    fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let d = self.dim;
        self.data[((i * d + j) * d + k) * d + l] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `M[i][j] = Σₖ T[i,j,k,k]`, row-major.
    pub fn trace(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = (0..d).map(|k| self.get(i, j, k, k)).sum();
            }
        }
        m
    }

    /// `T[x,x,x,x]`.
    pub fn contract(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                let xij = x[i] * x[j];
                for k in 0..d {
                    let xijk = xij * x[k];
                    for l in 0..d {
                        s += self.get(i, j, k, l) * xijk * x[l];
                    }
                }
            }
        }
        s
    }

    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let ps = perms(4);
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let idx = [i, j, k, l];
                        for p in &ps {
                            let other = self.get(idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]);
                            worst = worst.max((self.get(i, j, k, l) - other).abs());
                        }
                    }
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorMethod {
    /// Closed-form directional derivatives of the base model along `L êᵢ`.
    Analytic,
    /// Central differences of the standardized Hessian at 0.
    FiniteDiff,
}

pub fn compute_tensors(st: &StandardizedTarget, method: TensorMethod) -> Result<(SymTensor3, SymTensor4)> {
    compute_tensors_with_limit(st, method, DEFAULT_MAX_DIM)
}

pub fn compute_tensors_with_limit(
    st: &StandardizedTarget,
    method: TensorMethod,
    max_dim: usize,
) -> Result<(SymTensor3, SymTensor4)> {
    let p = st.dim();
    if p > max_dim {
        return Err(Error::TensorTooLarge { dim: p, limit: max_dim });
    }
    match method {
        TensorMethod::Analytic => {
            if !st.base().analytic_higher_derivs() {
                return Err(Error::Precondition(format!(
                    "target `{}` has no closed-form higher derivatives; use finite differences",
                    st.base().name()
                )));
            }
            let zero = vec![0.0; p];
            let basis: Vec<Vec<f64>> = (0..p)
                .map(|i| {
                    let mut e = vec![0.0; p];
                    e[i] = 1.0;
                    e
                })
                .collect();
            let t3 = SymTensor3::from_fn(p, |i, j, k| st.third_dir(&zero, &basis[i], &basis[j], &basis[k]));
            let t4 = SymTensor4::from_fn(p, |i, j, k, l| {
                st.fourth_dir(&zero, &basis[i], &basis[j], &basis[k], &basis[l])
            });
            Ok((t3, t4))
        }
        TensorMethod::FiniteDiff => finite_diff_tensors(st),
    }
}

fn finite_diff_tensors(st: &StandardizedTarget) -> Result<(SymTensor3, SymTensor4)> {
    let p = st.dim();
    let h3 = f64::EPSILON.cbrt();
    let h4 = f64::EPSILON.powf(0.25);
    let at = |pairs: &[(usize, f64)]| {
        let mut x = vec![0.0; p];
        for &(i, v) in pairs {
            x[i] += v;
        }
        st.hess_tilde(&x)
    };

    let slices3: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            let d = (at(&[(i, h3)]) - at(&[(i, -h3)])) / (2.0 * h3);
            let mut out = Vec::with_capacity(p * p);
            for j in 0..p {
                for k in 0..p {
                    out.push(d[(j, k)]);
                }
            }
            out
        })
        .collect();
    let raw3: Vec<f64> = slices3.concat();

    let slices4: Vec<Vec<f64>> = (0..p * p)
        .into_par_iter()
        .map(|ij| {
            let (i, j) = (ij / p, ij % p);
            let d = (at(&[(i, h4), (j, h4)]) - at(&[(i, h4), (j, -h4)]) - at(&[(i, -h4), (j, h4)])
                + at(&[(i, -h4), (j, -h4)]))
                / (4.0 * h4 * h4);
            let mut out = Vec::with_capacity(p * p);
            for k in 0..p {
                for l in 0..p {
                    out.push(d[(k, l)]);
                }
            }
            out
        })
        .collect();
    let raw4: Vec<f64> = slices4.concat();
    if raw3.iter().chain(&raw4).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("finite-difference derivative tensor".into()));
    }
    Ok((SymTensor3::symmetrized(p, &raw3)?, SymTensor4::symmetrized(p, &raw4)?))
}

fn check_dims(t3: &SymTensor3, t4: &SymTensor4) -> Result<usize> {
    if t3.dim() != t4.dim() {
        return Err(Error::DimensionMismatch(format!(
            "third-order tensor has dimension {}, fourth-order {}",
            t3.dim(),
            t4.dim()
        )));
    }
    Ok(t3.dim())
}

/// Partial traces shared by both closed forms.
struct Contractions {
    s3: f64,
    tr3: f64,
    s4: f64,
    tr4: f64,
    full4: f64,
}

fn contractions(t3: &SymTensor3, t4: &SymTensor4) -> Contractions {
    let p = t4.dim();
    let m = t4.trace();
    Contractions {
        s3: t3.sum_sq(),
        tr3: t3.trace().iter().map(|v| v * v).sum(),
        s4: t4.sum_sq(),
        tr4: m.iter().map(|v| v * v).sum(),
        full4: (0..p).map(|i| m[i * p + i]).sum(),
    }
}

/// Fourth-order Taylor approximation of `Var_g[δ]`:
/// `(1/6)ΣT3² + (1/4)Σᵢ(ΣⱼT3ᵢⱼⱼ)² + (1/24)ΣT4² + (1/8)Σᵢⱼ(ΣₖT4ᵢⱼₖₖ)²`.
///
/// This approximates the full KL-variance; the KL-scale value is half of it.
pub fn taylor_klvar(t3: &SymTensor3, t4: &SymTensor4) -> Result<f64> {
    check_dims(t3, t4)?;
    let c = contractions(t3, t4);
    Ok(c.s3 / 6.0 + c.tr3 / 4.0 + c.s4 / 24.0 + c.tr4 / 8.0)
}

/// Taylor approximation of the LSI radial term:
/// `(1/p)[(3/4)ΣT3² + (9/8)Σᵢ(..)² + (1/3)ΣT4² + Σᵢⱼ(..)² + (1/8)(ΣᵢⱼT4ᵢᵢⱼⱼ)²]`.
pub fn taylor_lsi(t3: &SymTensor3, t4: &SymTensor4) -> Result<f64> {
    let p = check_dims(t3, t4)?;
    let c = contractions(t3, t4);
    Ok((0.75 * c.s3 + 1.125 * c.tr3 + c.s4 / 3.0 + c.tr4 + c.full4 * c.full4 / 8.0) / p as f64)
}

/// KL-scale Taylor approximations at third order (fourth-order tensor set to
/// zero) and fourth order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorApprox {
    /// `½ taylor_klvar(T3, 0)`.
    pub klvar3: f64,
    /// `taylor_lsi(T3, 0)`.
    pub lsi3: f64,
    /// `½ taylor_klvar(T3, T4)`.
    pub klvar4: f64,
    /// `taylor_lsi(T3, T4)`.
    pub lsi4: f64,
}

impl TaylorApprox {
    pub fn klvar3_plus_lsi(&self) -> f64 {
        self.klvar3 + self.lsi3
    }

    pub fn klvar4_plus_lsi(&self) -> f64 {
        self.klvar4 + self.lsi4
    }
}

pub fn taylor_approximations(t3: &SymTensor3, t4: &SymTensor4) -> Result<TaylorApprox> {
    let zero = SymTensor4::zeros(t4.dim());
    Ok(TaylorApprox {
        klvar3: 0.5 * taylor_klvar(t3, &zero)?,
        lsi3: taylor_lsi(t3, &zero)?,
        klvar4: 0.5 * taylor_klvar(t3, t4)?,
        lsi4: taylor_lsi(t3, t4)?,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;
    use proptest::prelude::*;

    use super::*;
    use crate::geometry::{par_draws, sample_std_normal, RngStream};
    use crate::laplace::fit_standardized;
    use crate::stats;
    use crate::targets::{
        gaussian_target, generate_logistic_data, logistic_target, quartic_target, quartic_target_1d,
    };

    fn t3_1d(t: f64) -> SymTensor3 {
        SymTensor3::from_fn(1, |_, _, _| t)
    }

    fn t4_1d(c: f64) -> SymTensor4 {
        SymTensor4::from_fn(1, |_, _, _, _| c)
    }

    #[test]
    fn one_dimensional_closed_forms() {
        let t = 1.7;
        let z4 = SymTensor4::zeros(1);
        // Var((t/6)θ³) = t²·15/36.
        assert!((taylor_klvar(&t3_1d(t), &z4).unwrap() - 5.0 * t * t / 12.0).abs() < 1e-14);
        assert!((taylor_lsi(&t3_1d(t), &z4).unwrap() - 15.0 * t * t / 8.0).abs() < 1e-14);
        let c = 0.6;
        let z3 = SymTensor3::zeros(1);
        // Var((c/24)θ⁴) = c²(105 - 9)/576.
        assert!((taylor_klvar(&z3, &t4_1d(c)).unwrap() - c * c * 96.0 / 576.0).abs() < 1e-14);
        assert!((taylor_lsi(&z3, &t4_1d(c)).unwrap() - 35.0 * c * c / 24.0).abs() < 1e-14);
        assert_eq!(taylor_klvar(&z3, &z4).unwrap(), 0.0);
        assert_eq!(taylor_lsi(&z3, &z4).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(taylor_klvar(&SymTensor3::zeros(2), &SymTensor4::zeros(3)).is_err());
        assert!(taylor_lsi(&SymTensor3::zeros(2), &SymTensor4::zeros(1)).is_err());
    }

    #[test]
    fn gaussian_tensors_vanish() {
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let st = fit_standardized(Arc::new(gaussian_target(vec![0.3, 0.1], prec).unwrap()), &[0.0, 0.0]).unwrap();
        let (t3, t4) = compute_tensors(&st, TensorMethod::Analytic).unwrap();
        assert!(t3.as_slice().iter().chain(t4.as_slice()).all(|&v| v == 0.0));
        assert_eq!(taylor_klvar(&t3, &t4).unwrap(), 0.0);
    }

    #[test]
    fn quartic_tensors() {
        let eps = 0.01;
        let st = fit_standardized(Arc::new(quartic_target_1d(eps)), &[0.5]).unwrap();
        let (t3, t4) = compute_tensors(&st, TensorMethod::Analytic).unwrap();
        assert!(t3.get(0, 0, 0).abs() < 1e-12);
        assert!((t4.get(0, 0, 0, 0) - 24.0 * eps).abs() < 1e-12);
        let (f3, f4) = compute_tensors(&st, TensorMethod::FiniteDiff).unwrap();
        assert!(f3.get(0, 0, 0).abs() < 1e-6);
        assert!((f4.get(0, 0, 0, 0) - 24.0 * eps).abs() < 1e-4);
        // taylor_klvar is the full variance 96 ε².
        assert!((taylor_klvar(&t3, &t4).unwrap() - 96.0 * eps * eps).abs() < 1e-12);
    }

    #[test]
    fn quartic_tensor_in_three_dimensions() {
        // ε‖θ‖⁴ has T4[i,i,j,j] = 8ε (i≠j), T4[i,i,i,i] = 24ε.
        let eps = 0.02;
        let st = fit_standardized(Arc::new(quartic_target(3, eps)), &[0.0; 3]).unwrap();
        let (_, t4) = compute_tensors(&st, TensorMethod::Analytic).unwrap();
        assert!((t4.get(0, 0, 1, 1) - 8.0 * eps).abs() < 1e-12);
        assert!((t4.get(2, 2, 2, 2) - 24.0 * eps).abs() < 1e-12);
        assert!(t4.get(0, 1, 1, 2).abs() < 1e-12);
    }

    #[test]
    fn logistic_analytic_matches_finite_differences() {
        let t = logistic_target(generate_logistic_data(100, 5, 3).unwrap());
        let st = fit_standardized(Arc::new(t), &[0.0; 5]).unwrap();
        let (a3, a4) = compute_tensors(&st, TensorMethod::Analytic).unwrap();
        let (f3, f4) = compute_tensors(&st, TensorMethod::FiniteDiff).unwrap();
        for (a, f) in a3.as_slice().iter().zip(f3.as_slice()) {
            assert!((a - f).abs() < 1e-3, "{a} vs {f}");
        }
        for (a, f) in a4.as_slice().iter().zip(f4.as_slice()) {
            assert!((a - f).abs() < 1e-3, "{a} vs {f}");
        }
        assert!(a3.asymmetry() < 1e-10 && a4.asymmetry() < 1e-10);
        assert!(f3.asymmetry() < 1e-10 && f4.asymmetry() < 1e-10);
    }

    #[test]
    fn dimension_guard() {
        let st = fit_standardized(Arc::new(quartic_target(4, 0.1)), &[0.0; 4]).unwrap();
        assert!(matches!(
            compute_tensors_with_limit(&st, TensorMethod::Analytic, 3),
            Err(Error::TensorTooLarge { dim: 4, limit: 3 })
        ));
    }

    #[test]
    fn analytic_needs_closed_forms() {
        let st = fit_standardized(Arc::new(crate::targets::mixture_target_1d(1.0)), &[0.0]).unwrap();
        assert!(matches!(compute_tensors(&st, TensorMethod::Analytic), Err(Error::Precondition(_))));
        assert!(compute_tensors(&st, TensorMethod::FiniteDiff).is_ok());
    }

    fn random_tensors(p: usize, seed: u64) -> (SymTensor3, SymTensor4) {
        let mut rng = RngStream::new(seed, 77).rng();
        let raw3 = sample_std_normal(p * p * p, &mut rng);
        let raw4 = sample_std_normal(p * p * p * p, &mut rng);
        (SymTensor3::symmetrized(p, &raw3).unwrap(), SymTensor4::symmetrized(p, &raw4).unwrap())
    }

    /// Monte Carlo variance of `T3[θ³]/6 + T4[θ⁴]/24` with a batch-means SE.
    fn mc_polynomial_variance(t3: &SymTensor3, t4: &SymTensor4, s: usize, seed: u64) -> (f64, f64) {
        let p = t3.dim();
        let v = par_draws(s, &RngStream::new(seed, 5), |rng| {
            let x = sample_std_normal(p, rng);
            t3.contract(&x) / 6.0 + t4.contract(&x) / 24.0
        });
        (stats::variance(&v), stats::batch_means_se(&v, 100, stats::variance))
    }

    #[test]
    fn isserlis_oracle() {
        for p in 1..=3 {
            let (t3, t4) = random_tensors(p, p as u64);
            let (v, se) = mc_polynomial_variance(&t3, &t4, 100_000, 10 + p as u64);
            let closed = taylor_klvar(&t3, &t4).unwrap();
            assert!((v - closed).abs() < 3.0 * se, "p={p}: mc {v} ± {se}, closed {closed}");
        }
    }

    #[test]
    fn symmetrization_is_idempotent() {
        let (t3, t4) = random_tensors(3, 1);
        assert_eq!(SymTensor3::symmetrized(3, t3.as_slice()).unwrap().as_slice().len(), 27);
        let again = SymTensor4::symmetrized(3, t4.as_slice()).unwrap();
        for (a, b) in again.as_slice().iter().zip(t4.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn closed_forms_are_nonnegative(p in 1usize..4, seed in 0u64..1000) {
            let (t3, t4) = random_tensors(p, seed);
            prop_assert!(taylor_klvar(&t3, &t4).unwrap() >= 0.0);
            prop_assert!(taylor_lsi(&t3, &t4).unwrap() >= 0.0);
            prop_assert!(t3.asymmetry() < 1e-10);
            prop_assert!(t4.asymmetry() < 1e-10);
        }
    }
}
