//! No-U-Turn Hamiltonian sampler with multinomial trajectory sampling and
//! dual-averaging step-size adaptation.
//!
//! The sampler runs in the standardized coordinates of the Laplace
//! approximation with an identity mass matrix, which amounts to
//! preconditioning by the Laplace factor.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::Chain;
use crate::geometry::{dot, sample_std_normal, RngStream};
use crate::laplace::StandardizedTarget;
use crate::stats::log_add_exp;
use crate::{Error, Result};

const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NutsConfig {
    /// Post-warmup iterations (before thinning).
    pub n_samples: usize,
    pub n_warmup: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    /// Keep every `thin`-th post-warmup draw.
    pub thin: usize,
    /// Largest tolerated fraction of divergent post-warmup transitions.
    pub max_divergent_fraction: f64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            n_samples: 50_000,
            n_warmup: 10_000,
            target_accept: 0.8,
            max_depth: 10,
            thin: 1,
            max_divergent_fraction: 0.1,
        }
    }
}

impl NutsConfig {
    /// 60 000 iterations with 10 000 warmup for `p <= 100`; 260 000 thinned
    /// 1-in-5 beyond.
    pub fn for_dim(p: usize) -> Self {
        if p <= 100 {
            Self::default()
        } else {
            Self { n_samples: 250_000, thin: 5, ..Self::default() }
        }
    }
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    /// `φ_f` at `μ + L q`.
    phi: f64,
}

struct Sampler<'a> {
    st: &'a StandardizedTarget,
    phi0: f64,
    eps: f64,
    rng: ChaCha12Rng,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
    max_depth: usize,
}

fn criterion(p_minus: &[f64], p_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_plus, rho) > 0.0 && dot(p_minus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl<'a> Sampler<'a> {
    fn evaluate(&self, q: &[f64]) -> (f64, Vec<f64>) {
        self.st.phi_grad_tilde(q)
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let h = (z.phi - self.phi0) + 0.5 * dot(&z.p, &z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p -= 0.5 * eps * g;
        }
        for (q, p) in z.q.iter_mut().zip(&z.p) {
            *q += eps * p;
        }
        let (phi, grad) = self.evaluate(&z.q);
        z.phi = phi;
        z.grad = grad;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p -= 0.5 * eps * g;
        }
    }

    /// Recursive doubling; returns whether the subtree is valid. `rho`
    /// accumulates summed momenta; `p_beg`/`p_end` are the momenta at the
    /// first and last states in integration order.
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        rho: &mut [f64],
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, h0 - h);
            self.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            *z_propose = z.clone();
            *p_beg = z.p.clone();
            *p_end = z.p.clone();
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            return !self.divergent;
        }
        let dim = z.q.len();

        let mut p_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        if !self.build_tree(depth - 1, z, z_propose, p_beg, &mut p_init_end, &mut rho_init, h0, sign, &mut lsw_init) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut p_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_final_beg,
            p_end,
            &mut rho_final,
            h0,
            sign,
            &mut lsw_final,
        ) {
            return false;
        }

        let lsw_subtree = log_add_exp(lsw_init, lsw_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
        let accept = (lsw_final - lsw_subtree).exp();
        if self.rng.random::<f64>() < accept {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        let mut persist = criterion(p_beg, p_end, &rho_subtree);
        persist &= criterion(p_beg, &p_final_beg, &add(&rho_init, &p_final_beg));
        persist &= criterion(&p_init_end, p_end, &add(&rho_final, &p_init_end));
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        persist
    }

    /// One NUTS transition from `current`; returns the new state and the
    /// mean Metropolis acceptance statistic of the trajectory.
    fn transition(&mut self, current: &Point) -> (Point, f64) {
        let dim = current.q.len();
        let mut z0 = current.clone();
        z0.p = sample_std_normal(dim, &mut self.rng);
        let h0 = self.hamiltonian(&z0);

        let mut z_fwd = z0.clone();
        let mut z_bck = z0.clone();
        let mut z_sample = z0.clone();
        let mut z_propose = z0.clone();

        // Momenta at the two ends of the backward and forward halves.
        let mut p_fwd_fwd = z0.p.clone();
        let mut p_fwd_bck = z0.p.clone();
        let mut p_bck_fwd = z0.p.clone();
        let mut p_bck_bck = z0.p.clone();
        let mut rho = z0.p.clone();
        let mut log_sum_weight = 0.0;

        self.n_leapfrog = 0;
        self.sum_metro_prob = 0.0;
        self.divergent = false;

        let mut depth = 0;
        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if self.rng.random::<f64>() > 0.5 {
                // The whole old trajectory becomes the backward half.
                rho_bck = rho.clone();
                p_bck_fwd = p_fwd_fwd.clone();
                let mut z = z_fwd.clone();
                let ok = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    &mut rho_fwd,
                    h0,
                    1.0,
                    &mut lsw_subtree,
                );
                z_fwd = z;
                ok
            } else {
                rho_fwd = rho.clone();
                p_fwd_bck = p_bck_bck.clone();
                let mut z = z_bck.clone();
                let ok = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    &mut rho_bck,
                    h0,
                    -1.0,
                    &mut lsw_subtree,
                );
                z_bck = z;
                ok
            };
            if !valid {
                break;
            }
            depth += 1;

            if lsw_subtree > log_sum_weight || self.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample = z_propose.clone();
            }
            log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_bck_bck, &p_fwd_fwd, &rho);
            persist &= criterion(&p_bck_bck, &p_fwd_bck, &add(&rho_bck, &p_fwd_bck));
            persist &= criterion(&p_bck_fwd, &p_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }
        let accept = if self.n_leapfrog > 0 { self.sum_metro_prob / self.n_leapfrog as f64 } else { 0.0 };
        (z_sample, accept)
    }

    /// Doubles or halves the step until one leapfrog step crosses an
    /// acceptance of 0.8.
    fn init_step_size(&mut self, z: &Point) -> Result<()> {
        let dim = z.q.len();
        let log_target = 0.8f64.ln();
        let mut direction = 0.0;
        loop {
            let mut trial = z.clone();
            trial.p = sample_std_normal(dim, &mut self.rng);
            let h0 = self.hamiltonian(&trial);
            self.leapfrog(&mut trial, self.eps);
            let delta_h = h0 - self.hamiltonian(&trial);
            let up = delta_h > log_target;
            if direction == 0.0 {
                direction = if up { 1.0 } else { -1.0 };
            } else if (direction > 0.0 && !up) || (direction < 0.0 && up) {
                return Ok(());
            }
            self.eps = if direction > 0.0 { 2.0 * self.eps } else { 0.5 * self.eps };
            if !(1e-10..=1e7).contains(&self.eps) {
                return Err(Error::Sampler(format!("step-size search diverged (ε = {:e})", self.eps)));
            }
        }
    }
}

/// Dual averaging of the log step size toward a target acceptance.
struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, delta: f64) -> Self {
        Self { mu: (10.0 * eps0).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, delta }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Runs one chain started at `init` (original coordinates).
pub fn nuts_sample(
    st: &StandardizedTarget,
    init: &[f64],
    config: &NutsConfig,
    stream: &RngStream,
) -> Result<Chain> {
    let dim = st.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch(format!("init has length {} for dimension {dim}", init.len())));
    }
    if config.n_warmup < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 warmup iterations, got {}", config.n_warmup)));
    }
    if config.n_samples == 0 || config.thin == 0 {
        return Err(Error::InvalidArgument("n_samples and thin must be positive".into()));
    }
    if !(config.target_accept > 0.0 && config.target_accept < 1.0) {
        return Err(Error::InvalidArgument(format!("target_accept {} not in (0, 1)", config.target_accept)));
    }

    let phi0 = st.laplace().phi_at_mode;
    let q0 = st.laplace().to_standard(init);
    let (phi, grad) = st.phi_grad_tilde(&q0);
    if !phi.is_finite() {
        return Err(Error::NonFinite(format!("φ at the initial point {init:?}")));
    }
    let mut current = Point { q: q0, p: vec![0.0; dim], grad, phi };
    let mut sampler = Sampler {
        st,
        phi0,
        eps: 1.0,
        rng: stream.rng(),
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
        max_depth: config.max_depth,
    };
    sampler.init_step_size(&current)?;
    let mut adapt = DualAveraging::new(sampler.eps, config.target_accept);

    for _ in 0..config.n_warmup {
        let (next, accept) = sampler.transition(&current);
        current = next;
        sampler.eps = adapt.update(accept);
    }
    sampler.eps = adapt.final_step();

    let kept = config.n_samples / config.thin;
    let mut samples = DMatrix::zeros(kept, dim);
    let mut phi_values = Vec::with_capacity(kept);
    let mut n_divergences = 0;
    let mut accept_sum = 0.0;
    let mut tree_sizes = 0usize;
    let mut row = 0;
    for it in 0..config.n_samples {
        let (next, accept) = sampler.transition(&current);
        current = next;
        accept_sum += accept;
        tree_sizes += sampler.n_leapfrog;
        if sampler.divergent {
            n_divergences += 1;
        }
        if (it + 1) % config.thin == 0 && row < kept {
            let theta = st.laplace().to_original(&current.q);
            for (j, v) in theta.iter().enumerate() {
                samples[(row, j)] = *v;
            }
            phi_values.push(current.phi);
            row += 1;
        }
    }
    let frac = n_divergences as f64 / config.n_samples as f64;
    if frac > config.max_divergent_fraction {
        return Err(Error::Sampler(format!(
            "{n_divergences} of {} post-warmup transitions diverged (step size {:e}, mean acceptance {:.3})",
            config.n_samples,
            sampler.eps,
            accept_sum / config.n_samples as f64
        )));
    }
    Ok(Chain {
        samples,
        phi_values,
        step_size: sampler.eps,
        n_divergences,
        warmup: config.n_warmup,
        mean_accept: accept_sum / config.n_samples as f64,
        mean_leapfrog: tree_sizes as f64 / config.n_samples as f64,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::laplace::fit_standardized;
    use crate::reference::quadrature::gaussian_expectation;
    use crate::stats;
    use crate::targets::{gaussian_target, generate_logistic_data, logistic_target, quartic_target_1d, TargetDensity};

    fn cfg(n: usize, warm: usize) -> NutsConfig {
        NutsConfig { n_samples: n, n_warmup: warm, ..NutsConfig::default() }
    }

    #[test]
    fn standard_normal_moments() {
        let t = gaussian_target(vec![0.0], DMatrix::identity(1, 1)).unwrap();
        let st = fit_standardized(Arc::new(t), &[0.0]).unwrap();
        let chain = nuts_sample(&st, &[0.5], &cfg(20_000, 1000), &RngStream::new(1, 0)).unwrap();
        let xs: Vec<f64> = chain.samples.column(0).iter().copied().collect();
        let se = stats::batch_means_se(&xs, 100, stats::mean);
        assert!(stats::mean(&xs).abs() < 3.0 * se, "mean {} se {se}", stats::mean(&xs));
        let v = stats::variance(&xs);
        assert!((0.9..=1.1).contains(&v), "variance {v}");
        assert_eq!(chain.n_divergences, 0);
    }

    #[test]
    fn quartic_second_moment_matches_quadrature() {
        let eps = 0.05;
        let t = quartic_target_1d(eps);
        let st = fit_standardized(Arc::new(t), &[0.0]).unwrap();
        let chain = nuts_sample(&st, &[0.0], &cfg(40_000, 2000), &RngStream::new(2, 0)).unwrap();
        let x2: Vec<f64> = chain.samples.column(0).iter().map(|x| x * x).collect();
        let se = stats::batch_means_se(&x2, 100, stats::mean);
        // E_f[θ²] = E_g[θ² e^{-εθ⁴}] / E_g[e^{-εθ⁴}].
        let num = gaussian_expectation(|x| x * x * (-eps * x.powi(4)).exp(), 40.0).unwrap();
        let den = gaussian_expectation(|x| (-eps * x.powi(4)).exp(), 40.0).unwrap();
        let exact = num / den;
        assert!((stats::mean(&x2) - exact).abs() < 3.0 * se, "{} vs {exact} (se {se})", stats::mean(&x2));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let t = logistic_target(generate_logistic_data(50, 3, 1).unwrap());
        let st = fit_standardized(Arc::new(t), &[0.0; 3]).unwrap();
        let a = nuts_sample(&st, &[0.0; 3], &cfg(500, 200), &RngStream::new(9, 9)).unwrap();
        let b = nuts_sample(&st, &[0.0; 3], &cfg(500, 200), &RngStream::new(9, 9)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.phi_values, b.phi_values);
    }

    #[test]
    fn acceptance_tracks_target_and_phi_is_consistent() {
        let t = logistic_target(generate_logistic_data(100, 5, 2).unwrap());
        let st = fit_standardized(Arc::new(t.clone()), &[0.0; 5]).unwrap();
        let chain = nuts_sample(&st, &[0.0; 5], &cfg(5000, 1000), &RngStream::new(3, 1)).unwrap();
        assert!((0.7..=0.9).contains(&chain.mean_accept), "mean acceptance {}", chain.mean_accept);
        for i in (0..chain.len()).step_by(chain.len() / 100) {
            let theta: Vec<f64> = chain.samples.row(i).iter().copied().collect();
            assert!((t.phi(&theta) - chain.phi_values[i]).abs() < 1e-9 * (1.0 + t.phi(&theta).abs()));
        }
    }

    #[test]
    fn thinning_and_errors() {
        let t = gaussian_target(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let st = fit_standardized(Arc::new(t), &[0.0, 0.0]).unwrap();
        let c = nuts_sample(&st, &[0.0, 0.0], &NutsConfig { thin: 5, ..cfg(1000, 100) }, &RngStream::new(1, 1))
            .unwrap();
        assert_eq!(c.len(), 200);
        assert!(nuts_sample(&st, &[0.0, 0.0], &cfg(1000, 50), &RngStream::new(1, 1)).is_err());
        assert!(nuts_sample(&st, &[0.0], &cfg(1000, 100), &RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn defaults_follow_dimension() {
        assert_eq!(NutsConfig::for_dim(10).n_samples + NutsConfig::for_dim(10).n_warmup, 60_000);
        let big = NutsConfig::for_dim(200);
        assert_eq!(big.n_samples + big.n_warmup, 260_000);
        assert_eq!(big.thin, 5);
    }
}
