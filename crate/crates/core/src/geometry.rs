//! Spherical decomposition of the standardized space, χ_p moments and the
//! seeded random streams every sampler draws from.
//!
//! Under the standard normal `g`, a point `θ̃ = r·e` has `r ~ χ_p` and `e`
//! uniform on the unit sphere, independent of each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::{Error, Result};

/// Dimension above which χ_p radii are drawn through the Gamma route.
pub const CHI_GAMMA_THRESHOLD: usize = 50;

/// Number of draws served by one child stream in [`par_draws`].
pub const DRAW_CHUNK: usize = 1024;

/// A point of the standardized space written as radius times direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalPoint {
    pub r: f64,
    pub e: Vec<f64>,
}

impl SphericalPoint {
    pub fn compose(&self) -> Vec<f64> {
        self.e.iter().map(|x| self.r * x).collect()
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn decompose(theta_tilde: &[f64]) -> Result<SphericalPoint> {
    let r = norm(theta_tilde);
    if r == 0.0 {
        return Err(Error::InvalidArgument(
            "cannot decompose the origin: direction undefined".into(),
        ));
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("radius of input vector".into()));
    }
    Ok(SphericalPoint {
        r,
        e: theta_tilde.iter().map(|x| x / r).collect(),
    })
}

pub fn compose(point: &SphericalPoint) -> Vec<f64> {
    point.compose()
}

/// `E[r^k]` for `r ~ χ_p`, i.e. `2^{k/2} Γ((p+k)/2) / Γ(p/2)`, through log-gamma.
pub fn chi_moment(p: usize, k: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidArgument("chi_moment needs p >= 1".into()));
    }
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!("moment order must be >= 0, got {k}")));
    }
    let p = p as f64;
    let log_m = 0.5 * k * std::f64::consts::LN_2 + libm::lgamma(0.5 * (p + k)) - libm::lgamma(0.5 * p);
    Ok(log_m.exp())
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// The generator is ChaCha12 keyed by the seed with the stream id selecting the
/// ChaCha stream, so the draws depend on nothing but the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Derives an independent child stream; the mapping is fixed, so the same
    /// `(parent, index)` always yields the same child.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x5851_f42d))),
        }
    }

    /// Stream keyed by several integers (for example `(n, p, seed)` of an
    /// experiment cell).
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        let id = keys.iter().fold(0x243f_6a88_85a3_08d3u64, |acc, &k| splitmix64(acc ^ splitmix64(k)));
        Self { seed, stream_id: id }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

pub fn sample_std_normal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<f64> {
    (0..p).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniform direction on the unit sphere (normalised Gaussian draw).
pub fn sample_sphere<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let z = sample_std_normal(p, rng);
        let r = norm(&z);
        if r > 0.0 {
            return z.into_iter().map(|x| x / r).collect();
        }
    }
}

/// χ_p radius: norm of a Gaussian draw for `p <= 50`, `sqrt(2 Gamma(p/2, 1))`
/// beyond, which costs O(1) per draw.
pub fn sample_chi<R: Rng + ?Sized>(p: usize, rng: &mut R) -> f64 {
    if p > CHI_GAMMA_THRESHOLD {
        sample_chi_gamma(p, rng)
    } else {
        sample_chi_norm(p, rng)
    }
}

pub fn sample_chi_norm<R: Rng + ?Sized>(p: usize, rng: &mut R) -> f64 {
    (0..p)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * z
        })
        .sum::<f64>()
        .sqrt()
}

pub fn sample_chi_gamma<R: Rng + ?Sized>(p: usize, rng: &mut R) -> f64 {
    let gamma = Gamma::new(0.5 * p as f64, 1.0).expect("shape p/2 > 0");
    (2.0 * gamma.sample(rng)).sqrt()
}

/// Produces `n` draws in parallel. Draw `i` comes from child stream
/// `i / DRAW_CHUNK`, so the output does not depend on the worker count.
pub fn par_draws<T, F>(n: usize, stream: &RngStream, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha12Rng) -> T + Sync,
{
    let chunks = n.div_ceil(DRAW_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream.child(c as u64).rng();
            let len = DRAW_CHUNK.min(n - c * DRAW_CHUNK);
            let draw = &draw;
            (0..len).map(move |_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}
