//! Adaptive Gauss–Kronrod (7/15) quadrature and 1-D KL by quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::laplace::StandardizedTarget;
use crate::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
/// Gauss weights for the nodes `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive integration of `f` over the partition `breaks`
/// (sorted), refining the interval with the largest error estimate until
/// the summed estimate falls below `abs_tol`.
pub fn integrate_partition<F: Fn(f64) -> f64>(f: F, breaks: &[f64], abs_tol: f64) -> Result<Integral> {
    if breaks.len() < 2 {
        return Err(Error::InvalidArgument("need at least two break points".into()));
    }
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidArgument(format!("break points not increasing: {} {}", w[0], w[1])));
        }
        let (value, error) = kronrod(&f, w[0], w[1]);
        heap.push(Piece { a: w[0], b: w[1], value, error });
    }
    loop {
        let (total, err): (f64, f64) = heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
        if !total.is_finite() {
            return Err(Error::Quadrature("integrand produced a non-finite value".into()));
        }
        if err <= abs_tol {
            return Ok(Integral { value: total, error: err });
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "no convergence after {MAX_INTERVALS} intervals (error estimate {err:e})"
            )));
        }
        let worst = heap.pop().expect("nonempty");
        let m = 0.5 * (worst.a + worst.b);
        if !(worst.a < m && m < worst.b) {
            return Err(Error::Quadrature(format!("interval around {m} cannot be split further")));
        }
        for (a, b) in [(worst.a, m), (m, worst.b)] {
            let (value, error) = kronrod(&f, a, b);
            heap.push(Piece { a, b, value, error });
        }
    }
}

/// `∫_a^b f` with the default partition into 16 equal pieces.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<Integral> {
    let breaks: Vec<f64> = (0..=16).map(|i| a + (b - a) * i as f64 / 16.0).collect();
    integrate_partition(f, &breaks, abs_tol)
}

/// Breaks at `0, ±1, ±2, ±4, …, ±R`: resolves a unit-scale peak at the
/// origin as well as wide tails.
pub fn symmetric_geometric_breaks(r: f64) -> Vec<f64> {
    let mut pos = vec![0.0];
    let mut x = 1.0;
    while x < r {
        pos.push(x);
        x *= 2.0;
    }
    pos.push(r);
    let mut out: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    out.extend(pos.iter().skip(1));
    out
}

const INITIAL_RADIUS: f64 = 8.0;
const MAX_RADIUS: f64 = 1e6;
const TAIL_TOL: f64 = 1e-14;
const ABS_TOL: f64 = 1e-13;

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Smallest window `[-R, R]` (doubling from 8) where every integrand is
/// below `1e-14 / R` at both ends.
pub fn tail_radius(integrands: &[&dyn Fn(f64) -> f64]) -> Result<f64> {
    let mut r = INITIAL_RADIUS;
    loop {
        let tail = integrands
            .iter()
            .map(|f| f(r).abs().max(f(-r).abs()))
            .fold(0.0f64, f64::max);
        if tail.is_finite() && tail * r < TAIL_TOL {
            return Ok(r);
        }
        r *= 2.0;
        if r > MAX_RADIUS {
            return Err(Error::Quadrature(format!(
                "integrand tails still above {TAIL_TOL:e} at radius {MAX_RADIUS:e}"
            )));
        }
    }
}

/// `KL(g, f) = E_g[δ] + log E_g[e^{-δ}]` by quadrature for a 1-D
/// standardized target.
pub fn kl_quadrature_1d(st: &StandardizedTarget) -> Result<f64> {
    if st.dim() != 1 {
        return Err(Error::DimensionMismatch(format!("quadrature needs p = 1, got {}", st.dim())));
    }
    kl_quadrature_delta(|x| st.delta(&[x]))
}

/// Same as [`kl_quadrature_1d`] for an arbitrary `δ`.
pub fn kl_quadrature_delta<D: Fn(f64) -> f64>(delta: D) -> Result<f64> {
    let mean_part = |x: f64| {
        let w = std_normal_pdf(x);
        if w == 0.0 {
            0.0
        } else {
            w * delta(x)
        }
    };
    let z_part = |x: f64| (-0.5 * x * x - delta(x)).exp() / (2.0 * PI).sqrt();
    let r = tail_radius(&[&mean_part, &z_part])?;
    let breaks = symmetric_geometric_breaks(r);
    let m = integrate_partition(mean_part, &breaks, ABS_TOL)?;
    let z = integrate_partition(z_part, &breaks, ABS_TOL)?;
    if !(z.value > 0.0) {
        return Err(Error::Quadrature(format!("normalizing integral is {}", z.value)));
    }
    Ok(m.value + z.value.ln())
}

/// `E_{g}[h(θ)]` for `θ ~ N(0, 1)` by quadrature on `[-R, R]`.
pub fn gaussian_expectation<H: Fn(f64) -> f64>(h: H, r: f64) -> Result<f64> {
    let f = |x: f64| std_normal_pdf(x) * h(x);
    Ok(integrate_partition(f, &symmetric_geometric_breaks(r), ABS_TOL)?.value)
}
