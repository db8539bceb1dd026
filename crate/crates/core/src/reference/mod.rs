//! Ground-truth KL: a NUTS sampler for the target, the two
//! normalizing-constant routes, 1-D quadrature and the cumulant-path check.

mod nuts;
mod cumulant_path;
pub mod quadrature;

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::Serialize;

pub use nuts::{nuts_sample, NutsConfig};
pub use cumulant_path::{prop1_path_check, prop1_path_check_delta, CumulantPathReport};
pub use quadrature::kl_quadrature_1d;

use crate::diagnostics::{delta_draws, Estimator, KlEstimate};
use crate::geometry::RngStream;
use crate::laplace::StandardizedTarget;
use crate::stats::{self, DEFAULT_BATCHES};
use crate::{Error, Result};

pub const GATE_LAG_LO: usize = 30;
pub const GATE_LAG_HI: usize = 100;
pub const GATE_THRESHOLD: f64 = 0.05;
pub const MIN_DIRECT_SAMPLES: usize = 1000;
/// Largest normalized importance weight tolerated without a warning.
pub const MAX_WEIGHT_FRACTION: f64 = 0.1;

/// Post-warmup draws from the target in original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// `m × p`.
    pub samples: DMatrix<f64>,
    /// `φ_f` at each sample.
    pub phi_values: Vec<f64>,
    pub step_size: f64,
    pub n_divergences: usize,
    pub warmup: usize,
    pub mean_accept: f64,
    pub mean_leapfrog: f64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.phi_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Writes `theta1,…,thetap,phi`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("theta{j}")).collect();
        header.push("phi".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.samples.row(i).iter().map(|v| format!("{v:e}")).collect();
            rec.push(format!("{:e}", self.phi_values[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the layout of [`Chain::write_csv`]; sampler metadata is not
    /// part of the file and comes back zeroed.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let p = headers.len().saturating_sub(1);
        if p == 0 || headers.get(p) != Some("phi") {
            return Err(Error::Parse("chain file must end with a `phi` column".into()));
        }
        let mut values = Vec::new();
        let mut phi = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {}: `{field}`: {e}", line + 1)))?;
                if j < p {
                    values.push(v);
                } else {
                    phi.push(v);
                }
            }
        }
        if phi.is_empty() {
            return Err(Error::Parse("chain file has no rows".into()));
        }
        Ok(Chain {
            samples: DMatrix::from_row_slice(phi.len(), p, &values),
            phi_values: phi,
            step_size: 0.0,
            n_divergences: 0,
            warmup: 0,
            mean_accept: 0.0,
            mean_leapfrog: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutocorrReport {
    pub passed: bool,
    pub max_autocorr: f64,
    pub worst_lag: usize,
    pub lag_lo: usize,
    pub lag_hi: usize,
    pub threshold: f64,
}

/// Passes iff the largest autocorrelation of `series` over lags
/// `lag_lo..=lag_hi` is below `threshold`.
pub fn autocorr_gate(series: &[f64], lag_lo: usize, lag_hi: usize, threshold: f64) -> Result<AutocorrReport> {
    if lag_lo > lag_hi {
        return Err(Error::InvalidArgument(format!("lag window [{lag_lo}, {lag_hi}] is empty")));
    }
    if series.len() <= 2 * lag_hi {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is too short for lag {lag_hi}",
            series.len()
        )));
    }
    if stats::variance(series) == 0.0 {
        return Err(Error::InvalidArgument("series is constant; autocorrelation undefined".into()));
    }
    let (mut worst, mut worst_lag) = (f64::NEG_INFINITY, lag_lo);
    for lag in lag_lo..=lag_hi {
        let a = stats::autocorrelation(series, lag);
        if a > worst {
            worst = a;
            worst_lag = lag;
        }
    }
    Ok(AutocorrReport { passed: worst < threshold, max_autocorr: worst, worst_lag, lag_lo, lag_hi, threshold })
}

/// Gate with the default window `30..=100` and threshold 0.05.
pub fn default_autocorr_gate(series: &[f64]) -> Result<AutocorrReport> {
    autocorr_gate(series, GATE_LAG_LO, GATE_LAG_HI, GATE_THRESHOLD)
}

/// Largest normalized weight and effective sample size of `exp(log_w)`.
pub fn weight_diagnostics(log_w: &[f64]) -> (f64, f64) {
    let lse = stats::log_sum_exp(log_w);
    let w: Vec<f64> = log_w.iter().map(|l| (l - lse).exp()).collect();
    let max = w.iter().copied().fold(0.0, f64::max);
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    (max, ess)
}

fn weight_warnings(log_w: &[f64], what: &str) -> Vec<String> {
    let (max, ess) = weight_diagnostics(log_w);
    let mut out = Vec::new();
    if max > MAX_WEIGHT_FRACTION {
        out.push(format!("{what}: largest importance weight carries {max:.3} of the total"));
    }
    if ess < 100.0 {
        out.push(format!("{what}: effective sample size {ess:.1} < 100"));
    }
    out
}

/// `KL(g, f) = E_g[δ] + log E_g[e^{-δ}]` from standard normal draws only.
pub fn kl_direct(st: &StandardizedTarget, s: usize, stream: &RngStream) -> Result<KlEstimate> {
    if s < MIN_DIRECT_SAMPLES {
        return Err(Error::InvalidArgument(format!("kl_direct needs at least {MIN_DIRECT_SAMPLES} samples, got {s}")));
    }
    let d = delta_draws(st, s, stream)?;
    let stat = |b: &[f64]| {
        let neg: Vec<f64> = b.iter().map(|x| -x).collect();
        stats::mean(b) + stats::log_mean_exp(&neg)
    };
    let raw = stat(&d);
    let se = stats::batch_means_se(&d, DEFAULT_BATCHES, stat);
    let neg: Vec<f64> = d.iter().map(|x| -x).collect();
    let mut est = KlEstimate::new(raw.max(0.0), se, s, Estimator::KlDirect);
    est.warnings = weight_warnings(&neg, "kl_direct");
    Ok(est)
}

/// `δ` at each chain sample, from the stored `φ_f` values.
pub fn chain_deltas(st: &StandardizedTarget, chain: &Chain) -> Result<Vec<f64>> {
    if chain.dim() != st.dim() {
        return Err(Error::DimensionMismatch(format!(
            "chain has dimension {}, target {}",
            chain.dim(),
            st.dim()
        )));
    }
    let lap = st.laplace();
    let d: Vec<f64> = (0..chain.len())
        .map(|i| {
            let theta: Vec<f64> = chain.samples.row(i).iter().copied().collect();
            chain.phi_values[i] - lap.phi_at_mode - 0.5 * lap.standard_sq_norm(&theta)
        })
        .collect();
    if let Some(i) = d.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("δ at chain sample {i}")));
    }
    Ok(d)
}

/// `KL(g, f) = E_g[δ] - log E_f[e^{δ}]`, the second expectation over the
/// chain. The chain must pass the default autocorrelation gate.
pub fn kl_via_chain(st: &StandardizedTarget, chain: &Chain, s_g: usize, stream: &RngStream) -> Result<KlEstimate> {
    let gate = default_autocorr_gate(&chain.phi_values)?;
    if !gate.passed {
        return Err(Error::ChainRejected(format!(
            "autocorrelation {:.4} at lag {} exceeds {}",
            gate.max_autocorr, gate.worst_lag, gate.threshold
        )));
    }
    if s_g < MIN_DIRECT_SAMPLES {
        return Err(Error::InvalidArgument(format!("kl_via_chain needs at least {MIN_DIRECT_SAMPLES} g-draws")));
    }
    let dc = chain_deltas(st, chain)?;
    let dg = delta_draws(st, s_g, stream)?;
    let mean_g = stats::mean(&dg);
    let se_g = stats::std_dev(&dg) / (s_g as f64).sqrt();
    let lme_f = stats::log_mean_exp(&dc);
    let se_f = stats::batch_means_se(&dc, DEFAULT_BATCHES, stats::log_mean_exp);
    let raw = mean_g - lme_f;

    let mut est = KlEstimate::new(raw.max(0.0), se_g.hypot(se_f), chain.len() + s_g, Estimator::KlViaChain);
    est.warnings = weight_warnings(&dc, "kl_via_chain");
    if raw < 0.0 {
        est.warnings.push(format!("raw estimate {raw:e} was negative; clamped to 0"));
    }
    Ok(est)
}

/// Both reference routes from one chain.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceReport {
    pub gate: AutocorrReport,
    pub direct: KlEstimate,
    pub via_chain: Option<KlEstimate>,
    pub chain_len: usize,
    pub step_size: f64,
    pub n_divergences: usize,
    pub mean_accept: f64,
}

/// Samples the target, gates the chain and evaluates both KL routes. A chain
/// failing the gate is reported with `via_chain = None`.
pub fn reference_kl(
    st: &StandardizedTarget,
    config: &NutsConfig,
    s_g: usize,
    stream: &RngStream,
) -> Result<(ReferenceReport, Chain)> {
    let chain = nuts_sample(st, &st.laplace().mu, config, &stream.child(0))?;
    let gate = default_autocorr_gate(&chain.phi_values)?;
    let direct = kl_direct(st, s_g, &stream.child(1))?;
    let via_chain = if gate.passed { Some(kl_via_chain(st, &chain, s_g, &stream.child(2))?) } else { None };
    let report = ReferenceReport {
        gate,
        direct,
        via_chain,
        chain_len: chain.len(),
        step_size: chain.step_size,
        n_divergences: chain.n_divergences,
        mean_accept: chain.mean_accept,
    };
    Ok((report, chain))
}
