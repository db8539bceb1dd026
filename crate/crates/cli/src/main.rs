mod model;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use laplace_audit::bounds::{
    coverage_bounds, delta3_upper_logistic, pinsker_tv_bound, psi_min_second, radial_kl_bound,
};
use laplace_audit::diagnostics::{
    estimate_klvar, estimate_lsi, estimate_var_elbo, Estimator, KlEstimate, DEFAULT_SAMPLES,
};
use laplace_audit::experiments::{
    demo_mixture_with, plot, run_sweep_with_progress, ExperimentConfig, PlotKind,
};
use laplace_audit::geometry::RngStream;
use laplace_audit::laplace::{fit, standardize, StandardizedTarget};
use laplace_audit::reference::{kl_quadrature_1d, reference_kl, NutsConfig};
use laplace_audit::targets::generate_logistic_data;
use laplace_audit::taylor::{compute_tensors, taylor_approximations, TensorMethod};
use serde_json::json;

use model::{Model, ModelSpec};

/// Measures how far a log-concave density is from its Laplace approximation.
#[derive(Parser)]
#[command(name = "laplace-audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the mode and write the Laplace approximation as JSON.
    Fit {
        #[arg(long)]
        model: ModelSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampling estimates of KL(g, f).
    Diagnose {
        #[arg(long)]
        model: ModelSpec,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directions and radii per direction, e.g. `2000,100`.
        #[arg(long, value_name = "SE,SR")]
        var_elbo: Option<String>,
        /// Add the closed-form third- and fourth-order approximations.
        #[arg(long)]
        taylor: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Δ₃, minimum radial curvature, radial KL bound, Pinsker and coverage.
    Bounds {
        #[arg(long)]
        model: ModelSpec,
        /// Δ₃ for non-logistic models.
        #[arg(long)]
        delta3: Option<f64>,
        /// KL used for Pinsker and coverage; estimated by ½KLvar + LSI when absent.
        #[arg(long)]
        kl: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Reference KL from a NUTS chain and direct importance sampling.
    ReferenceKl {
        #[arg(long)]
        model: ModelSpec,
        /// Post-warmup iterations.
        #[arg(long, default_value_t = 50_000)]
        chain_samples: usize,
        #[arg(long, default_value_t = 10_000)]
        warmup: usize,
        /// Gaussian draws for each KL route.
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write the chain as `theta1..thetap,phi`.
        #[arg(long)]
        chain_csv: Option<PathBuf>,
    },
    /// Run a sweep over synthetic logistic posteriors.
    Experiment {
        /// TOML file; desk defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the large grid (p up to 1000, n up to 5600).
        #[arg(long)]
        full: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Render a result CSV as SVG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// KL variance against quadrature KL on a non-log-concave mixture.
    DemoMixture {
        #[arg(long, default_value_t = 100.0)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a synthetic logistic dataset as `y,x1..xp`.
    GenerateData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<PlotKind, String> {
    s.parse().map_err(|e: laplace_audit::Error| e.to_string())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn standardized(model: &Model) -> Result<StandardizedTarget> {
    let laplace = fit(model.target.as_ref(), &model.init).context("fitting the Laplace approximation")?;
    Ok(standardize(Arc::clone(&model.target), laplace))
}

fn print_estimate(e: &KlEstimate) {
    println!("{:<20} {:>14.6e} {:>12.3e} {:>10}", e.estimator.as_str(), e.value, e.std_error, e.n_samples);
    for w in &e.warnings {
        println!("    warning: {w}");
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(',').context("expected two comma-separated counts, e.g. 2000,100")?;
    Ok((a.trim().parse().context("first count")?, b.trim().parse().context("second count")?))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Fit { model, out } => {
            let m = model.build()?;
            let laplace = fit(m.target.as_ref(), &m.init).context("fitting the Laplace approximation")?;
            write_json(&out, &laplace.to_json())?;
            println!("mode found (gradient norm {:.3e}); wrote {}", laplace.grad_norm, out.display());
        }

        Command::Diagnose { model, samples, seed, var_elbo, taylor, json } => {
            let st = standardized(&model.build()?)?;
            let stream = RngStream::new(seed, 0);
            let klvar = estimate_klvar(&st, samples, &stream.child(0))?;
            let lsi = estimate_lsi(&st, samples, &stream.child(1))?;
            let mut estimates = vec![klvar.clone(), lsi.clone(), KlEstimate::combine(&klvar, &lsi, Estimator::KlvarPlusLsi)];
            if let Some(pair) = var_elbo {
                let (se, sr) = parse_pair(&pair)?;
                let ve = estimate_var_elbo(&st, se, sr, &stream.child(2))?;
                estimates.push(KlEstimate::combine(&ve, &lsi, Estimator::VarelboPlusLsi));
                estimates.insert(2, ve);
            }
            println!("{:<20} {:>14} {:>12} {:>10}", "estimator", "value", "std_error", "samples");
            estimates.iter().for_each(print_estimate);
            let mut taylor_json = serde_json::Value::Null;
            if taylor {
                let method =
                    if st.base().analytic_higher_derivs() { TensorMethod::Analytic } else { TensorMethod::FiniteDiff };
                let (t3, t4) = compute_tensors(&st, method)?;
                let t = taylor_approximations(&t3, &t4)?;
                for (name, v) in [
                    ("taylor3_klvar", t.klvar3),
                    ("taylor3_klvar_plus_lsi", t.klvar3_plus_lsi()),
                    ("taylor4_klvar", t.klvar4),
                    ("taylor4_klvar_plus_lsi", t.klvar4_plus_lsi()),
                ] {
                    println!("{name:<20} {v:>14.6e} {:>12} {:>10}", "-", "-");
                }
                taylor_json = json!({
                    "method": format!("{method:?}").to_lowercase(),
                    "taylor3_klvar": t.klvar3, "taylor3_lsi": t.lsi3,
                    "taylor4_klvar": t.klvar4, "taylor4_lsi": t.lsi4,
                });
            }
            if let Some(path) = json {
                write_json(&path, &json!({ "samples": samples, "seed": seed, "estimates": estimates, "taylor": taylor_json }))?;
            }
        }

        Command::Bounds { model, delta3, kl, samples, seed, json } => {
            let m = model.build()?;
            let st = standardized(&m)?;
            let d3 = match (delta3, &m.data) {
                (Some(d), _) => d,
                (None, Some(data)) => delta3_upper_logistic(data, st.laplace()),
                (None, None) => bail!("Δ₃ is only computed for logistic models; pass --delta3"),
            };
            let cb = psi_min_second(st.dim(), d3)?;
            println!("Δ₃ upper bound        {d3:.6e}");
            println!("ψ″_min                {:.6e} ({:?})", cb.psi_min_second, cb.branch);
            let stream = RngStream::new(seed, 0);
            let radial = if cb.psi_min_second > 0.0 { Some(radial_kl_bound(&st, &cb, samples, &stream.child(1))?) } else { None };
            match &radial {
                Some(r) => println!("radial KL bound       {:.6e} ± {:.2e}", r.value, r.std_error),
                None => println!("radial KL bound       vacuous (curvature bound not positive)"),
            }
            let (kl_value, kl_source) = match kl {
                Some(k) => (k, "given"),
                None => {
                    let a = estimate_klvar(&st, samples, &stream.child(0))?;
                    let b = estimate_lsi(&st, samples, &stream.child(1))?;
                    (KlEstimate::combine(&a, &b, Estimator::KlvarPlusLsi).value.max(0.0), "½KLvar + LSI estimate")
                }
            };
            let tv = pinsker_tv_bound(kl_value)?;
            println!("KL used               {kl_value:.6e} ({kl_source})");
            println!("Pinsker TV bound      {tv:.6e}");
            println!("coverage  p_g      p_f low      p_f high");
            let mut cov = Vec::new();
            for p_g in [0.5, 0.9, 0.95, 0.99] {
                let (lo, hi) = coverage_bounds(p_g, kl_value)?;
                println!("          {p_g:<8} {lo:<12.6} {hi:<12.6}");
                cov.push(json!({ "p_g": p_g, "p_f_lo": lo, "p_f_hi": hi }));
            }
            if let Some(path) = json {
                write_json(
                    &path,
                    &json!({ "delta3": d3, "curvature": cb, "radial_kl_bound": radial, "kl": kl_value,
                             "kl_source": kl_source, "pinsker_tv": tv, "coverage": cov }),
                )?;
            }
        }

        Command::ReferenceKl { model, chain_samples, warmup, samples, seed, json, chain_csv } => {
            let st = standardized(&model.build()?)?;
            let config = NutsConfig { n_samples: chain_samples, n_warmup: warmup, ..NutsConfig::for_dim(st.dim()) };
            let (report, chain) = reference_kl(&st, &config, samples, &RngStream::new(seed, 0))?;
            println!(
                "chain: {} draws, step size {:.4}, accept {:.3}, {} divergences",
                report.chain_len, report.step_size, report.mean_accept, report.n_divergences
            );
            println!(
                "gate:  max autocorrelation {:.4} at lag {} ({})",
                report.gate.max_autocorr,
                report.gate.worst_lag,
                if report.gate.passed { "passed" } else { "FAILED" }
            );
            print_estimate(&report.direct);
            match &report.via_chain {
                Some(e) => print_estimate(e),
                None => println!("{:<20} rejected by the autocorrelation gate", "kl_via_chain"),
            }
            let quadrature = if st.dim() == 1 { Some(kl_quadrature_1d(&st)?) } else { None };
            if let Some(q) = quadrature {
                println!("{:<20} {q:>14.6e}", "kl_quadrature");
            }
            if let Some(path) = chain_csv {
                chain.write_csv(File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
            }
            if let Some(path) = json {
                write_json(&path, &json!({ "report": report, "kl_quadrature": quadrature }))?;
            }
        }

        Command::Experiment { config, out, full, quiet } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::from_path(&path).with_context(|| format!("reading {}", path.display()))?,
                None => ExperimentConfig::default(),
            };
            if full {
                let grid = ExperimentConfig::full();
                cfg.n = grid.n;
                cfg.p = grid.p;
            }
            let out = match (out, &cfg.output) {
                (Some(o), _) => o,
                (None, Some(o)) => PathBuf::from(o),
                (None, None) => bail!("no output file: pass --out or set `output` in the config"),
            };
            let summary = run_sweep_with_progress(&cfg, &out, |done, total| {
                if !quiet {
                    eprintln!("[{done}/{total}] cells written");
                }
            })?;
            println!(
                "{} cells ({} already complete), {} rows written, {} failed rows -> {}",
                summary.cells,
                summary.cells_skipped,
                summary.rows_written,
                summary.failed_rows,
                out.display()
            );
        }

        Command::Plot { input, kind, out } => {
            let svg = plot(&input, kind)?;
            std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
        }

        Command::DemoMixture { sigma, samples, seed, json } => {
            let report = demo_mixture_with(sigma, samples, &RngStream::new(seed, 0))?;
            println!("{report}");
            if let Some(path) = json {
                write_json(&path, &serde_json::to_value(&report)?)?;
            }
        }

        Command::GenerateData { n, p, seed, out } => {
            let data = generate_logistic_data(n, p, seed)?;
            data.write_csv(File::create(&out).with_context(|| format!("creating {}", out.display()))?)?;
            println!("wrote {n} rows with {p} predictors to {}", out.display());
        }
    }
    Ok(())
}
