//! Sweeps over synthetic logistic-regression posteriors, the result CSV,
//! SVG plots and the mixture counterexample.
//!
//! Cells run in parallel. Their rows go through one writer that emits them
//! in grid order, so the file never depends on the thread schedule.

mod demo;
mod plot;

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use demo::{demo_mixture, demo_mixture_with, MixtureReport, LOG_CONCAVITY_WARNING};
pub use plot::{loglog_slope, plot, plot_rows, reference_kl_by_cell, PlotKind};

use crate::diagnostics::{
    estimate_klvar, estimate_lsi, estimate_var_elbo, KlEstimate, Estimator, DEFAULT_SAMPLES,
    DEFAULT_VAR_ELBO_DIRECTIONS, DEFAULT_VAR_ELBO_RADII,
};
use crate::geometry::RngStream;
use crate::laplace::{fit_standardized, StandardizedTarget};
use crate::reference::{kl_direct, reference_kl, NutsConfig};
use crate::targets::{generate_logistic_data, logistic_target};
use crate::taylor::{compute_tensors_with_limit, taylor_approximations, TaylorApprox, TensorMethod, DEFAULT_MAX_DIM};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 10] = ["model", "n", "p", "seed", "estimator", "value", "std_error", "runtime_ms", "gate", "notes"];

/// The only model the sweep generates data for.
pub const LOGISTIC_MODEL: &str = "logistic";

/// What a sweep can run. Taylor and reference entries expand into several
/// result rows (see [`SweepEstimator::row_names`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepEstimator {
    Klvar,
    Lsi,
    VarElbo,
    KlvarPlusLsi,
    VarelboPlusLsi,
    Taylor3,
    Taylor4,
    ReferenceDirect,
    ReferenceChain,
}

impl SweepEstimator {
    pub const ALL: [SweepEstimator; 9] = [
        SweepEstimator::Klvar,
        SweepEstimator::Lsi,
        SweepEstimator::VarElbo,
        SweepEstimator::KlvarPlusLsi,
        SweepEstimator::VarelboPlusLsi,
        SweepEstimator::Taylor3,
        SweepEstimator::Taylor4,
        SweepEstimator::ReferenceDirect,
        SweepEstimator::ReferenceChain,
    ];

    pub fn row_names(&self) -> &'static [&'static str] {
        match self {
            SweepEstimator::Klvar => &["klvar"],
            SweepEstimator::Lsi => &["lsi"],
            SweepEstimator::VarElbo => &["var_elbo"],
            SweepEstimator::KlvarPlusLsi => &["klvar_plus_lsi"],
            SweepEstimator::VarelboPlusLsi => &["varelbo_plus_lsi"],
            SweepEstimator::Taylor3 => &["taylor3_klvar", "taylor3_klvar_plus_lsi"],
            SweepEstimator::Taylor4 => &["taylor4_klvar", "taylor4_klvar_plus_lsi"],
            SweepEstimator::ReferenceDirect => &["kl_direct"],
            SweepEstimator::ReferenceChain => &["kl_via_chain"],
        }
    }
}

/// Sweep settings. Read from TOML with [`ExperimentConfig::from_toml_str`];
/// missing keys take the desk defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    /// Sample sizes; crossed with `p`.
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Draws for the KL-variance and LSI estimators.
    pub diag_samples: usize,
    pub var_elbo_directions: usize,
    pub var_elbo_radii: usize,
    /// Post-warmup NUTS iterations.
    pub chain_samples: usize,
    pub chain_warmup: usize,
    /// Gaussian draws used by both reference KL routes.
    pub reference_samples: usize,
    pub estimators: Vec<SweepEstimator>,
    pub taylor_max_dim: usize,
    /// When false, `runtime_ms` is left empty so reruns give identical files.
    pub record_timing: bool,
    pub output: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: LOGISTIC_MODEL.into(),
            n: vec![10, 30, 100, 300, 1000, 3000],
            p: vec![5, 10, 30],
            seeds: vec![1, 2, 3, 4, 5],
            diag_samples: DEFAULT_SAMPLES,
            var_elbo_directions: DEFAULT_VAR_ELBO_DIRECTIONS,
            var_elbo_radii: DEFAULT_VAR_ELBO_RADII,
            chain_samples: 50_000,
            chain_warmup: 10_000,
            reference_samples: DEFAULT_SAMPLES,
            estimators: SweepEstimator::ALL.to_vec(),
            taylor_max_dim: DEFAULT_MAX_DIM,
            record_timing: true,
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// The large grid: `p` up to 1000, `n` up to 5600.
    pub fn full() -> Self {
        Self {
            n: vec![10, 30, 100, 300, 1000, 3000, 5600],
            p: vec![10, 30, 100, 300, 1000],
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model != LOGISTIC_MODEL {
            return Err(Error::InvalidArgument(format!("sweeps support model = \"logistic\", got {:?}", self.model)));
        }
        if self.n.is_empty() || self.p.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("n, p and seeds must be non-empty".into()));
        }
        if self.n.contains(&0) || self.p.contains(&0) {
            return Err(Error::InvalidArgument("n and p entries must be positive".into()));
        }
        for (name, v) in [("n", self.n.iter().map(|&x| x as u64).collect::<Vec<_>>()), ("p", self.p.iter().map(|&x| x as u64).collect()), ("seeds", self.seeds.clone())] {
            let set: HashSet<_> = v.iter().collect();
            if set.len() != v.len() {
                return Err(Error::InvalidArgument(format!("duplicate entries in {name}")));
            }
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators selected".into()));
        }
        if self.chain_samples == 0 && self.estimators.contains(&SweepEstimator::ReferenceChain) {
            return Err(Error::InvalidArgument("reference_chain needs chain_samples > 0".into()));
        }
        Ok(())
    }

    /// Cells in file order: `p`, then `n`, then seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &p in &self.p {
            for &n in &self.n {
                for &seed in &self.seeds {
                    out.push(Cell { n, p, seed });
                }
            }
        }
        out
    }

    /// Result-row estimator names in the order they are written.
    pub fn row_names(&self) -> Vec<&'static str> {
        let mut sel = self.estimators.clone();
        sel.sort();
        sel.dedup();
        sel.iter().flat_map(|e| e.row_names().iter().copied()).collect()
    }

    fn nuts_config(&self) -> NutsConfig {
        NutsConfig { n_samples: self.chain_samples, n_warmup: self.chain_warmup, ..NutsConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl Cell {
    /// Stream for every random draw in the cell.
    pub fn stream(&self) -> RngStream {
        RngStream::keyed(self.seed, &[self.n as u64, self.p as u64])
    }
}

/// One line of the result CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub estimator: String,
    pub value: f64,
    /// Absent for closed-form values.
    pub std_error: Option<f64>,
    pub runtime_ms: Option<u64>,
    /// Autocorrelation gate of the cell's chain, on reference rows.
    pub gate: Option<bool>,
    pub notes: String,
}

impl ResultRow {
    pub fn key(&self) -> (usize, usize, u64, String) {
        (self.n, self.p, self.seed, self.estimator.clone())
    }

    fn failed(cell: Cell, estimator: &str, note: String) -> Self {
        Self {
            model: LOGISTIC_MODEL.into(),
            n: cell.n,
            p: cell.p,
            seed: cell.seed,
            estimator: estimator.into(),
            value: f64::NAN,
            std_error: None,
            runtime_ms: None,
            gate: None,
            notes: note,
        }
    }

    fn record(&self) -> [String; 10] {
        [
            self.model.clone(),
            self.n.to_string(),
            self.p.to_string(),
            self.seed.to_string(),
            self.estimator.clone(),
            format_number(self.value),
            self.std_error.map(format_number).unwrap_or_default(),
            self.runtime_ms.map(|t| t.to_string()).unwrap_or_default(),
            self.gate.map(|g| g.to_string()).unwrap_or_default(),
            self.notes.clone(),
        ]
    }

    fn from_record(rec: &csv::StringRecord, line: usize) -> Result<Self> {
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse(format!("line {line}: expected {} fields, got {}", CSV_HEADER.len(), rec.len())));
        }
        let err = |what: &str, v: &str| Error::Parse(format!("line {line}: bad {what} {v:?}"));
        let opt_f64 = |i: usize, what: &str| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rec[i].parse().map(Some).map_err(|_| err(what, &rec[i]))
            }
        };
        Ok(Self {
            model: rec[0].to_string(),
            n: rec[1].parse().map_err(|_| err("n", &rec[1]))?,
            p: rec[2].parse().map_err(|_| err("p", &rec[2]))?,
            seed: rec[3].parse().map_err(|_| err("seed", &rec[3]))?,
            estimator: rec[4].to_string(),
            value: rec[5].parse().map_err(|_| err("value", &rec[5]))?,
            std_error: opt_f64(6, "std_error")?,
            runtime_ms: if rec[7].is_empty() { None } else { Some(rec[7].parse().map_err(|_| err("runtime_ms", &rec[7]))?) },
            gate: match &rec[8] {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                other => return Err(err("gate", other)),
            },
            notes: rec[9].to_string(),
        })
    }
}

/// 17 significant digits; non-finite values as `NaN`, `inf`, `-inf`.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn write_header<W: Write>(w: &mut csv::Writer<W>) -> Result<()> {
    w.write_record(CSV_HEADER)?;
    Ok(())
}

pub fn write_rows<W: Write>(w: &mut csv::Writer<W>, rows: &[ResultRow]) -> Result<()> {
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| ResultRow::from_record(&rec?, i + 2))
        .collect()
}

pub fn read_results_path<P: AsRef<Path>>(path: P) -> Result<Vec<ResultRow>> {
    read_results(File::open(path)?)
}

/// Counts reported by [`run_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub cells_skipped: usize,
    pub rows_written: usize,
    pub failed_rows: usize,
}

struct CellRunner<'a> {
    config: &'a ExperimentConfig,
    cell: Cell,
    wanted: HashSet<&'static str>,
    rows: Vec<ResultRow>,
}

impl CellRunner<'_> {
    fn push(&mut self, name: &str, est: Result<(f64, Option<f64>, Vec<String>)>, took: Duration, gate: Option<bool>) {
        if !self.wanted.contains(name) {
            return;
        }
        let runtime_ms = self.config.record_timing.then_some(took.as_millis() as u64);
        let row = match est {
            Ok((value, std_error, warnings)) => ResultRow {
                model: LOGISTIC_MODEL.into(),
                n: self.cell.n,
                p: self.cell.p,
                seed: self.cell.seed,
                estimator: name.into(),
                value,
                std_error,
                runtime_ms,
                gate,
                notes: warnings.join("; "),
            },
            Err(e) => ResultRow { runtime_ms, gate, ..ResultRow::failed(self.cell, name, format!("error: {e}")) },
        };
        self.rows.push(row);
    }

    fn wants_any(&self, names: &[&str]) -> bool {
        names.iter().any(|n| self.wanted.contains(n))
    }
}

fn mc(e: &Result<KlEstimate>) -> Result<(f64, Option<f64>, Vec<String>)> {
    match e {
        Ok(k) => Ok((k.value, Some(k.std_error), k.warnings.clone())),
        Err(err) => Err(Error::Precondition(err.to_string())),
    }
}

fn combined(a: &Result<KlEstimate>, b: &Result<KlEstimate>, est: Estimator) -> Result<(f64, Option<f64>, Vec<String>)> {
    match (a, b) {
        (Ok(a), Ok(b)) => mc(&Ok(KlEstimate::combine(a, b, est))),
        (Err(e), _) | (_, Err(e)) => Err(Error::Precondition(e.to_string())),
    }
}

/// Runs one cell and returns the rows named in `wanted`, in `config` order.
pub fn run_cell(config: &ExperimentConfig, cell: Cell, wanted: &HashSet<&'static str>) -> Vec<ResultRow> {
    let mut runner = CellRunner { config, cell, wanted: wanted.clone(), rows: Vec::new() };
    let setup = Instant::now();
    let st = generate_logistic_data(cell.n, cell.p, cell.seed)
        .and_then(|data| fit_standardized(Arc::new(logistic_target(data)), &vec![0.0; cell.p]));
    let st = match st {
        Ok(st) => st,
        Err(e) => {
            let note = format!("error: fit failed: {e}");
            for name in config.row_names() {
                runner.push(name, Err(Error::Precondition(note.clone())), setup.elapsed(), None);
            }
            return order_rows(config, runner.rows);
        }
    };
    run_estimators(&mut runner, &st);
    order_rows(config, runner.rows)
}

fn run_estimators(r: &mut CellRunner<'_>, st: &StandardizedTarget) {
    let cfg = r.config;
    let stream = r.cell.stream();

    let timed = |f: &dyn Fn() -> Result<KlEstimate>| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed())
    };
    let klvar = r
        .wants_any(&["klvar", "klvar_plus_lsi"])
        .then(|| timed(&|| estimate_klvar(st, cfg.diag_samples, &stream.child(0))));
    let lsi = r
        .wants_any(&["lsi", "klvar_plus_lsi", "varelbo_plus_lsi"])
        .then(|| timed(&|| estimate_lsi(st, cfg.diag_samples, &stream.child(1))));
    let var_elbo = r
        .wants_any(&["var_elbo", "varelbo_plus_lsi"])
        .then(|| timed(&|| estimate_var_elbo(st, cfg.var_elbo_directions, cfg.var_elbo_radii, &stream.child(2))));

    if let Some((k, d)) = &klvar {
        r.push("klvar", mc(k), *d, None);
    }
    if let Some((l, d)) = &lsi {
        r.push("lsi", mc(l), *d, None);
    }
    if let Some((v, d)) = &var_elbo {
        r.push("var_elbo", mc(v), *d, None);
    }
    if let (Some((k, dk)), Some((l, dl))) = (&klvar, &lsi) {
        r.push("klvar_plus_lsi", combined(k, l, Estimator::KlvarPlusLsi), *dk + *dl, None);
    }
    if let (Some((v, dv)), Some((l, dl))) = (&var_elbo, &lsi) {
        r.push("varelbo_plus_lsi", combined(v, l, Estimator::VarelboPlusLsi), *dv + *dl, None);
    }

    let taylor_rows = ["taylor3_klvar", "taylor3_klvar_plus_lsi", "taylor4_klvar", "taylor4_klvar_plus_lsi"];
    if r.wants_any(&taylor_rows) {
        let t = Instant::now();
        if st.dim() > cfg.taylor_max_dim {
            let note = format!("skipped: p = {} exceeds taylor_max_dim = {}", st.dim(), cfg.taylor_max_dim);
            for name in taylor_rows {
                if r.wanted.contains(name) {
                    let mut row = ResultRow::failed(r.cell, name, note.clone());
                    row.runtime_ms = cfg.record_timing.then_some(0);
                    r.rows.push(row);
                }
            }
        } else {
            let approx = compute_tensors_with_limit(st, TensorMethod::Analytic, cfg.taylor_max_dim)
                .and_then(|(t3, t4)| taylor_approximations(&t3, &t4));
            let vals: [fn(&TaylorApprox) -> f64; 4] =
                [|a| a.klvar3, TaylorApprox::klvar3_plus_lsi, |a| a.klvar4, TaylorApprox::klvar4_plus_lsi];
            for (name, f) in taylor_rows.iter().zip(vals.iter()) {
                let v = match &approx {
                    Ok(a) => Ok((f(a), None, Vec::new())),
                    Err(e) => Err(Error::Precondition(e.to_string())),
                };
                r.push(name, v, t.elapsed(), None);
            }
        }
    }

    let want_chain = r.wanted.contains("kl_via_chain");
    let want_direct = r.wanted.contains("kl_direct");
    let ref_stream = stream.child(3);
    if want_chain {
        let t = Instant::now();
        match reference_kl(st, &cfg.nuts_config(), cfg.reference_samples, &ref_stream) {
            Ok((rep, _chain)) => {
                let gate = Some(rep.gate.passed);
                let mut direct_warn = rep.direct.warnings.clone();
                if rep.n_divergences > 0 {
                    direct_warn.push(format!("{} divergent transitions", rep.n_divergences));
                }
                r.push("kl_direct", Ok((rep.direct.value, Some(rep.direct.std_error), direct_warn)), t.elapsed(), gate);
                let via = match rep.via_chain {
                    Some(v) => Ok((v.value, Some(v.std_error), v.warnings)),
                    None => Err(Error::ChainRejected(format!(
                        "max autocorrelation {:.4} at lag {} exceeds {}",
                        rep.gate.max_autocorr, rep.gate.worst_lag, rep.gate.threshold
                    ))),
                };
                r.push("kl_via_chain", via, t.elapsed(), gate);
            }
            Err(e) => {
                let msg = e.to_string();
                r.push("kl_via_chain", Err(Error::Sampler(msg)), t.elapsed(), None);
                if want_direct {
                    let t = Instant::now();
                    let d = kl_direct(st, cfg.reference_samples, &ref_stream.child(1));
                    r.push("kl_direct", mc(&d), t.elapsed(), None);
                }
            }
        }
    } else if want_direct {
        let t = Instant::now();
        // Same stream as inside `reference_kl`, so the value does not depend
        // on whether the chain runs.
        let d = kl_direct(st, cfg.reference_samples, &ref_stream.child(1));
        r.push("kl_direct", mc(&d), t.elapsed(), None);
    }
}

fn order_rows(config: &ExperimentConfig, rows: Vec<ResultRow>) -> Vec<ResultRow> {
    let mut by_name: BTreeMap<String, ResultRow> = rows.into_iter().map(|r| (r.estimator.clone(), r)).collect();
    config.row_names().iter().filter_map(|n| by_name.remove(*n)).collect()
}

/// Runs every cell of `config` and appends the rows to `out`.
///
/// Rows already present in `out` (same `n, p, seed, estimator`) are kept and
/// not recomputed. Failures become rows with a `NaN` value and an `error:`
/// note; only I/O problems abort the sweep.
pub fn run_sweep<P: AsRef<Path>>(config: &ExperimentConfig, out: P) -> Result<SweepSummary> {
    run_sweep_with_progress(config, out, |_, _| {})
}

/// [`run_sweep`] calling `progress(done, total)` after each cell is written.
pub fn run_sweep_with_progress<P, F>(config: &ExperimentConfig, out: P, mut progress: F) -> Result<SweepSummary>
where
    P: AsRef<Path>,
    F: FnMut(usize, usize),
{
    config.validate()?;
    let out = out.as_ref();
    let existing = if out.exists() && std::fs::metadata(out)?.len() > 0 {
        read_results_path(out)?
    } else {
        Vec::new()
    };
    let done: HashSet<_> = existing.iter().map(|r| r.key()).collect();
    let names = config.row_names();

    let mut summary = SweepSummary::default();
    let mut todo: Vec<(Cell, HashSet<&'static str>)> = Vec::new();
    for cell in config.cells() {
        summary.cells += 1;
        let wanted: HashSet<&'static str> = names
            .iter()
            .copied()
            .filter(|n| !done.contains(&(cell.n, cell.p, cell.seed, n.to_string())))
            .collect();
        if wanted.is_empty() {
            summary.cells_skipped += 1;
        } else {
            todo.push((cell, wanted));
        }
    }
    if todo.is_empty() {
        return Ok(summary);
    }

    let file = OpenOptions::new().create(true).append(true).open(out)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if existing.is_empty() {
        write_header(&mut writer)?;
        writer.flush()?;
    }

    let total = todo.len();
    let (tx, rx) = mpsc::channel::<(usize, Vec<ResultRow>)>();
    let write_result = std::thread::scope(|scope| {
        let todo = &todo;
        scope.spawn(move || {
            todo.par_iter().enumerate().for_each_with(tx, |tx, (i, (cell, wanted))| {
                let rows = run_cell(config, *cell, wanted);
                // The receiver only hangs up after an I/O error.
                let _ = tx.send((i, rows));
            });
        });
        let mut pending: BTreeMap<usize, Vec<ResultRow>> = BTreeMap::new();
        let mut next = 0;
        for (i, rows) in rx {
            pending.insert(i, rows);
            while let Some(rows) = pending.remove(&next) {
                write_rows(&mut writer, &rows)?;
                summary.rows_written += rows.len();
                summary.failed_rows += rows.iter().filter(|r| !r.value.is_finite()).count();
                next += 1;
                progress(next, total);
            }
        }
        Ok::<(), Error>(())
    });
    write_result?;
    Ok(summary)
}
