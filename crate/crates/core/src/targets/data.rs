use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::RngStream;
use crate::{Error, Result};

/// Predictor standard deviation of the synthetic design.
pub const SYNTHETIC_X_SD: f64 = 1.5;

/// Predictors, ±1 labels and the standard deviation of the isotropic Gaussian
/// prior on the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticDataset {
    /// `n × p` design matrix.
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub prior_sd: f64,
}

impl LogisticDataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, prior_sd: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows of predictors but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} is not ±1")));
        }
        if !(prior_sd > 0.0 && prior_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior_sd must be positive, got {prior_sd}")));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one predictor".into()));
        }
        Ok(Self { x, y, prior_sd })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Writes `y,x1,...,xp` with full round-trip precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.p()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{}", self.y[i] as i64)];
            rec.extend((0..self.p()).map(|j| format!("{:e}", self.x[(i, j)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `y,x1,...,xp` layout; the prior is not part of the file.
    pub fn read_csv<R: Read>(reader: R, prior_sd: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("y") {
            return Err(Error::Parse("first column must be `y`".into()));
        }
        let p = headers.len() - 1;
        for (j, h) in headers.iter().skip(1).enumerate() {
            if h != format!("x{}", j + 1) {
                return Err(Error::Parse(format!("unexpected column `{h}`, expected `x{}`", j + 1)));
            }
        }
        let mut y = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != p + 1 {
                return Err(Error::Parse(format!("row {} has {} fields", line + 1, rec.len())));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: `{s}`: {e}", line + 1)))
            };
            y.push(parse(&rec[0])?);
            for j in 0..p {
                values.push(parse(&rec[j + 1])?);
            }
        }
        let x = DMatrix::from_row_slice(y.len(), p, &values);
        Self::new(x, y, prior_sd)
    }
}

/// Synthetic logistic data: IID `N(0, 1.5²)` predictors, labels drawn from the
/// logistic model with `θ₀ = (1/√p, …, 1/√p)`, prior standard deviation `1/√p`.
pub fn generate_logistic_data(n: usize, p: usize, seed: u64) -> Result<LogisticDataset> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument(format!("need n >= 1 and p >= 1, got n={n}, p={p}")));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    let normal = Normal::new(0.0, SYNTHETIC_X_SD).expect("valid sd");
    let coef = 1.0 / (p as f64).sqrt();
    let mut x = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut eta = 0.0;
        for j in 0..p {
            let v = normal.sample(&mut rng);
            x[(i, j)] = v;
            eta += coef * v;
        }
        let prob = 1.0 / (1.0 + (-eta).exp());
        y.push(if rng.random::<f64>() < prob { 1.0 } else { -1.0 });
    }
    LogisticDataset::new(x, y, coef)
}
