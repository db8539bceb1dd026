//! `--model` strings: `kind:key=value,key=value`.
//!
//! | kind          | keys                                   |
//! |---------------|----------------------------------------|
//! | `logistic`    | `n`, `p`, `seed` (default 1), `prior_sd` |
//! | `logistic-csv`| `path`, `prior_sd`                     |
//! | `gaussian`    | `dim` (default 1), `mean` (0), `sd` (1) |
//! | `quartic`     | `eps`, `dim` (default 1)               |
//! | `mixture`     | `sigma`                                |
//!
//! `prior_sd` defaults to `1/√p`.

use std::collections::BTreeMap;
use std::fs::File;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use laplace_audit::targets::{
    gaussian_target, generate_logistic_data, logistic_target, mixture_target_1d, quartic_target, LogisticDataset,
    TargetDensity,
};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Logistic { n: usize, p: usize, seed: u64, prior_sd: Option<f64> },
    LogisticCsv { path: String, prior_sd: Option<f64> },
    Gaussian { dim: usize, mean: f64, sd: f64 },
    Quartic { eps: f64, dim: usize },
    Mixture { sigma: f64 },
}

pub struct Model {
    pub target: Arc<dyn TargetDensity>,
    /// Present for logistic models; needed by the Δ₃ bound.
    pub data: Option<LogisticDataset>,
    pub init: Vec<f64>,
}

struct Args {
    kind: String,
    kv: BTreeMap<String, String>,
}

impl Args {
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.kv.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| anyhow!("model `{}`: cannot parse {key}={v:?}", self.kind)),
        }
    }

    fn need<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| anyhow!("model `{}` needs {key}=...", self.kind))
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.kv.keys().next() {
            bail!("model `{}` has no parameter `{k}`", self.kind);
        }
        Ok(())
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| anyhow!("model parameter `{part}` is not key=value"))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                bail!("model parameter `{}` given twice", k.trim());
            }
        }
        let mut a = Args { kind: kind.to_string(), kv };
        let spec = match kind {
            "logistic" => ModelSpec::Logistic {
                n: a.need("n")?,
                p: a.need("p")?,
                seed: a.take("seed")?.unwrap_or(1),
                prior_sd: a.take("prior_sd")?,
            },
            "logistic-csv" => ModelSpec::LogisticCsv { path: a.need("path")?, prior_sd: a.take("prior_sd")? },
            "gaussian" => ModelSpec::Gaussian {
                dim: a.take("dim")?.unwrap_or(1),
                mean: a.take("mean")?.unwrap_or(0.0),
                sd: a.take("sd")?.unwrap_or(1.0),
            },
            "quartic" => ModelSpec::Quartic { eps: a.need("eps")?, dim: a.take("dim")?.unwrap_or(1) },
            "mixture" => ModelSpec::Mixture { sigma: a.need("sigma")? },
            other => bail!("unknown model kind `{other}` (expected logistic, logistic-csv, gaussian, quartic or mixture)"),
        };
        a.finish()?;
        spec.validate()?;
        Ok(spec)
    }
}

impl ModelSpec {
    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(anyhow!("{name} must be positive, got {v}"))
            }
        };
        match *self {
            ModelSpec::Logistic { n, p, prior_sd, .. } => {
                if n == 0 || p == 0 {
                    bail!("logistic model needs n >= 1 and p >= 1");
                }
                prior_sd.map_or(Ok(()), |s| positive("prior_sd", s))
            }
            ModelSpec::LogisticCsv { prior_sd, .. } => prior_sd.map_or(Ok(()), |s| positive("prior_sd", s)),
            ModelSpec::Gaussian { dim, sd, mean } => {
                if dim == 0 {
                    bail!("gaussian model needs dim >= 1");
                }
                if !mean.is_finite() {
                    bail!("mean must be finite");
                }
                positive("sd", sd)
            }
            ModelSpec::Quartic { eps, dim } => {
                if dim == 0 {
                    bail!("quartic model needs dim >= 1");
                }
                positive("eps", eps)
            }
            ModelSpec::Mixture { sigma } => {
                if !(sigma >= 1.0 && sigma.is_finite()) {
                    bail!("mixture needs sigma >= 1, got {sigma}");
                }
                Ok(())
            }
        }
    }

    pub fn build(&self) -> Result<Model> {
        let logistic = |data: LogisticDataset| {
            let p = data.p();
            Model { target: Arc::new(logistic_target(data.clone())), data: Some(data), init: vec![0.0; p] }
        };
        Ok(match self {
            ModelSpec::Logistic { n, p, seed, prior_sd } => {
                let mut data = generate_logistic_data(*n, *p, *seed)?;
                if let Some(sd) = prior_sd {
                    data = LogisticDataset::new(data.x, data.y, *sd)?;
                }
                logistic(data)
            }
            ModelSpec::LogisticCsv { path, prior_sd } => {
                let file = File::open(path).with_context(|| format!("opening dataset {path}"))?;
                let data = LogisticDataset::read_csv(file, prior_sd.unwrap_or(1.0))
                    .with_context(|| format!("reading dataset {path}"))?;
                let data = match prior_sd {
                    Some(_) => data,
                    None => {
                        let sd = 1.0 / (data.p() as f64).sqrt();
                        LogisticDataset::new(data.x, data.y, sd)?
                    }
                };
                logistic(data)
            }
            ModelSpec::Gaussian { dim, mean, sd } => {
                let precision = DMatrix::identity(*dim, *dim) / (sd * sd);
                Model {
                    target: Arc::new(gaussian_target(vec![*mean; *dim], precision)?),
                    data: None,
                    init: vec![0.0; *dim],
                }
            }
            ModelSpec::Quartic { eps, dim } => {
                Model { target: Arc::new(quartic_target(*dim, *eps)), data: None, init: vec![0.0; *dim] }
            }
            ModelSpec::Mixture { sigma } => {
                Model { target: Arc::new(mixture_target_1d(*sigma)), data: None, init: vec![0.0] }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_each_kind() {
        assert_eq!(
            "logistic:n=100,p=10,seed=7".parse::<ModelSpec>().unwrap(),
            ModelSpec::Logistic { n: 100, p: 10, seed: 7, prior_sd: None }
        );
        assert_eq!(
            "quartic:eps=0.001".parse::<ModelSpec>().unwrap(),
            ModelSpec::Quartic { eps: 1e-3, dim: 1 }
        );
        assert_eq!("gaussian".parse::<ModelSpec>().unwrap(), ModelSpec::Gaussian { dim: 1, mean: 0.0, sd: 1.0 });
        assert_eq!("mixture:sigma=100".parse::<ModelSpec>().unwrap(), ModelSpec::Mixture { sigma: 100.0 });
        assert!(matches!(
            "logistic-csv:path=a.csv,prior_sd=2".parse::<ModelSpec>().unwrap(),
            ModelSpec::LogisticCsv { prior_sd: Some(s), .. } if s == 2.0
        ));
    }

    #[test]
    fn rejects_bad_specs() {
        for s in [
            "probit:n=1",
            "logistic:n=10",
            "logistic:n=10,p=2,foo=1",
            "logistic:n=ten,p=2",
            "quartic:eps=-1",
            "mixture:sigma=0.5",
            "gaussian:dim=0",
            "quartic:eps=1,eps=2",
            "quartic:eps",
        ] {
            assert!(s.parse::<ModelSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn builds_targets() {
        let m = "logistic:n=20,p=3,seed=2".parse::<ModelSpec>().unwrap().build().unwrap();
        assert_eq!(m.target.dim(), 3);
        assert!(m.data.is_some());
        let m = "quartic:eps=0.1,dim=4".parse::<ModelSpec>().unwrap().build().unwrap();
        assert_eq!(m.init.len(), 4);
    }
}
