//! JSON run configuration.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::pendulum::build_triple_pendulum;
use crate::bench::trial::TrialConfig;
use crate::error::{Error, Result};
use crate::periodic_system::{CostSpec, CtlpSystem, PeriodicMatrixFunction};
use crate::vi_adp::AdpConfig;

/// Row-major matrix, `[[a11, a12], [a21, a22]]`.
pub type MatrixRows = Vec<Vec<f64>>;

pub fn matrix_from_rows(rows: &MatrixRows, what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidConfig(format!("{what}: expected a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// `M(t) = M₀ + Σ_k (C_k cos kωt + S_k sin kωt)`, `ω = 2π/T`, `k = 1, 2, …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSeries {
    pub constant: MatrixRows,
    #[serde(default)]
    pub cos: Vec<MatrixRows>,
    #[serde(default)]
    pub sin: Vec<MatrixRows>,
}

impl MatrixSeries {
    pub fn to_function(&self, period: f64, what: &str) -> Result<PeriodicMatrixFunction> {
        let m0 = matrix_from_rows(&self.constant, what)?;
        let shape = m0.shape();
        let load = |list: &[MatrixRows], kind: &str| -> Result<Vec<DMatrix<f64>>> {
            list.iter()
                .enumerate()
                .map(|(k, rows)| {
                    let m = matrix_from_rows(rows, &format!("{what}.{kind}[{k}]"))?;
                    if m.shape() != shape {
                        return Err(Error::DimensionMismatch(format!(
                            "{what}.{kind}[{k}] is {}×{}, constant term is {}×{}",
                            m.nrows(),
                            m.ncols(),
                            shape.0,
                            shape.1
                        )));
                    }
                    Ok(m)
                })
                .collect()
        };
        let cos = load(&self.cos, "cos")?;
        let sin = load(&self.sin, "sin")?;
        let omega = 2.0 * std::f64::consts::PI / period;
        PeriodicMatrixFunction::new(shape.0, shape.1, period, move |t| {
            let mut m = m0.clone();
            for (k, c) in cos.iter().enumerate() {
                m += c * ((k + 1) as f64 * omega * t).cos();
            }
            for (k, s) in sin.iter().enumerate() {
                m += s * ((k + 1) as f64 * omega * t).sin();
            }
            m
        })
    }
}

/// Plant description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    TriplePendulum { zeta: f64 },
    Fourier { period: f64, a: MatrixSeries, b: MatrixSeries },
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig::TriplePendulum { zeta: 1.0 }
    }
}

/// Constant cost weights; identity when omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    #[serde(default)]
    pub c: Option<MatrixRows>,
    #[serde(default)]
    pub r: Option<MatrixRows>,
}

impl CostConfig {
    pub fn build(&self, n: usize, m: usize, period: f64) -> Result<CostSpec> {
        let c = match &self.c {
            Some(rows) => matrix_from_rows(rows, "cost.c")?,
            None => DMatrix::identity(n, n),
        };
        let r = match &self.r {
            Some(rows) => matrix_from_rows(rows, "cost.r")?,
            None => DMatrix::identity(m, m),
        };
        let cost = CostSpec::constant(c, r, period)?;
        cost.check_dims(n, m)?;
        Ok(cost)
    }
}

impl SystemConfig {
    pub fn build(&self, cost: &CostConfig) -> Result<(CtlpSystem, CostSpec)> {
        let sys = match self {
            SystemConfig::TriplePendulum { zeta } => build_triple_pendulum(*zeta)?.0,
            SystemConfig::Fourier { period, a, b } => {
                CtlpSystem::new(a.to_function(*period, "a")?, b.to_function(*period, "b")?)?
            }
        };
        let cost = cost.build(sys.n(), sys.m(), sys.period())?;
        Ok((sys, cost))
    }
}

/// Top-level file accepted by `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub cost: CostConfig,
    pub adp: AdpConfig,
    /// Step of the model-based Riccati oracle.
    pub oracle_step: Option<f64>,
    /// Trial list for `table1`; the standard list when absent.
    pub trials: Option<Vec<TrialConfig>>,
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn empty_config_is_the_default_pendulum() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let (sys, cost) = cfg.system.build(&cfg.cost).unwrap();
        assert_eq!((sys.n(), sys.m()), (6, 3));
        assert_eq!(cost.r(0.0), DMatrix::identity(3, 3));
    }

    #[test]
    fn fourier_system_from_json() {
        let text = r#"{
            "system": {"kind": "fourier", "period": 2.0,
                       "a": {"constant": [[0.0, 1.0], [-1.0, 0.0]], "sin": [[[0.0, 0.0], [0.5, 0.0]]]},
                       "b": {"constant": [[0.0], [1.0]]}},
            "cost": {"r": [[2.0]]},
            "adp": {"n_fourier": 3, "samples": 100, "l_bar": {"fixed": 40}}
        }"#;
        let cfg = RunConfig::from_json_str(text).unwrap();
        assert_eq!(cfg.adp.n_fourier, 3);
        assert_eq!(cfg.adp.dt, AdpConfig::default().dt);
        assert_eq!(cfg.adp.l_bar, crate::vi_adp::LbarRule::Fixed(40));
        let (sys, cost) = cfg.system.build(&cfg.cost).unwrap();
        let t = 0.3;
        let want = dmatrix![0.0, 1.0; -1.0 + 0.5 * (std::f64::consts::PI * t).sin(), 0.0];
        assert!((sys.a(t) - want).amax() < 1e-15);
        assert_eq!(cost.r(0.0), dmatrix![2.0]);
        assert_eq!(cost.c(0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn malformed_configs_are_rejected() {
        assert!(RunConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
        let ragged = r#"{"system": {"kind": "fourier", "period": 1.0,
            "a": {"constant": [[0.0, 1.0], [0.0]]}, "b": {"constant": [[1.0], [1.0]]}}}"#;
        let cfg = RunConfig::from_json_str(ragged).unwrap();
        assert!(cfg.system.build(&cfg.cost).is_err());
        let wrong_cost = RunConfig::from_json_str(r#"{"cost": {"r": [[1.0, 0.0], [0.0, 1.0]]}}"#).unwrap();
        assert!(wrong_cost.system.build(&wrong_cost.cost).is_err());
    }
}
