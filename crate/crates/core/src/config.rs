//! JSON run configuration:
//! `{a, n, v1, v2, omega, kappa, tol, accel: {eps1_min, eps1_max, eps2, n_e, e0}}`.
//! Every key is optional; missing ones take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accelerator::AccelConfig;
use crate::error::Result;
use crate::hamiltonian::GpeParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub a: f64,
    pub n: usize,
    pub v1: f64,
    pub v2: f64,
    pub omega: f64,
    pub kappa: f64,
    pub tol: f64,
    pub accel: AccelConfig,
}

impl Default for RunConfig {
    /// The rotating test case `kappa = 200`, `omega = 0.8`, `v = (1, 1)` on
    /// `a = 20`, `n = 64`, solved to `1e-8`.
    fn default() -> Self {
        Self {
            a: 20.0,
            n: 64,
            v1: 1.0,
            v2: 1.0,
            omega: 0.8,
            kappa: 200.0,
            tol: 1e-8,
            accel: AccelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn params(&self) -> Result<GpeParams> {
        GpeParams::new(self.a, self.n, self.v1, self.v2, self.omega, self.kappa)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.params()?.grid()?;
        cfg.accel.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_files() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        let c = RunConfig::from_json(r#"{"kappa": 0, "omega": 0, "accel": {"n_e": 3}}"#).unwrap();
        assert_eq!((c.kappa, c.omega, c.accel.n_e, c.accel.e0), (0.0, 0.0, 3, 5e-3));
        assert!(RunConfig::from_json(r#"{"n": 20}"#).is_err());
        assert!(RunConfig::from_json(r#"{"kapa": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"accel": {"eps2": 1}}"#).is_err());
    }
}
