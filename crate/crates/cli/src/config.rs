use std::path::Path;

use serde::{Deserialize, Serialize};

use polyrbf::basis::{DEFAULT_K, DEFAULT_N, DEFAULT_RELATIVE_RIDGE, DEFAULT_TAPER_MULT};
use polyrbf::{BasisConfig, Ridge};

use crate::error::{io_err, CliError, Result};

/// Polynomial order: a fixed value or `"auto"` for cross-validated selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Order {
    Fixed(usize),
    Auto(Auto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// Model settings shared by `fit`, `benchmark` and `harmonize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: Order,
    /// Absolute ridge; overrides `ridge_relative`.
    pub ridge_d: Option<f64>,
    pub ridge_relative: f64,
    pub taper_mult: f64,
    pub bandwidth: Option<f64>,
    /// Orders tried when `K` is `"auto"`.
    pub k_candidates: Vec<usize>,
    pub folds: usize,
    /// Voxels used for order selection (evenly spaced through the mask).
    pub selection_voxels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: DEFAULT_N,
            k: Order::Fixed(DEFAULT_K),
            ridge_d: None,
            ridge_relative: DEFAULT_RELATIVE_RIDGE,
            taper_mult: DEFAULT_TAPER_MULT,
            bandwidth: None,
            k_candidates: vec![1, 2, 3, 4],
            folds: 5,
            selection_voxels: 500,
        }
    }
}

impl ModelConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ModelConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::InFile {
            path: path.to_path_buf(),
            source: e.into(),
        })
    }

    pub fn ridge(&self) -> Ridge {
        match self.ridge_d {
            Some(d) => Ridge::Absolute(d),
            None => Ridge::Relative(self.ridge_relative),
        }
    }

    pub fn fixed_k(&self) -> Result<usize> {
        match self.k {
            Order::Fixed(k) => Ok(k),
            Order::Auto(_) => Err(CliError::Usage("K = \"auto\" is only supported by `fit`".into())),
        }
    }

    /// Basis for order `k` with `b_scale` set from the training scheme.
    pub fn basis(&self, k: usize, b_scale: f64) -> Result<BasisConfig> {
        let mut cfg = BasisConfig::new(self.n, k, b_scale)?
            .with_taper(self.taper_mult)?
            .with_ridge(self.ridge())?;
        if let Some(h) = self.bandwidth {
            cfg = cfg.with_bandwidth(h)?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_fields_are_missing() {
        let cfg: ModelConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.n, 10);
        assert_eq!(cfg.k, Order::Fixed(4));
        assert_eq!(cfg.ridge(), Ridge::Relative(1e-8));
    }

    #[test]
    fn auto_order_and_absolute_ridge() {
        let cfg: ModelConfig = serde_json::from_str(r#"{"K": "auto", "ridge_d": 0.5, "N": 6}"#).unwrap();
        assert_eq!(cfg.k, Order::Auto(Auto::Auto));
        assert_eq!(cfg.ridge(), Ridge::Absolute(0.5));
        assert!(cfg.fixed_k().is_err());
        assert!(serde_json::from_str::<ModelConfig>(r#"{"K": "best"}"#).is_err());
        assert!(serde_json::from_str::<ModelConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
