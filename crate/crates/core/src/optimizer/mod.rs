//! Fitting: configuration, parameter packing and the quasi-Newton driver.

mod fit;
mod lbfgs;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VbppError};

pub use fit::{fit, fit_from, initial_model, inducing_grid, resolve_prior, PriorParams};
pub use lbfgs::{maximize, LbfgsOptions, LbfgsOutcome};

/// How the inducing points are laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InducingSpec {
    /// `M` points on a regular grid; `M` must be a perfect `R`-th power.
    Total(usize),
    /// Points per dimension of the regular grid.
    PerDim(Vec<usize>),
}

impl InducingSpec {
    /// Grid size per dimension for an `r`-dimensional domain.
    pub fn per_dim(&self, r: usize) -> Result<Vec<usize>> {
        match self {
            InducingSpec::PerDim(v) if v.len() == r && v.iter().all(|&k| k > 0) => Ok(v.clone()),
            InducingSpec::PerDim(v) if v.len() == 1 && v[0] > 0 => Ok(vec![v[0]; r]),
            InducingSpec::PerDim(_) => Err(VbppError::InvalidParameter(format!(
                "per-dimension inducing counts must be positive and number 1 or {r}"
            ))),
            InducingSpec::Total(m) => {
                if *m == 0 {
                    return Err(VbppError::InvalidParameter("need at least one inducing point".into()));
                }
                let k = (*m as f64).powf(1.0 / r as f64).round() as usize;
                if k.checked_pow(r as u32) == Some(*m) {
                    Ok(vec![k; r])
                } else {
                    Err(VbppError::InvalidParameter(format!(
                        "{m} inducing points do not form a regular grid in {r} dimensions"
                    )))
                }
            }
        }
    }
}

/// Gaussian on a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normal1 {
    pub mean: f64,
    pub sd: f64,
}

/// Prior over Θ for MAP fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MapPrior {
    /// Log-normal(log init, 1) on γ and each α_r, Normal(init, (init + 1)²) on ū.
    Default,
    Explicit {
        log_gamma: Normal1,
        log_alpha: Vec<Normal1>,
        u_bar: Normal1,
    },
}

/// Overrides for the data-driven starting point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub gamma: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    pub u_bar: Option<f64>,
    /// `L` starts as this multiple of `chol(K_zz)`.
    pub chol_scale: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            gamma: None,
            alpha: None,
            u_bar: None,
            chol_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub optimize_z: bool,
    pub map_prior: Option<MapPrior>,
    pub init: InitSpec,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 1000,
            grad_tol: 1e-4,
            optimize_z: false,
            map_prior: None,
            init: InitSpec::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(VbppError::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(VbppError::InvalidParameter("grad_tol must be positive".into()));
        }
        if !(self.init.chol_scale > 0.0) {
            return Err(VbppError::InvalidParameter("chol_scale must be positive".into()));
        }
        Ok(())
    }
}
