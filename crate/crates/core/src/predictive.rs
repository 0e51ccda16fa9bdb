//! Held-out evaluation: the predictive bounds `L_p` and `L_0`, Monte-Carlo
//! estimates of the corresponding predictive log-likelihoods, and pointwise
//! summaries of the posterior intensity.

use nalgebra::{Cholesky, DMatrix};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bound::{evaluate, integral_parts, qf_marginals, EvalOptions};
use crate::error::{Result, VbppError};
use crate::kernel::gram;
use crate::model::Model;
use crate::pointdata::{grid_cell_volume, midpoint_grid, EventSet};
use crate::rng::{stream, Purpose};
use crate::scalar::norm_cdf;
use crate::specfun::GTildeTable;

pub const DEFAULT_SAMPLES: usize = 10_000;
const MC_BLOCK: usize = 256;

/// Default quadrature resolution per dimension for the Monte-Carlo estimates.
pub fn default_grid(dims: usize) -> Vec<usize> {
    let k = match dims {
        1 => 512,
        2 => 64,
        _ => 16,
    };
    vec![k; dims]
}

/// Which posterior the Monte-Carlo draws come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum McMode {
    /// `q*(f)` with the fitted covariance `S*`.
    Mp,
    /// `q(f | u = m*)`.
    M0,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveReport {
    pub l_p: f64,
    pub l_0: f64,
    pub m_p_hat: McEstimate,
    pub m_0_hat: McEstimate,
    pub n_samples: usize,
    pub grid_resolution: Vec<usize>,
}

fn check_dims(model: &Model, test: &EventSet) -> Result<()> {
    if model.domain().dims() != test.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: model.domain().dims(),
            found: test.dims(),
        });
    }
    Ok(())
}

/// `E_{q*(f)}[log p(H | f)]`: the bound without its KL term.
pub fn predictive_bound_lp(model: &Model, test: &EventSet) -> Result<f64> {
    check_dims(model, test)?;
    let opts = EvalOptions {
        include_kl: false,
        collapse_s: false,
        gradient: false,
        whitened: false,
    };
    Ok(evaluate(model, test, opts, GTildeTable::global())?.value)
}

/// As [`predictive_bound_lp`] with the covariance of `q(u)` collapsed to zero.
pub fn predictive_bound_l0(model: &Model, test: &EventSet) -> Result<f64> {
    check_dims(model, test)?;
    let opts = EvalOptions {
        include_kl: false,
        collapse_s: true,
        gradient: false,
        whitened: false,
    };
    Ok(evaluate(model, test, opts, GTildeTable::global())?.value)
}

/// `log(mean(exp(v)))` with the max-subtraction trick.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + (v.iter().map(|x| (x - mx).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Log-mean-exp of `v` with a delete-one-block jackknife standard error
/// (blocks of 100 from 200 samples up, otherwise single samples).
pub fn log_mean_exp_jackknife(v: &[f64]) -> McEstimate {
    let n = v.len();
    let estimate = log_mean_exp(v);
    if n < 2 {
        return McEstimate { estimate, stderr: 0.0 };
    }
    let block = if n >= 200 { 100 } else { 1 };
    let nb = n.div_ceil(block);
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let total: f64 = w.iter().sum();
    let loo: Vec<f64> = (0..nb)
        .map(|b| {
            let lo = b * block;
            let hi = (lo + block).min(n);
            let rest = total - w[lo..hi].iter().sum::<f64>();
            mx + (rest.max(0.0) / (n - (hi - lo)) as f64).ln()
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / nb as f64;
    let ss: f64 = loo.iter().map(|x| (x - mean).powi(2)).sum();
    let stderr = ((nb as f64 - 1.0) / nb as f64 * ss).sqrt();
    McEstimate {
        estimate,
        stderr: if stderr.is_finite() { stderr } else { f64::INFINITY },
    }
}

/// Monte-Carlo estimate of the predictive log-likelihood of `test`.
///
/// Draws `f` jointly at the test points and at the cell midpoints of a
/// regular grid, and averages `p(H | f)`. The midpoint rule for `∫ f²` is
/// recentred so that its expectation is exact.
pub fn mc_predictive(
    model: &Model,
    test: &EventSet,
    mode: McMode,
    n_samples: usize,
    grid_res: &[usize],
    seed: u64,
) -> Result<McEstimate> {
    check_dims(model, test)?;
    if n_samples == 0 {
        return Err(VbppError::InvalidParameter("need at least one sample".into()));
    }
    if grid_res.len() != model.domain().dims() || grid_res.iter().any(|&k| k < 8) {
        return Err(VbppError::InvalidParameter(
            "grid resolution needs at least 8 cells per dimension".into(),
        ));
    }
    let grid = midpoint_grid(model.domain(), grid_res)?;
    let cell = grid_cell_volume(model.domain(), grid_res);
    let nt = test.len();
    let np = nt + grid.nrows();
    let mut pts = DMatrix::zeros(np, test.dims());
    pts.rows_mut(0, nt).copy_from(test.points());
    pts.rows_mut(nt, grid.nrows()).copy_from(&grid);

    let h = model.hyper();
    let kpz = gram(&pts, model.inducing().z(), h)?;
    let bm = model.kzz_cholesky().solve(&kpz.transpose());
    let mean = bm.transpose() * model.var_state().m();
    let mut cov = gram(&pts, &pts, h)? - &kpz * &bm;
    if mode == McMode::Mp {
        let lb = model.var_state().l().transpose() * &bm;
        cov += lb.transpose() * lb;
    }
    let chol = jittered_cholesky(cov, h.gamma)?;
    let l = chol.l();
    // ∫μ² and ∫E[g²] are known exactly; the grid only carries the
    // fluctuation of the random part 2μg + g² about its mean
    let (int_mean_sq, int_var) = integral_parts(model, mode == McMode::M0);
    let grid_var: f64 = (nt..np).map(|k| l.row(k).norm_squared()).sum::<f64>() * cell;
    let offset = int_mean_sq + int_var - grid_var;

    // blocks of draws go through one matrix product; each column still has
    // its own random stream, so results do not depend on the blocking
    let blocks: Vec<(usize, usize)> = (0..n_samples)
        .step_by(MC_BLOCK)
        .map(|s| (s, (s + MC_BLOCK).min(n_samples)))
        .collect();
    let logs = blocks
        .into_par_iter()
        .map(|(start, end)| {
            let mut e = DMatrix::zeros(np, end - start);
            for c in 0..end - start {
                let mut rng = stream(seed, Purpose::Predictive, (start + c) as u64);
                for k in 0..np {
                    e[(k, c)] = StandardNormal.sample(&mut rng);
                }
            }
            let f = &l * e;
            (0..end - start)
                .map(|c| {
                    let col = f.column(c);
                    let mut v = 0.0;
                    for k in 0..nt {
                        let x = mean[k] + col[k];
                        v += (x * x).ln();
                    }
                    let sq: f64 = (nt..np).map(|k| col[k] * (2.0 * mean[k] + col[k])).sum();
                    v - offset - sq * cell
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    Ok(log_mean_exp_jackknife(&logs))
}

fn jittered_cholesky(mut cov: DMatrix<f64>, gamma: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let n = cov.nrows();
    let sym = (&cov + cov.transpose()) * 0.5;
    cov = sym;
    let mut jitter = 1e-8 * gamma;
    let mut added = 0.0;
    while jitter <= 1e-4 * gamma * (1.0 + 1e-9) {
        for i in 0..n {
            cov[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(c) = Cholesky::new(cov.clone()) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(VbppError::Cholesky("joint predictive covariance"))
}

/// The full held-out report.
pub fn predictive_report(
    model: &Model,
    test: &EventSet,
    n_samples: usize,
    grid_res: &[usize],
    seed: u64,
) -> Result<PredictiveReport> {
    Ok(PredictiveReport {
        l_p: predictive_bound_lp(model, test)?,
        l_0: predictive_bound_l0(model, test)?,
        m_p_hat: mc_predictive(model, test, McMode::Mp, n_samples, grid_res, seed)?,
        m_0_hat: mc_predictive(model, test, McMode::M0, n_samples, grid_res, seed)?,
        n_samples,
        grid_resolution: grid_res.to_vec(),
    })
}

/// Posterior mean intensity `μ² + σ²` with an equal-tailed 95% band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensitySummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `P(f² ≤ t)` for `f ~ N(mu, sd²)`.
fn sq_normal_cdf(t: f64, mu: f64, sd: f64) -> f64 {
    let s = t.max(0.0).sqrt();
    (norm_cdf((s - mu) / sd) - norm_cdf((-s - mu) / sd)).clamp(0.0, 1.0)
}

/// The `p`-quantile of `f²`, `f ~ N(mu, sd²)`.
pub fn sq_normal_quantile(p: f64, mu: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mu * mu;
    }
    let z = Normal::standard().inverse_cdf(0.5 + 0.5 * p.max(0.5));
    // bisection on s = √t: P(f² ≤ s²) is increasing in s
    let (mut lo, mut hi) = (0.0f64, mu.abs() + (z + 1.0) * sd);
    while sq_normal_cdf(hi * hi, mu, sd) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sq_normal_cdf(mid * mid, mu, sd) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    s * s
}

pub fn intensity_summary(mu: f64, var: f64) -> IntensitySummary {
    let sd = var.max(0.0).sqrt();
    IntensitySummary {
        mean: mu * mu + var,
        lower: sq_normal_quantile(0.025, mu, sd),
        upper: sq_normal_quantile(0.975, mu, sd),
    }
}

/// Posterior intensity summaries at the rows of `query`.
pub fn posterior_intensity(model: &Model, query: &DMatrix<f64>) -> Result<Vec<IntensitySummary>> {
    if query.ncols() != model.domain().dims() {
        return Err(VbppError::DimensionMismatch {
            expected: model.domain().dims(),
            found: query.ncols(),
        });
    }
    let (mu, var) = qf_marginals(query, model, false)?;
    Ok(mu.iter().zip(var.iter()).map(|(&m, &v)| intensity_summary(m, v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_standard_normal_band() {
        let s = intensity_summary(0.0, 1.0);
        assert_eq!(s.mean, 1.0);
        // chi-square(1) quantiles
        assert!((s.lower - 0.000982069117175).abs() < 1e-9);
        assert!((s.upper - 5.023886187314888).abs() < 1e-9);
    }

    #[test]
    fn delta_limit_band() {
        let s = intensity_summary(10.0, 1e-6);
        assert!((s.mean - 100.0).abs() < 1e-5);
        assert!(s.lower < 100.0 && s.upper > 100.0 && s.upper - s.lower < 0.1);
    }

    #[test]
    fn single_sample_estimate() {
        let e = log_mean_exp_jackknife(&[-3.25]);
        assert_eq!(e.estimate, -3.25);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn log_mean_exp_stable() {
        assert!((log_mean_exp(&[-1000.0, -1000.0]) + 1000.0).abs() < 1e-12);
        let e = log_mean_exp_jackknife(&vec![2.0; 500]);
        assert!((e.estimate - 2.0).abs() < 1e-12 && e.stderr < 1e-12);
    }
}
