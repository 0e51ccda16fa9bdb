//! Kernel-smoothing intensity estimate with (optionally truncated) Gaussian
//! kernels and a leave-one-out bandwidth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbppError};
use crate::pointdata::{poisson_log_likelihood, Domain, EventSet};
use crate::scalar::erf_diff;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const STARTS: usize = 8;

/// Log of the kernel density at `x` for a kernel centred at `center`.
///
/// With `end_correction` each dimension is renormalised to unit mass on the
/// domain; otherwise this is the plain normal density.
pub fn truncnorm_log_pdf(x: &[f64], center: &[f64], sigma: &[f64], d: &Domain, end_correction: bool) -> f64 {
    let mut v = 0.0;
    for r in 0..x.len() {
        let z = (x[r] - center[r]) / sigma[r];
        v += -0.5 * z * z - sigma[r].ln() - LN_SQRT_2PI;
        if end_correction {
            let s = sigma[r] * std::f64::consts::SQRT_2;
            let mass: f64 = 0.5 * erf_diff((d.hi()[r] - center[r]) / s, (d.lo()[r] - center[r]) / s);
            v -= mass.ln();
        }
    }
    v
}

pub fn truncnorm_pdf(x: &[f64], center: &[f64], sigma: &[f64], d: &Domain, end_correction: bool) -> f64 {
    truncnorm_log_pdf(x, center, sigma, d, end_correction).exp()
}

fn log_sum_exp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KsModel {
    pub train: EventSet,
    pub domain: Domain,
    pub sigma: Vec<f64>,
    pub end_correction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsDoc {
    pub sigma: Vec<f64>,
    pub end_correction: bool,
    pub domain: String,
    pub train: String,
    pub n_train: usize,
}

impl KsModel {
    pub fn new(train: EventSet, domain: Domain, sigma: Vec<f64>, end_correction: bool) -> Result<Self> {
        if sigma.len() != domain.dims() || train.dims() != domain.dims() {
            return Err(VbppError::DimensionMismatch {
                expected: domain.dims(),
                found: sigma.len(),
            });
        }
        if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(VbppError::InvalidParameter("bandwidths must be positive".into()));
        }
        Ok(KsModel {
            train,
            domain,
            sigma,
            end_correction,
        })
    }

    /// `log λ(x) = log Σ_n N_T(x; x_n, Σ)`.
    pub fn log_intensity(&self, x: &[f64]) -> f64 {
        log_sum_exp(
            (0..self.train.len())
                .map(|n| truncnorm_log_pdf(x, &self.train.point(n), &self.sigma, &self.domain, self.end_correction)),
        )
    }

    pub fn intensity(&self, x: &[f64]) -> f64 {
        self.log_intensity(x).exp()
    }

    /// JSON description; `train` names where the training events came from.
    pub fn to_doc(&self, train: &str) -> KsDoc {
        KsDoc {
            sigma: self.sigma.clone(),
            end_correction: self.end_correction,
            domain: self.domain.to_spec(),
            train: train.to_string(),
            n_train: self.train.len(),
        }
    }
}

/// `Σ_i log Σ_{j≠i} N_T(x_i; x_j, Σ)`.
pub fn loo_objective(train: &EventSet, d: &Domain, sigma: &[f64], end_correction: bool) -> f64 {
    let n = train.len();
    let pts: Vec<Vec<f64>> = (0..n).map(|i| train.point(i)).collect();
    let per: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            log_sum_exp(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| truncnorm_log_pdf(&pts[i], &pts[j], sigma, d, end_correction)),
            )
        })
        .collect();
    per.iter().sum()
}

/// Per-dimension `(floor, ceiling)` of `log σ`.
pub fn log_sigma_bounds(d: &Domain) -> Vec<(f64, f64)> {
    (0..d.dims())
        .map(|r| ((1e-3 * d.extent(r)).ln(), (10.0 * d.extent(r)).ln()))
        .collect()
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    while b - a > 1e-9 {
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = f(e);
        }
    }
    let (fa, fb) = (f(a), f(b));
    // the bracket endpoints matter when the optimum sits on a bound
    [(c, fc), (e, fe), (a, fa), (b, fb)]
        .into_iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, p| if p.1 > best.1 { p } else { best })
}

/// Coordinate-wise golden-section ascent of the LOO objective from `log_sigma`.
pub fn refine_from(train: &EventSet, d: &Domain, end_correction: bool, mut log_sigma: Vec<f64>) -> (Vec<f64>, f64) {
    let bounds = log_sigma_bounds(d);
    let obj = |ls: &[f64]| {
        let s: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
        let v = loo_objective(train, d, &s, end_correction);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut best = obj(&log_sigma);
    for _ in 0..50 {
        let before = best;
        for r in 0..log_sigma.len() {
            let (lo, hi) = bounds[r];
            let a = (log_sigma[r] - 2.0).max(lo);
            let b = (log_sigma[r] + 2.0).min(hi);
            let (x, fx) = golden_max(
                |v| {
                    let mut trial = log_sigma.clone();
                    trial[r] = v;
                    obj(&trial)
                },
                a,
                b,
            );
            if fx > best {
                best = fx;
                log_sigma[r] = x;
            }
        }
        if best - before <= 1e-12 * best.abs().max(1.0) {
            break;
        }
    }
    (log_sigma, best)
}

/// Bandwidths maximising the leave-one-out objective.
pub fn fit_bandwidth(train: &EventSet, d: &Domain, end_correction: bool) -> Result<KsModel> {
    if train.len() < 2 {
        return Err(VbppError::InsufficientData(
            "leave-one-out bandwidth needs at least two events".into(),
        ));
    }
    if train.dims() != d.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: d.dims(),
            found: train.dims(),
        });
    }
    let bounds = log_sigma_bounds(d);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in 0..STARTS {
        let t = (s as f64 + 0.5) / STARTS as f64;
        let start: Vec<f64> = bounds.iter().map(|(lo, hi)| lo + t * (hi - lo)).collect();
        let (ls, v) = refine_from(train, d, end_correction, start);
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((ls, v));
        }
    }
    let (ls, _) = best.expect("at least one start");
    KsModel::new(
        train.clone(),
        d.clone(),
        ls.iter().map(|v| v.exp()).collect(),
        end_correction,
    )
}

/// `log p(H | D) − log K!` in product form:
/// `K log N − N + Σ_k log((1/N) Σ_n N_T(x̃_k; x_n, Σ))`.
pub fn ks_log_predictive(model: &KsModel, test: &EventSet) -> Result<f64> {
    if test.dims() != model.domain.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: model.domain.dims(),
            found: test.dims(),
        });
    }
    let n = model.train.len() as f64;
    let ln_n = n.ln();
    let k = test.len() as f64;
    let mut v = k * ln_n - n;
    for i in 0..test.len() {
        v += model.log_intensity(&test.point(i)) - ln_n;
    }
    Ok(v)
}

/// The same quantity as the inhomogeneous Poisson log-likelihood of `test`
/// under `λ = Σ_n N_T(·; x_n, Σ)` with `∫λ` taken as `N`.
pub fn ks_log_predictive_poisson(model: &KsModel, test: &EventSet) -> Result<f64> {
    let logs: Vec<f64> = (0..test.len()).map(|i| model.log_intensity(&test.point(i))).collect();
    poisson_log_likelihood(&logs, model.train.len() as f64)
}
