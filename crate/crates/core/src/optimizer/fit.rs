use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::params::{omega_from_z, pack_whitened, unpack_whitened};
use super::{maximize, FitConfig, InducingSpec, LbfgsOptions, MapPrior, Normal1};
use crate::bound::{evaluate, EvalOptions, ParamSelector};
use crate::error::{Result, VbppError};
use crate::kernel::HyperParams;
use crate::model::{FitMetadata, InducingPoints, Model, TraceEntry, VariationalState};
use crate::pointdata::{midpoint_grid, Domain, EventSet};
use crate::scalar::{lit, to_f64, Real};
use crate::specfun::GTildeTable;

/// Resolved prior over Θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub log_gamma: Normal1,
    pub log_alpha: Vec<Normal1>,
    pub u_bar: Normal1,
}

impl PriorParams {
    /// `log p(Θ)` (densities over γ, α_r and ū) and its gradient with respect
    /// to `(log γ, log α, ū)`.
    fn log_density(&self, log_gamma: f64, log_alpha: &[f64], u_bar: f64) -> (f64, Vec<f64>) {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let normal = |x: f64, p: &Normal1| {
            let z = (x - p.mean) / p.sd;
            (-0.5 * z * z - p.sd.ln() - 0.5 * ln_2pi, -z / p.sd)
        };
        let mut grad = Vec::with_capacity(2 + log_alpha.len());
        // log-normal: the density in the positive parameter carries −log θ
        let (v, g) = normal(log_gamma, &self.log_gamma);
        let mut total = v - log_gamma;
        grad.push(g - 1.0);
        for (la, p) in log_alpha.iter().zip(&self.log_alpha) {
            let (v, g) = normal(*la, p);
            total += v - la;
            grad.push(g - 1.0);
        }
        let (v, g) = normal(u_bar, &self.u_bar);
        total += v;
        grad.push(g);
        (total, grad)
    }
}

/// Concrete prior parameters for `prior`, centred on the hyperparameters of `start`.
pub fn resolve_prior(prior: &MapPrior, start: &HyperParams<f64>) -> Result<PriorParams> {
    let p = match prior {
        MapPrior::Default => PriorParams {
            log_gamma: Normal1 {
                mean: start.gamma.ln(),
                sd: 1.0,
            },
            log_alpha: start
                .alpha
                .iter()
                .map(|a| Normal1 { mean: a.ln(), sd: 1.0 })
                .collect(),
            u_bar: Normal1 {
                mean: start.u_bar,
                sd: start.u_bar.abs() + 1.0,
            },
        },
        MapPrior::Explicit {
            log_gamma,
            log_alpha,
            u_bar,
        } => PriorParams {
            log_gamma: *log_gamma,
            log_alpha: log_alpha.clone(),
            u_bar: *u_bar,
        },
    };
    if p.log_alpha.len() != start.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: start.dims(),
            found: p.log_alpha.len(),
        });
    }
    let sds = std::iter::once(&p.log_gamma).chain(&p.log_alpha).chain(std::iter::once(&p.u_bar));
    for n in sds {
        if !(n.sd > 0.0) || !n.mean.is_finite() {
            return Err(VbppError::InvalidParameter("prior needs finite means and positive scales".into()));
        }
    }
    Ok(p)
}

/// Regular midpoint grid of inducing points.
pub fn inducing_grid<T: Real>(domain: &Domain<T>, spec: &InducingSpec) -> Result<DMatrix<T>> {
    midpoint_grid(domain, &spec.per_dim(domain.dims())?)
}

/// Data-driven starting point.
pub fn initial_model<T: Real>(
    events: &EventSet<T>,
    domain: &Domain<T>,
    spec: &InducingSpec,
    cfg: &FitConfig,
) -> Result<Model<T>> {
    let r = domain.dims();
    let n = events.len() as f64;
    let measure = to_f64(domain.measure());
    let rate = n / measure;
    let gamma = cfg.init.gamma.unwrap_or(if n > 0.0 { rate } else { 1.0 / measure });
    let alpha = match &cfg.init.alpha {
        Some(a) => a.clone(),
        None => (0..r).map(|k| (to_f64(domain.extent(k)) / 5.0).powi(2)).collect(),
    };
    let u_bar = cfg.init.u_bar.unwrap_or(rate.sqrt());
    let hyper = HyperParams::new(lit(gamma), alpha.into_iter().map(lit).collect(), lit(u_bar))?;
    let z = inducing_grid(domain, spec)?;
    let inducing = if cfg.optimize_z {
        InducingPoints::from_omega(omega_from_z(&z, domain)?, domain)?
    } else {
        InducingPoints::fixed(z, domain)?
    };
    let prior = Model::with_prior_state(domain.clone(), hyper, inducing)?;
    let l = prior.kzz_cholesky().l() * lit::<T>(cfg.init.chol_scale);
    let m = DVector::from_element(prior.num_inducing(), prior.hyper().u_bar);
    prior.with_var_state(VariationalState::new(m, l)?)
}

/// Fit a model from the default initialisation.
pub fn fit<T: Real>(events: &EventSet<T>, domain: &Domain<T>, spec: &InducingSpec, cfg: &FitConfig) -> Result<Model<T>> {
    cfg.validate()?;
    if events.dims() != domain.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: domain.dims(),
            found: events.dims(),
        });
    }
    let start = initial_model(events, domain, spec, cfg)?;
    fit_from(start, events, cfg)
}

/// Fit starting from `start`.
pub fn fit_from<T: Real>(start: Model<T>, events: &EventSet<T>, cfg: &FitConfig) -> Result<Model<T>> {
    cfg.validate()?;
    let start = if cfg.optimize_z && start.inducing().omega().is_none() {
        let om = omega_from_z(start.inducing().z(), start.domain())?;
        start.with_inducing(InducingPoints::from_omega(om, start.domain())?)?
    } else {
        start
    };
    let h64 = HyperParams::new(
        to_f64(start.hyper().gamma),
        start.hyper().alpha.iter().map(|&a| to_f64(a)).collect(),
        to_f64(start.hyper().u_bar),
    )?;
    let prior = cfg.map_prior.as_ref().map(|p| resolve_prior(p, &h64)).transpose()?;
    let sel = if cfg.optimize_z {
        ParamSelector::all()
    } else {
        ParamSelector::fixed_z()
    };
    let r = start.domain().dims();
    let table = GTildeTable::global();
    let opts = EvalOptions {
        include_kl: true,
        collapse_s: false,
        gradient: true,
        whitened: true,
    };

    let objective = |y: &[f64]| -> Option<(f64, Vec<f64>)> {
        let yt: Vec<T> = y.iter().map(|&v| lit(v)).collect();
        let model = unpack_whitened(&yt, &start, cfg).ok()?;
        let terms = evaluate(&model, events, opts, table).ok()?;
        let grad = terms.gradient?.to_vec(sel).ok()?;
        let mut value = to_f64(terms.value);
        let mut grad: Vec<f64> = grad.into_iter().map(to_f64).collect();
        if let Some(p) = &prior {
            let (lp, gp) = p.log_density(y[0], &y[1..1 + r], y[1 + r]);
            value += lp;
            for (g, d) in grad.iter_mut().zip(gp) {
                *g += d;
            }
        }
        value.is_finite().then_some((value, grad))
    };

    let y0: Vec<f64> = pack_whitened(&start, cfg)?.into_iter().map(to_f64).collect();
    let out = maximize(
        y0,
        objective,
        LbfgsOptions {
            max_iters: cfg.max_iters,
            grad_tol: cfg.grad_tol,
            ..Default::default()
        },
    )
    .ok_or_else(|| VbppError::Fit("objective or gradient is not finite at the initial point".into()))?;

    let yt: Vec<T> = out.x.iter().map(|&v| lit(v)).collect();
    let mut model = unpack_whitened(&yt, &start, cfg)?;
    let elbo = to_f64(crate::bound::elbo(&model, events)?);
    let trace = out
        .trace
        .iter()
        .enumerate()
        .map(|(i, &(objective, grad_norm))| TraceEntry {
            iteration: i,
            objective,
            grad_norm,
        })
        .collect();
    model.set_fit_metadata(FitMetadata {
        elbo,
        objective: out.value,
        iterations: out.iterations,
        converged: out.converged,
        grad_norm: out.trace.last().map_or(0.0, |t| t.1),
        trace,
        config: cfg.clone(),
    });
    Ok(model)
}
