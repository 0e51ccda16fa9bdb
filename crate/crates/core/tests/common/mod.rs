#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vbpp::optimizer::params::{pack, unpack};
use vbpp::{Domain, EventSet, FitConfig, HyperParams, InducingPoints, Model, VariationalState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box–Muller keeps this file free of extra dependencies
    let u1: f64 = r.random_range(1e-12..1.0);
    let u2: f64 = r.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_domain(r: &mut ChaCha8Rng, dims: usize) -> Domain {
    let lo: Vec<f64> = (0..dims).map(|_| r.random_range(-2.0..2.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + r.random_range(0.5..4.0)).collect();
    Domain::new(lo, hi).unwrap()
}

pub fn random_events(r: &mut ChaCha8Rng, d: &Domain, n: usize) -> EventSet {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d.dims()).map(|k| r.random_range(d.lo()[k]..=d.hi()[k])).collect())
        .collect();
    if n == 0 {
        EventSet::empty(d.dims())
    } else {
        EventSet::from_rows(&rows, d).unwrap()
    }
}

/// Random well-conditioned model with inducing angles.
pub fn random_model(r: &mut ChaCha8Rng, d: &Domain, m: usize) -> Model {
    loop {
        let dims = d.dims();
        let gamma = r.random_range(0.5..3.0);
        let alpha: Vec<f64> = (0..dims)
            .map(|k| r.random_range(0.01..0.05) * d.extent(k).powi(2))
            .collect();
        let u_bar = r.random_range(-1.0..1.0);
        let h = HyperParams::new(gamma, alpha, u_bar).unwrap();
        let om = DMatrix::from_fn(m, dims, |_, _| r.random_range(-3.1..3.1));
        let ind = InducingPoints::from_omega(om, d).unwrap();
        let mv = DVector::from_fn(m, |_, _| normal(r));
        let l = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                0.5 * (0.3 * normal(r)).exp()
            } else if i > j {
                0.2 * normal(r)
            } else {
                0.0
            }
        });
        let vs = VariationalState::new(mv, l).unwrap();
        let model = Model::new(d.clone(), h, ind, vs).unwrap();
        let ev = model.kzz().clone().symmetric_eigenvalues();
        let cond = ev.max() / ev.min();
        if cond < 1e4 {
            return model;
        }
    }
}

pub fn z_config() -> FitConfig {
    FitConfig {
        optimize_z: true,
        ..FitConfig::default()
    }
}

/// Derivative of `f` at `y` along coordinate `i` by Ridders' extrapolation.
pub fn fd<F: Fn(&[f64]) -> f64>(f: &F, y: &[f64], i: usize) -> f64 {
    let h = 1e-3 * y[i].abs().max(1.0);
    let mut p = y.to_vec();
    vbpp_oracle::ridders(
        |t| {
            p[i] = t;
            f(&p)
        },
        y[i],
        h,
    )
    .0
}

/// Max over coordinates of `|a − fd| / max(|a|, |fd|, 1)` for the bound.
pub fn gradient_error(model: &Model, events: &EventSet) -> f64 {
    let cfg = z_config();
    let y = pack(model, &cfg).unwrap();
    let (_, g) = vbpp::elbo_gradient(model, events, vbpp::ParamSelector::all()).unwrap();
    assert_eq!(g.len(), y.len());
    let f = |y: &[f64]| vbpp::elbo(&unpack(y, model, &cfg).unwrap(), events).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..y.len() {
        let n = fd(&f, &y, i);
        let err = (g[i] - n).abs() / g[i].abs().max(n.abs()).max(1.0);
        worst = worst.max(err);
    }
    worst
}
