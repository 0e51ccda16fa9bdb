//! Flattening a model into the unconstrained vector the optimiser works on.
//!
//! Layout: `[log γ, log α_1..log α_R, ū, m, vech(L), ω]` where `vech(L)` walks
//! the lower triangle row by row with diagonal entries stored as logs, and `ω`
//! (row-major, `M × R`) is present only when inducing points are optimised.

use nalgebra::{DMatrix, DVector};

use super::FitConfig;
use crate::error::{Result, VbppError};
use crate::kernel::HyperParams;
use crate::model::{InducingPoints, Model, VariationalState};
use crate::pointdata::Domain;
use crate::scalar::{lit, Real};

/// `z = (lo + hi)/2 + (hi − lo)/2 · sin ω`, elementwise per dimension.
pub fn z_from_omega<T: Real>(omega: &DMatrix<T>, d: &Domain<T>) -> Result<DMatrix<T>> {
    if omega.ncols() != d.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: d.dims(),
            found: omega.ncols(),
        });
    }
    let half: T = lit(0.5);
    Ok(DMatrix::from_fn(omega.nrows(), omega.ncols(), |i, r| {
        let (lo, hi) = (d.lo()[r], d.hi()[r]);
        let z = (lo + hi) * half + (hi - lo) * half * omega[(i, r)].sin();
        // rounding can push the endpoints a hair outside
        if z < lo {
            lo
        } else if z > hi {
            hi
        } else {
            z
        }
    }))
}

/// Principal-branch inverse of [`z_from_omega`], angles in `[−π/2, π/2]`.
pub fn omega_from_z<T: Real>(z: &DMatrix<T>, d: &Domain<T>) -> Result<DMatrix<T>> {
    if z.ncols() != d.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: d.dims(),
            found: z.ncols(),
        });
    }
    let half: T = lit(0.5);
    Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, r| {
        let (lo, hi) = (d.lo()[r], d.hi()[r]);
        let s = (z[(i, r)] - (lo + hi) * half) / ((hi - lo) * half);
        let s = if s > T::one() {
            T::one()
        } else if s < -T::one() {
            -T::one()
        } else {
            s
        };
        s.asin()
    }))
}

/// Length of the packed vector for `m` inducing points in `r` dimensions.
pub fn packed_len(m: usize, r: usize, optimize_z: bool) -> usize {
    2 + r + m + m * (m + 1) / 2 + if optimize_z { m * r } else { 0 }
}

pub fn pack<T: Real>(model: &Model<T>, cfg: &FitConfig) -> Result<Vec<T>> {
    let h = model.hyper();
    let vs = model.var_state();
    let mm = model.num_inducing();
    let mut y = Vec::with_capacity(packed_len(mm, h.dims(), cfg.optimize_z));
    y.push(h.gamma.ln());
    y.extend(h.alpha.iter().map(|a| a.ln()));
    y.push(h.u_bar);
    y.extend(vs.m().iter().copied());
    let l = vs.l();
    for i in 0..mm {
        for j in 0..i {
            y.push(l[(i, j)]);
        }
        y.push(l[(i, i)].ln());
    }
    if cfg.optimize_z {
        let om = match model.inducing().omega() {
            Some(om) => om.clone(),
            None => omega_from_z(model.inducing().z(), model.domain())?,
        };
        for i in 0..om.nrows() {
            y.extend(om.row(i).iter().copied());
        }
    }
    Ok(y)
}

/// Rebuild a model from `y`, taking domain, sizes and (when `ω` is not
/// packed) the inducing points from `like`.
pub fn unpack<T: Real>(y: &[T], like: &Model<T>, cfg: &FitConfig) -> Result<Model<T>> {
    let p = unpack_parts(y, like, cfg)?;
    let vs = VariationalState::new(p.m, p.l)?;
    Model::new(like.domain().clone(), p.hyper, p.inducing, vs)
}

fn unpack_parts<T: Real>(y: &[T], like: &Model<T>, cfg: &FitConfig) -> Result<Parts<T>> {
    let r = like.domain().dims();
    let mm = like.num_inducing();
    let expected = packed_len(mm, r, cfg.optimize_z);
    if y.len() != expected {
        return Err(VbppError::DimensionMismatch {
            expected,
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(VbppError::NonFinite("packed parameter vector".into()));
    }
    let mut k = 0;
    let mut next = || {
        k += 1;
        y[k - 1]
    };
    let gamma = next().exp();
    let alpha: Vec<T> = (0..r).map(|_| next().exp()).collect();
    let u_bar = next();
    let hyper = HyperParams::new(gamma, alpha, u_bar)?;
    let m = DVector::from_fn(mm, |_, _| next());
    let mut l = DMatrix::zeros(mm, mm);
    for i in 0..mm {
        for j in 0..i {
            l[(i, j)] = next();
        }
        l[(i, i)] = next().exp();
    }
    let inducing = if cfg.optimize_z {
        let om = DMatrix::from_fn(mm, r, |i, c| y[expected - mm * r + i * r + c]);
        InducingPoints::from_omega(om, like.domain())?
    } else {
        like.inducing().clone()
    };
    Ok(Parts { hyper, inducing, m, l })
}

/// Coordinates used internally by the fit driver: `m = ū1 + L_K v` and
/// `L = L_K W`, with `L_K` the Cholesky factor of `K_zz`. Same layout as
/// [`pack`] with `(v, vech(W))` in place of `(m, vech(L))`.
pub(crate) fn pack_whitened<T: Real>(model: &Model<T>, cfg: &FitConfig) -> Result<Vec<T>> {
    let mm = model.num_inducing();
    let lk = model.kzz_cholesky().l();
    let d = model.var_state().m() - DVector::from_element(mm, model.hyper().u_bar);
    let v = lk.solve_lower_triangular(&d).ok_or(VbppError::Cholesky("K_zz"))?;
    let w = lk
        .solve_lower_triangular(model.var_state().l())
        .ok_or(VbppError::Cholesky("K_zz"))?;
    let w = DMatrix::from_fn(mm, mm, |i, j| if j <= i { w[(i, j)] } else { T::zero() });
    let white = model.with_var_state(VariationalState::new(v, w)?)?;
    pack(&white, cfg)
}

pub(crate) fn unpack_whitened<T: Real>(y: &[T], like: &Model<T>, cfg: &FitConfig) -> Result<Model<T>> {
    // decode with the plain layout, then map (v, W) back through L_K
    let raw = unpack_parts(y, like, cfg)?;
    let prior = Model::with_prior_state(like.domain().clone(), raw.hyper, raw.inducing)?;
    let lk = prior.kzz_cholesky().l();
    let m = DVector::from_element(raw.m.len(), prior.hyper().u_bar) + &lk * raw.m;
    let l = lk * raw.l;
    prior.with_var_state(VariationalState::new(m, l)?)
}

struct Parts<T: Real> {
    hyper: HyperParams<T>,
    inducing: InducingPoints<T>,
    m: DVector<T>,
    l: DMatrix<T>,
}
