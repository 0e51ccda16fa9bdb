//! The variational lower bound and its analytic gradient.
//!
//! With `a = K⁻¹m`, `P = K⁻¹ΨK⁻¹` and `Q = K⁻¹SK⁻¹` (`K = K_zz + jitter`):
//!
//! ```text
//! L = -(aᵀΨa + γ|T| - tr(K⁻¹Ψ) + tr(QΨ)) + Σ_n E[log f_n²] - KL(q(u) || p(u))
//! ```
//!
//! The gradient is accumulated with respect to the primitive matrices
//! (`K`, `Ψ`, `K_xz`, `S`, `m`) and then pushed through the kernel to
//! `log γ`, `log α_r`, `ū`, the inducing locations and the sine angles.
//! Events are processed in fixed-size chunks, so the cost is `O(N M²)`
//! and memory is bounded independently of `N`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VbppError};
use crate::kernel::{gram, kernel_eval, psi_with_derivatives};
use crate::model::Model;
use crate::pointdata::EventSet;
use crate::scalar::{lit, Real, EULER_GAMMA};
use crate::specfun::{g_tilde, GTildeTable};

/// Lower clamp on `σ_n²` before taking `E[log f²]`.
pub const MIN_VARIANCE: f64 = 1e-12;

const CHUNK: usize = 2048;

/// Which blocks of the packed parameter vector a gradient covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSelector {
    pub log_gamma: bool,
    pub log_alpha: bool,
    pub u_bar: bool,
    pub m: bool,
    pub chol: bool,
    pub omega: bool,
}

impl ParamSelector {
    pub const fn all() -> Self {
        ParamSelector {
            log_gamma: true,
            log_alpha: true,
            u_bar: true,
            m: true,
            chol: true,
            omega: true,
        }
    }

    pub const fn none() -> Self {
        ParamSelector {
            log_gamma: false,
            log_alpha: false,
            u_bar: false,
            m: false,
            chol: false,
            omega: false,
        }
    }

    /// Everything except the inducing-point angles.
    pub const fn fixed_z() -> Self {
        ParamSelector {
            omega: false,
            ..Self::all()
        }
    }
}

/// Gradient of the bound, one field per parameter block.
///
/// `chol` is over `vech(L)` (row-major lower triangle) with the diagonal in
/// log space. `z` is the gradient with respect to the raw inducing locations;
/// `omega` is its image under the sine map, present when the model has
/// angles.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboGradient<T: Real = f64> {
    pub log_gamma: T,
    pub log_alpha: Vec<T>,
    pub u_bar: T,
    pub m: DVector<T>,
    pub chol: Vec<T>,
    pub z: DMatrix<T>,
    pub omega: Option<DMatrix<T>>,
}

impl<T: Real> ElboGradient<T> {
    /// Selected blocks concatenated in packing order
    /// `[log γ, log α, ū, m, vech(L), ω]`.
    pub fn to_vec(&self, sel: ParamSelector) -> Result<Vec<T>> {
        let mut out = Vec::new();
        if sel.log_gamma {
            out.push(self.log_gamma);
        }
        if sel.log_alpha {
            out.extend_from_slice(&self.log_alpha);
        }
        if sel.u_bar {
            out.push(self.u_bar);
        }
        if sel.m {
            out.extend(self.m.iter().copied());
        }
        if sel.chol {
            out.extend_from_slice(&self.chol);
        }
        if sel.omega {
            let om = self
                .omega
                .as_ref()
                .ok_or_else(|| VbppError::InvalidParameter("model has no inducing angles".into()))?;
            for i in 0..om.nrows() {
                out.extend(om.row(i).iter().copied());
            }
        }
        Ok(out)
    }
}

/// Terms of one bound evaluation.
#[derive(Clone, Debug)]
pub struct BoundTerms<T: Real> {
    pub value: T,
    pub int_mean_sq: T,
    pub int_var: T,
    pub data: T,
    pub kl: T,
    pub gradient: Option<ElboGradient<T>>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EvalOptions {
    pub include_kl: bool,
    /// Replace `S` by the zero matrix.
    pub collapse_s: bool,
    pub gradient: bool,
    /// Report the `m` and `L` blocks of the gradient in whitened coordinates
    /// `m = ū1 + L_K v`, `L = L_K W` (with `L_K` the Cholesky factor of
    /// `K_zz`), and include the dependence of `L_K` on Θ and `Z`.
    pub whitened: bool,
}

/// `(μ̃(x), Σ̃(x, x))` under `q(f)`.
pub fn qf_marginal<T: Real>(x: &[T], model: &Model<T>) -> Result<(T, T)> {
    let pts = DMatrix::from_row_slice(1, x.len(), x);
    let (mu, var) = qf_marginals(&pts, model, false)?;
    Ok((mu[0], var[0]))
}

/// Batched marginals at the rows of `points`; with `collapse_s` the
/// covariance of `q(u)` is taken as zero.
pub fn qf_marginals<T: Real>(
    points: &DMatrix<T>,
    model: &Model<T>,
    collapse_s: bool,
) -> Result<(DVector<T>, DVector<T>)> {
    let h = model.hyper();
    let kxz = gram(points, model.inducing().z(), h)?;
    let bm = model.cache.chol.solve(&kxz.transpose());
    let mu = bm.transpose() * model.var_state().m();
    let s = model.var_state().s();
    let sb = &s * &bm;
    let min_var: T = lit(MIN_VARIANCE);
    let var = DVector::from_fn(points.nrows(), |i, _| {
        let mut v = h.gamma - kxz.row(i).transpose().dot(&bm.column(i));
        if !collapse_s {
            v += bm.column(i).dot(&sb.column(i));
        }
        if v < min_var {
            min_var
        } else {
            v
        }
    });
    Ok((mu, var))
}

/// `KL(N(m, S) || N(1ū, K_zz))`.
pub fn kl_qu_pu<T: Real>(model: &Model<T>) -> Result<T> {
    let chol = &model.cache.chol;
    let vs = model.var_state();
    let k = vs.len();
    let lk = chol.l();
    let half: T = lit(0.5);
    // tr(K⁻¹S) = ‖L_K⁻¹ L‖²_F
    let w = lk
        .solve_lower_triangular(vs.l())
        .ok_or(VbppError::Cholesky("K_zz"))?;
    let trace = w.norm_squared();
    let logdet_k = (0..k).fold(T::zero(), |acc, i| acc + lk[(i, i)].ln()) * lit(2.0);
    let logdet_s = (0..k).fold(T::zero(), |acc, i| acc + vs.l()[(i, i)].ln()) * lit(2.0);
    let d = DVector::from_element(k, model.hyper().u_bar) - vs.m();
    let e = lk.solve_lower_triangular(&d).ok_or(VbppError::Cholesky("K_zz"))?;
    Ok(half * (trace + logdet_k - logdet_s - lit(k as f64) + e.norm_squared()))
}

/// `E[log f²]` for `f ~ N(μ, σ²)`, with its partial derivatives in `μ` and `σ²`.
pub fn expected_log_f_sq_with_grad<T: Real>(mu: T, var: T, table: &GTildeTable) -> Result<(T, T, T)> {
    let two: T = lit(2.0);
    let z = -(mu * mu) / (two * var);
    let (g, gp) = g_tilde(z, table)?;
    let value = -g + (var / two).ln() - lit(EULER_GAMMA);
    let d_mu = gp * mu / var;
    let d_var = -gp * mu * mu / (two * var * var) + T::one() / var;
    Ok((value, d_mu, d_var))
}

pub fn expected_log_f_sq<T: Real>(mu: T, var: T, table: &GTildeTable) -> Result<T> {
    Ok(expected_log_f_sq_with_grad(mu, var, table)?.0)
}

/// `(∫ μ̃(x)² dx, ∫ Σ̃(x, x) dx)` over the domain.
pub fn integral_terms<T: Real>(model: &Model<T>) -> Result<(T, T)> {
    let (a, b) = integral_parts(model, false);
    Ok((a, b))
}

pub(crate) fn integral_parts<T: Real>(model: &Model<T>, collapse_s: bool) -> (T, T) {
    let chol = &model.cache.chol;
    let psi = &model.cache.psi;
    let h = model.hyper();
    let a = chol.solve(model.var_state().m());
    let int_mean_sq = a.dot(&(psi * &a));
    let kinv_psi = chol.solve(psi);
    let mut int_var = h.gamma * model.domain().measure() - kinv_psi.trace();
    if !collapse_s {
        let s = model.var_state().s();
        // tr(K⁻¹ S K⁻¹ Ψ) = tr(S · K⁻¹ΨK⁻¹)
        let p = chol.solve(&kinv_psi.transpose());
        int_var += s.component_mul(&p).sum();
    }
    (int_mean_sq, int_var)
}

/// The evidence lower bound.
pub fn elbo<T: Real>(model: &Model<T>, events: &EventSet<T>) -> Result<T> {
    let opts = EvalOptions {
        include_kl: true,
        collapse_s: false,
        gradient: false,
        whitened: false,
    };
    Ok(evaluate(model, events, opts, GTildeTable::global())?.value)
}

/// The bound and its gradient over the selected parameter blocks, in packing order.
pub fn elbo_gradient<T: Real>(
    model: &Model<T>,
    events: &EventSet<T>,
    sel: ParamSelector,
) -> Result<(T, Vec<T>)> {
    let (value, g) = elbo_with_gradient(model, events)?;
    Ok((value, g.to_vec(sel)?))
}

/// The bound and its full structured gradient.
pub fn elbo_with_gradient<T: Real>(model: &Model<T>, events: &EventSet<T>) -> Result<(T, ElboGradient<T>)> {
    let opts = EvalOptions {
        include_kl: true,
        collapse_s: false,
        gradient: true,
        whitened: false,
    };
    let t = evaluate(model, events, opts, GTildeTable::global())?;
    Ok((t.value, t.gradient.expect("gradient requested")))
}

/// Accumulators for the gradient with respect to the primitive matrices.
struct Adjoints<T: Real> {
    kzz: DMatrix<T>,
    psi: DMatrix<T>,
    s: DMatrix<T>,
    m: DVector<T>,
    /// Explicit `∂/∂γ` (not through any kernel matrix).
    gamma: T,
    u_bar: T,
    /// Contributions already pushed through `K_xz`.
    log_gamma_kxz: T,
    log_alpha_kxz: Vec<T>,
    z_kxz: DMatrix<T>,
}

pub(crate) fn evaluate<T: Real>(
    model: &Model<T>,
    events: &EventSet<T>,
    opts: EvalOptions,
    table: &GTildeTable,
) -> Result<BoundTerms<T>> {
    if events.dims() != model.domain().dims() {
        return Err(VbppError::DimensionMismatch {
            expected: model.domain().dims(),
            found: events.dims(),
        });
    }
    let h = model.hyper();
    let z = model.inducing().z();
    let vs = model.var_state();
    let chol = &model.cache.chol;
    let psi = &model.cache.psi;
    let mm = model.num_inducing();
    let r_dims = h.dims();
    let two: T = lit(2.0);
    let half: T = lit(0.5);
    let min_var: T = lit(MIN_VARIANCE);
    let measure = model.domain().measure();

    let m = vs.m();
    let s = if opts.collapse_s {
        DMatrix::zeros(mm, mm)
    } else {
        vs.s()
    };
    let a = chol.solve(m);

    let (int_mean_sq, int_var) = integral_parts(model, opts.collapse_s);

    let mut adj = opts.gradient.then(|| Adjoints {
        kzz: DMatrix::zeros(mm, mm),
        psi: DMatrix::zeros(mm, mm),
        s: DMatrix::zeros(mm, mm),
        m: DVector::zeros(mm),
        gamma: T::zero(),
        u_bar: T::zero(),
        log_gamma_kxz: T::zero(),
        log_alpha_kxz: vec![T::zero(); r_dims],
        z_kxz: DMatrix::zeros(mm, r_dims),
    });

    // Data term, chunk by chunk.
    let x_all = events.points();
    let n = events.len();
    let mut data = T::zero();
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        let x = x_all.rows(start, len).into_owned();
        let kxz = gram(&x, z, h)?;
        let bm = chol.solve(&kxz.transpose());
        let mu = kxz.clone() * &a;
        let sb = &s * &bm;
        let mut g_mu = DVector::zeros(len);
        let mut g_s = DVector::zeros(len);
        let mut chunk_sum = T::zero();
        for i in 0..len {
            let raw = h.gamma - kxz.row(i).transpose().dot(&bm.column(i)) + bm.column(i).dot(&sb.column(i));
            let (var, clamped) = if raw < min_var { (min_var, true) } else { (raw, false) };
            let (e, dmu, dvar) = expected_log_f_sq_with_grad(mu[i], var, table)?;
            chunk_sum += e;
            g_mu[i] = dmu;
            g_s[i] = if clamped { T::zero() } else { dvar };
        }
        data += chunk_sum;

        if let Some(adj) = adj.as_mut() {
            let cm = chol.solve(&sb);
            let bgmu = &bm * &g_mu;
            adj.m += &bgmu;
            let mut bm_gs = bm.clone();
            for (i, mut col) in bm_gs.column_iter_mut().enumerate() {
                col *= g_s[i];
            }
            let b_gs_bt = &bm_gs * bm.transpose();
            adj.s += &b_gs_bt;
            let c_gs_bt = &cm * bm_gs.transpose();
            adj.kzz += b_gs_bt - &bgmu * a.transpose() - &c_gs_bt - c_gs_bt.transpose();
            adj.gamma += g_s.sum();

            // Push ∂/∂K_xz through the kernel.
            for i in 0..len {
                for j in 0..mm {
                    let gk = g_mu[i] * a[j] + two * g_s[i] * (cm[(j, i)] - bm[(j, i)]);
                    let w = gk * kxz[(i, j)];
                    adj.log_gamma_kxz += w;
                    for r in 0..r_dims {
                        let d = x[(i, r)] - z[(j, r)];
                        adj.log_alpha_kxz[r] += w * d * d / (two * h.alpha[r]);
                        adj.z_kxz[(j, r)] += w * d / h.alpha[r];
                    }
                }
            }
        }
        start += len;
    }

    let kl = if opts.include_kl { kl_qu_pu(model)? } else { T::zero() };
    let value = -(int_mean_sq + int_var) + data - kl;

    let gradient = match adj {
        None => None,
        Some(mut adj) => {
            let kinv = chol.inverse();
            let p = &kinv * psi * &kinv;
            let q = &kinv * &s * &kinv;
            let pm = &kinv * (psi * &a);

            // -(A + B)
            adj.m -= &pm * two;
            adj.psi += &kinv - &q - &a * a.transpose();
            adj.kzz += &a * pm.transpose() + &pm * a.transpose() - &p + &p * &s * &kinv + &q * psi * &kinv;
            adj.s -= &p;
            adj.gamma -= measure;

            // -KL
            if opts.include_kl {
                let d = DVector::from_element(mm, h.u_bar) - m;
                let e = &kinv * &d;
                adj.s -= &kinv * half;
                adj.m += &e;
                adj.u_bar -= e.sum();
                adj.kzz += (&q - &kinv + &e * e.transpose()) * half;
            }
            Some(finish_gradient(model, adj, opts.include_kl, opts.whitened)?)
        }
    };

    Ok(BoundTerms {
        value,
        int_mean_sq,
        int_var,
        data,
        kl,
        gradient,
    })
}

fn lower<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| if j <= i { a[(i, j)] } else { T::zero() })
}

fn finish_gradient<T: Real>(
    model: &Model<T>,
    mut adj: Adjoints<T>,
    include_kl: bool,
    whitened: bool,
) -> Result<ElboGradient<T>> {
    let h = model.hyper();
    let z = model.inducing().z();
    let kzz = &model.cache.kzz;
    let mm = model.num_inducing();
    let r_dims = h.dims();
    let two: T = lit(2.0);
    let half: T = lit(0.5);
    let vs = model.var_state();
    let l = vs.l();

    // S = L Lᵀ  ⇒  ∂/∂L = (G + Gᵀ) L on the lower triangle.
    let mut gl = lower(&((&adj.s + adj.s.transpose()) * l));
    if include_kl {
        // +½ log|S| = Σ log L_ii
        for i in 0..mm {
            gl[(i, i)] += T::one() / l[(i, i)];
        }
    }

    let (g_m, g_tri, diag_scale) = if whitened {
        let lk = model.cache.chol.l();
        let w = lk.solve_lower_triangular(l).ok_or(VbppError::Cholesky("K_zz"))?;
        let d = vs.m() - DVector::from_element(mm, h.u_bar);
        let v = lk.solve_lower_triangular(&d).ok_or(VbppError::Cholesky("K_zz"))?;
        adj.u_bar += adj.m.sum();
        let g_v = lk.transpose() * &adj.m;
        let g_w = lower(&(lk.transpose() * &gl));
        // back through the Cholesky factor: K̄ = L⁻ᵀ Φ(Lᵀ L̄) L⁻¹
        let lbar = lower(&(&adj.m * v.transpose() + &gl * w.transpose()));
        let mut p = lower(&(lk.transpose() * lbar));
        for i in 0..mm {
            p[(i, i)] *= half;
        }
        let lt = lk.transpose();
        let a1 = lt
            .solve_upper_triangular(&p)
            .ok_or(VbppError::Cholesky("K_zz"))?;
        let kbar = lt
            .solve_upper_triangular(&a1.transpose())
            .ok_or(VbppError::Cholesky("K_zz"))?
            .transpose();
        adj.kzz += (&kbar + kbar.transpose()) * half;
        let diag: Vec<T> = (0..mm).map(|i| w[(i, i)]).collect();
        (g_v, g_w, diag)
    } else {
        let diag: Vec<T> = (0..mm).map(|i| l[(i, i)]).collect();
        (adj.m.clone(), gl, diag)
    };

    let mut chol = Vec::with_capacity(mm * (mm + 1) / 2);
    for i in 0..mm {
        for j in 0..i {
            chol.push(g_tri[(i, j)]);
        }
        chol.push(g_tri[(i, i)] * diag_scale[i]);
    }

    let pd = psi_with_derivatives(z, h, model.domain(), true)?;
    let psi = &pd.psi;
    let psi_w = adj.psi.component_mul(psi);

    let log_gamma = adj.kzz.component_mul(kzz).sum() + psi_w.sum() * two + adj.log_gamma_kxz + h.gamma * adj.gamma;

    let mut log_alpha = adj.log_alpha_kxz.clone();
    let mut zgrad = adj.z_kxz.clone();
    let gk_sym = &adj.kzz + adj.kzz.transpose();
    let gpsi_sym = &adj.psi + adj.psi.transpose();
    for r in 0..r_dims {
        let al = h.alpha[r];
        let mut acc = T::zero();
        for i in 0..mm {
            for j in 0..mm {
                let d = z[(i, r)] - z[(j, r)];
                let kij = kzz[(i, j)];
                if i != j {
                    acc += adj.kzz[(i, j)] * kij * d * d / (two * al);
                    zgrad[(i, r)] -= gk_sym[(i, j)] * kij * d / al;
                }
                acc += psi_w[(i, j)] * pd.dlog_alpha[r][(i, j)];
                zgrad[(i, r)] += gpsi_sym[(i, j)] * psi[(i, j)] * pd.dlog_z[r][(i, j)];
            }
        }
        log_alpha[r] += acc;
    }

    let omega = model.inducing().omega().map(|om| {
        let d = model.domain();
        DMatrix::from_fn(mm, r_dims, |i, r| {
            let half_extent = d.extent(r) * lit(0.5);
            zgrad[(i, r)] * half_extent * om[(i, r)].cos()
        })
    });

    Ok(ElboGradient {
        log_gamma,
        log_alpha,
        u_bar: adj.u_bar,
        m: g_m,
        chol,
        z: zgrad,
        omega,
    })
}

/// Prior variance check helper: `k(x, x)`.
pub fn prior_variance<T: Real>(x: &[T], model: &Model<T>) -> Result<T> {
    kernel_eval(x, x, model.hyper())
}
