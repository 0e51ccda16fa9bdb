//! Independent numerical oracles for the vbpp test suites.
//!
//! Nothing here shares code with the library: quadrature, dense-matrix
//! formulas and Monte-Carlo estimators are written from their definitions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15-point Gauss–Kronrod rule: (Kronrod estimate, |Kronrod − Gauss|).
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod quadrature of `f` over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the total
/// estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    for _ in 0..20_000 {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    // sum small to large
    let mut vals: Vec<f64> = parts.iter().map(|p| p.2).collect();
    vals.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    vals.iter().sum()
}

/// Nested adaptive quadrature over a rectangle.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(f: F, lo: [f64; 2], hi: [f64; 2], abs_tol: f64, rel_tol: f64) -> f64 {
    integrate(
        |x| integrate(|y| f(x, y), lo[1], hi[1], abs_tol * 1e-2, rel_tol * 1e-2),
        lo[0],
        hi[0],
        abs_tol,
        rel_tol,
    )
}

/// Derivative of `f` at `x` by Ridders' extrapolation of central differences,
/// starting from step `h` and shrinking it by 1.4 per stage. Returns the
/// estimate and its error estimate.
pub fn ridders<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> (f64, f64) {
    const STAGES: usize = 10;
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    let mut a = [[0.0f64; STAGES]; STAGES];
    let mut hh = h;
    a[0][0] = (f(x + hh) - f(x - hh)) / (2.0 * hh);
    let mut best = a[0][0];
    let mut err = f64::INFINITY;
    for i in 1..STAGES {
        hh /= CON;
        a[0][i] = (f(x + hh) - f(x - hh)) / (2.0 * hh);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        // stop once higher order makes things worse
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    (best, err)
}

/// ARD exponentiated-quadratic kernel, written out directly.
pub fn se_kernel(x: &[f64], y: &[f64], gamma: f64, alpha: &[f64]) -> f64 {
    let mut s = 0.0;
    for r in 0..x.len() {
        s += (x[r] - y[r]).powi(2) / (2.0 * alpha[r]);
    }
    gamma * (-s).exp()
}

/// `KL(N(m, S) || N(mu, K))` from dense determinants and an explicit inverse.
pub fn gaussian_kl(m: &DVector<f64>, s: &DMatrix<f64>, mu: &DVector<f64>, k: &DMatrix<f64>) -> f64 {
    let kinv = k.clone().try_inverse().expect("invertible prior covariance");
    let d = mu - m;
    let n = m.len() as f64;
    0.5 * ((&kinv * s).trace() + (k.determinant() / s.determinant()).ln() - n + (d.transpose() * &kinv * &d)[(0, 0)])
}

/// `(mean, standard error)` of `E[log f²]`, `f ~ N(mu, var)`, from `n` draws.
pub fn mc_expected_log_sq(mu: f64, var: f64, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sd = var.sqrt();
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(&mut rng);
        let f = mu + sd * e;
        let v = (f * f).ln();
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var_est = (s2 / n as f64 - mean * mean).max(0.0);
    (mean, (var_est / n as f64).sqrt())
}

/// Lower Cholesky factor of a dense SPD matrix, adding `jitter` to the diagonal.
pub fn cholesky(a: &DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)] + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = if i == j { s.max(0.0).sqrt() } else { s / l[(j, j)] };
        }
    }
    l
}

/// `log ∫ exp(w_i)` style reduction: `log(mean(exp(v)))` and the standard
/// error of that estimate from the delta method.
pub fn log_mean_exp(v: &[f64]) -> (f64, f64) {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mx + mean.ln(), (var / n).sqrt() / mean)
}

/// Monte-Carlo estimate of `log p(D | Θ)` for a 1D GP-squared Poisson process.
///
/// Draws the prior GP `f ~ N(mean, K)` jointly at the events and at the
/// midpoints of a `grid`-cell partition of `[lo, hi]`, and averages
/// `exp(Σ log f(x_n)² − Σ_cells f² Δ)`. Returns `(estimate, stderr)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_log_evidence_1d<M: Fn(f64) -> f64>(
    events: &[f64],
    lo: f64,
    hi: f64,
    gamma: f64,
    alpha: f64,
    mean: M,
    grid: usize,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let dx = (hi - lo) / grid as f64;
    let mut pts: Vec<f64> = events.to_vec();
    pts.extend((0..grid).map(|k| lo + (k as f64 + 0.5) * dx));
    let n = pts.len();
    let k = DMatrix::from_fn(n, n, |i, j| se_kernel(&[pts[i]], &[pts[j]], gamma, &[alpha]));
    let l = cholesky(&k, 1e-8 * gamma);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ne = events.len();
    let mu: Vec<f64> = pts.iter().map(|&x| mean(x)).collect();
    let mut logs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let e = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let f = &l * e;
        let mut v = 0.0;
        for i in 0..ne {
            v += ((f[i] + mu[i]).powi(2)).ln();
        }
        for i in ne..n {
            v -= (f[i] + mu[i]).powi(2) * dx;
        }
        logs.push(v);
    }
    log_mean_exp(&logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridders_on_smooth_functions() {
        let (d, e) = ridders(f64::exp, 1.0, 0.1);
        assert!((d - std::f64::consts::E).abs() < 1e-12, "{d} {e}");
        let (d, _) = ridders(|x| (3.0 * x).sin() * 1e6, 0.2, 0.1);
        assert!((d - 3e6 * (0.6f64).cos()).abs() < 1e-5);
    }

    #[test]
    fn gauss_integral() {
        let v = integrate(|x| (-x * x).exp(), -30.0, 30.0, 1e-14, 1e-13);
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        let v2 = integrate_2d(|x, y| x * y, [0.0, 0.0], [1.0, 2.0], 1e-14, 1e-12);
        assert!((v2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = DVector::from_vec(vec![0.3, -0.1]);
        assert!(gaussian_kl(&m, &k, &m, &k).abs() < 1e-14);
    }

    #[test]
    fn mc_log_sq_standard_normal() {
        // E[log Z²] = −γ − log 2
        let want = -0.5772156649015329 - std::f64::consts::LN_2;
        let (m, se) = mc_expected_log_sq(0.0, 1.0, 200_000, 1);
        assert!((m - want).abs() < 4.0 * se);
    }
}
