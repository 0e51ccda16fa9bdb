//! ARD exponentiated-quadratic kernel, Gram matrices and the Ψ statistic.
//!
//! The kernel is `K(x, x') = γ ∏_r exp(-(x_r - x'_r)² / (2 α_r))`, so `α_r`
//! has units of squared input distance (`α_r = ℓ_r²` for a lengthscale `ℓ_r`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbppError};
use crate::pointdata::Domain;
use crate::scalar::{erf_diff, lit, to_f64, Real};

/// Kernel and prior-mean parameters `{γ, α_1..α_R, ū}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HyperParams<T: Real = f64> {
    #[serde(with = "scalar_serde")]
    pub gamma: T,
    #[serde(with = "scalar_vec_serde")]
    pub alpha: Vec<T>,
    #[serde(with = "scalar_serde")]
    pub u_bar: T,
}

impl<T: Real> HyperParams<T> {
    pub fn new(gamma: T, alpha: Vec<T>, u_bar: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma.is_finite()) {
            return Err(VbppError::InvalidParameter(format!(
                "gamma must be positive, got {}",
                to_f64(gamma)
            )));
        }
        if alpha.is_empty() {
            return Err(VbppError::InvalidParameter("alpha is empty".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > T::zero() && a.is_finite())) {
            return Err(VbppError::InvalidParameter(format!(
                "alpha must be positive, got {}",
                to_f64(*a)
            )));
        }
        if !u_bar.is_finite() {
            return Err(VbppError::InvalidParameter("u_bar not finite".into()));
        }
        Ok(HyperParams { gamma, alpha, u_bar })
    }

    pub fn dims(&self) -> usize {
        self.alpha.len()
    }

    /// Diagonal jitter added to `K_zz` before factorisation.
    pub fn jitter(&self) -> T {
        self.gamma * lit(JITTER)
    }
}

/// Relative diagonal jitter for `K_zz` (multiplied by γ).
pub const JITTER: f64 = 1e-8;

pub fn kernel_eval<T: Real>(x: &[T], x2: &[T], h: &HyperParams<T>) -> Result<T> {
    for v in [x.len(), x2.len()] {
        if v != h.dims() {
            return Err(VbppError::DimensionMismatch {
                expected: h.dims(),
                found: v,
            });
        }
    }
    Ok(kernel_unchecked(x.iter().copied(), x2.iter().copied(), h))
}

#[inline]
pub(crate) fn kernel_unchecked<T: Real>(
    x: impl Iterator<Item = T>,
    x2: impl Iterator<Item = T>,
    h: &HyperParams<T>,
) -> T {
    let half: T = lit(0.5);
    let mut e = T::zero();
    for ((a, b), &al) in x.zip(x2).zip(&h.alpha) {
        let d = a - b;
        e += d * d / al;
    }
    h.gamma * (-(half * e)).exp()
}

/// `G[i, j] = K(a_i, b_j)` for row-point matrices `a` (n×R) and `b` (m×R).
pub fn gram<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, h: &HyperParams<T>) -> Result<DMatrix<T>> {
    for c in [a.ncols(), b.ncols()] {
        if c != h.dims() {
            return Err(VbppError::DimensionMismatch {
                expected: h.dims(),
                found: c,
            });
        }
    }
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        kernel_unchecked(a.row(i).iter().copied(), b.row(j).iter().copied(), h)
    }))
}

/// One dimension's factor of Ψ for the pair `(z, z')`, and the erf difference
/// that appears in it.
struct PsiFactor<T> {
    value: T,
    u_lo: T,
    u_hi: T,
    erf_diff: T,
}

fn psi_factor<T: Real>(z: T, z2: T, alpha: T, lo: T, hi: T) -> PsiFactor<T> {
    let sa = alpha.sqrt();
    let zbar = (z + z2) * lit(0.5);
    let dz = z - z2;
    let u_lo = (zbar - lo) / sa;
    let u_hi = (zbar - hi) / sa;
    let diff = erf_diff(u_lo, u_hi);
    let pre = (T::pi() * alpha).sqrt() * lit(0.5);
    PsiFactor {
        value: pre * (-(dz * dz) / (alpha * lit(4.0))).exp() * diff,
        u_lo,
        u_hi,
        erf_diff: diff,
    }
}

/// `Ψ[i, j] = ∫_T K(z_i, x) K(x, z_j) dx` in closed form.
pub fn psi_matrix<T: Real>(z: &DMatrix<T>, h: &HyperParams<T>, d: &Domain<T>) -> Result<DMatrix<T>> {
    Ok(psi_with_derivatives(z, h, d, false)?.psi)
}

/// Ψ together with the per-dimension log-derivatives used by the gradient.
pub(crate) struct PsiDerivs<T: Real> {
    pub psi: DMatrix<T>,
    /// `∂ log Ψ_ij / ∂ log α_r`, one matrix per dimension.
    pub dlog_alpha: Vec<DMatrix<T>>,
    /// `∂ log Ψ_ij / ∂ z_ir` (derivative in the first argument), per dimension.
    pub dlog_z: Vec<DMatrix<T>>,
}

pub(crate) fn psi_with_derivatives<T: Real>(
    z: &DMatrix<T>,
    h: &HyperParams<T>,
    d: &Domain<T>,
    derivs: bool,
) -> Result<PsiDerivs<T>> {
    let r_dims = h.dims();
    if z.ncols() != r_dims || d.dims() != r_dims {
        return Err(VbppError::DimensionMismatch {
            expected: r_dims,
            found: if z.ncols() != r_dims { z.ncols() } else { d.dims() },
        });
    }
    let m = z.nrows();
    let g2 = h.gamma * h.gamma;
    let mut psi = DMatrix::from_element(m, m, g2);
    let alloc = |n| if derivs { vec![DMatrix::zeros(m, m); n] } else { Vec::new() };
    let mut dlog_alpha = alloc(r_dims);
    let mut dlog_z = alloc(r_dims);
    let inv_sqrt_pi: T = lit(1.0 / std::f64::consts::PI.sqrt());
    for r in 0..r_dims {
        let (al, lo, hi) = (h.alpha[r], d.lo()[r], d.hi()[r]);
        let sa = al.sqrt();
        for i in 0..m {
            for j in i..m {
                let f = psi_factor(z[(i, r)], z[(j, r)], al, lo, hi);
                psi[(i, j)] *= f.value;
                if i != j {
                    psi[(j, i)] *= f.value;
                }
                if !derivs {
                    continue;
                }
                let dz = z[(i, r)] - z[(j, r)];
                let (e_lo, e_hi) = ((-(f.u_lo * f.u_lo)).exp(), (-(f.u_hi * f.u_hi)).exp());
                // d log(erf diff) / d log α
                let dl_erf_la = if f.erf_diff > T::zero() {
                    inv_sqrt_pi * (f.u_hi * e_hi - f.u_lo * e_lo) / f.erf_diff
                } else {
                    T::zero()
                };
                let dla = lit::<T>(0.5) + dz * dz / (al * lit(4.0)) + dl_erf_la;
                dlog_alpha[r][(i, j)] = dla;
                dlog_alpha[r][(j, i)] = dla;
                // d log(erf diff) / d zbar
                let dl_erf_zbar = if f.erf_diff > T::zero() {
                    lit::<T>(2.0) * inv_sqrt_pi * (e_lo - e_hi) / (sa * f.erf_diff)
                } else {
                    T::zero()
                };
                let half: T = lit(0.5);
                dlog_z[r][(i, j)] = -dz / (al * lit(2.0)) + half * dl_erf_zbar;
                dlog_z[r][(j, i)] = dz / (al * lit(2.0)) + half * dl_erf_zbar;
            }
        }
    }
    Ok(PsiDerivs {
        psi,
        dlog_alpha,
        dlog_z,
    })
}

pub(crate) mod scalar_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Real, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(to_f64(*v))
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> std::result::Result<T, D::Error> {
        Ok(lit(f64::deserialize(d)?))
    }
}

pub(crate) mod scalar_vec_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Real, S: Serializer>(v: &[T], s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<f64> = v.iter().map(|x| to_f64(*x)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<T>, D::Error> {
        Ok(Vec::<f64>::deserialize(d)?.into_iter().map(lit).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp(gamma: f64, alpha: Vec<f64>) -> HyperParams {
        HyperParams::new(gamma, alpha, 0.0).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let h = hp(1.3, vec![0.7]);
        assert_eq!(kernel_eval(&[0.4], &[0.4], &h).unwrap(), 1.3);
        let h = hp(1.0, vec![1.0]);
        let v = kernel_eval(&[0.0], &[2f64.sqrt()], &h).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
        let h = hp(2.0, vec![1.0, 4.0]);
        let v = kernel_eval(&[1.0, 2.0], &[0.0, 0.0], &h).unwrap();
        assert!((v - 2.0 * (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.735759).abs() < 1e-6);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let h = hp(1.0, vec![1.0, 1.0]);
        assert!(matches!(
            kernel_eval(&[0.0], &[0.0, 1.0], &h),
            Err(VbppError::DimensionMismatch { expected: 2, found: 1 })
        ));
        let a = DMatrix::<f64>::zeros(3, 1);
        assert!(gram(&a, &a, &h).is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(HyperParams::new(0.0, vec![1.0], 0.0).is_err());
        assert!(HyperParams::new(1.0, vec![-1.0], 0.0).is_err());
        assert!(HyperParams::new(1.0, vec![], 0.0).is_err());
        assert!(HyperParams::new(1.0, vec![1.0], f64::NAN).is_err());
    }

    #[test]
    fn single_point_gram() {
        let h = hp(2.5, vec![1.0]);
        let a = DMatrix::from_row_slice(1, 1, &[0.3]);
        assert_eq!(gram(&a, &a, &h).unwrap()[(0, 0)], 2.5);
    }

    #[test]
    fn psi_on_wide_domain() {
        let h = hp(1.0, vec![1.0]);
        let d = Domain::new(vec![-50.0], vec![50.0]).unwrap();
        let z = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let psi = psi_matrix(&z, &h, &d).unwrap();
        let sp = std::f64::consts::PI.sqrt();
        assert!((psi[(0, 0)] - sp).abs() < 1e-12);
        assert!((psi[(0, 0)] - 1.772454).abs() < 1e-6);
        assert!((psi[(0, 1)] - sp * (-1f64).exp()).abs() < 1e-12);
        assert!((psi[(1, 0)] - 0.652049).abs() < 1e-6);
    }

    #[test]
    fn psi_vanishes_with_domain() {
        let h = hp(1.0, vec![0.5]);
        let z = DMatrix::from_row_slice(1, 1, &[0.3]);
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-3, 1e-6, 1e-9] {
            let d = Domain::new(vec![0.3 - eps], vec![0.3 + eps]).unwrap();
            let v = psi_matrix(&z, &h, &d).unwrap()[(0, 0)];
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn gram_min_eigenvalue_is_nonnegative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let h = hp(1.7, vec![0.3, 2.0]);
        let a = DMatrix::from_fn(50, 2, |_, _| rng.random_range(0.0..3.0));
        let g = gram(&a, &a, &h).unwrap();
        let eig = g.symmetric_eigenvalues();
        assert!(eig.min() >= -1e-10 * 1.7);
    }

    proptest! {
        #[test]
        fn gram_transpose_symmetry(
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            b in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let h = hp(0.9, vec![0.5, 1.5]);
            let a = DMatrix::from_row_slice(3, 2, &a);
            let b = DMatrix::from_row_slice(2, 2, &b);
            let ab = gram(&a, &b, &h).unwrap();
            let ba = gram(&b, &a, &h).unwrap();
            prop_assert!((ab - ba.transpose()).abs().max() == 0.0);
        }

        #[test]
        fn psi_split_additivity(z1 in 0.0f64..3.0, z2 in 0.0f64..3.0, mid in 0.5f64..2.5, alpha in 0.05f64..3.0) {
            let h = hp(1.4, vec![alpha]);
            let z = DMatrix::from_row_slice(2, 1, &[z1, z2]);
            let left = psi_matrix(&z, &h, &Domain::new(vec![0.0], vec![mid]).unwrap()).unwrap();
            let right = psi_matrix(&z, &h, &Domain::new(vec![mid], vec![3.0]).unwrap()).unwrap();
            let whole = psi_matrix(&z, &h, &Domain::new(vec![0.0], vec![3.0]).unwrap()).unwrap();
            prop_assert!((left + right - whole).abs().max() <= 1e-12);
        }

        #[test]
        fn psi_scales_with_gamma_squared(z1 in 0.0f64..1.0, z2 in 0.0f64..1.0, g in 0.1f64..5.0) {
            let d = Domain::new(vec![0.0], vec![1.0]).unwrap();
            let z = DMatrix::from_row_slice(2, 1, &[z1, z2]);
            let p1 = psi_matrix(&z, &hp(1.0, vec![0.2]), &d).unwrap();
            let pg = psi_matrix(&z, &hp(g, vec![0.2]), &d).unwrap();
            prop_assert!((p1 * (g * g) - &pg).abs().max() <= 1e-13 * pg.abs().max());
            prop_assert!(pg.iter().all(|v| *v >= 0.0));
            prop_assert_eq!(pg[(0, 1)], pg[(1, 0)]);
        }
    }
}
