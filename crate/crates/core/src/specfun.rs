//! The special function `G̃(z) = ∂₁ ₁F₁(0, ½, z)` and its lookup table.
//!
//! `G̃` enters the bound through `E[log f²] = -G̃(-μ²/2σ²) + log(σ²/2) - C`
//! for `f ~ N(μ, σ²)`.
//!
//! Two evaluation routes are used. For small `|z|` the defining series
//! `2z Σ_j j! z^j / ((2)_j (3/2)_j)` is summed directly. It alternates with
//! terms of size `~e^{|z|}`, so for larger `|z|` its Kummer-transformed form
//! `G̃(z) = ψ(½) - E[ψ(J + ½)]`, `J ~ Poisson(-z)`, is used; that is a
//! positive-weight average and loses no precision. The derivative is
//! `G̃'(z) = E[1 / (J + ½)]` on the whole half-line.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Result, VbppError};
use crate::scalar::{lit, to_f64, Real, EULER_GAMMA};

/// `ψ(½) = -C - 2 log 2`.
const DIGAMMA_HALF: f64 = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;

/// Largest `|z|` summed with the direct series.
const DIRECT_SERIES_LIMIT: f64 = 4.0;
const MAX_TERMS: usize = 100_000;

/// Neumaier compensated accumulator.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn direct_series(z: f64) -> Result<f64> {
    let mut acc = Compensated::default();
    let mut term = 1.0;
    for j in 0..MAX_TERMS {
        acc.add(term);
        if term.abs() <= 1e-17 * acc.value().abs() {
            return Ok(2.0 * z * acc.value());
        }
        let jf = j as f64;
        term *= z * (jf + 1.0) / ((jf + 2.0) * (jf + 1.5));
    }
    Err(VbppError::SpecfunConvergence(z.abs()))
}

/// Digamma for `x ≥ 6` by its asymptotic expansion.
fn digamma_asymptotic(x: f64) -> f64 {
    let r = 1.0 / (x * x);
    x.ln() - 0.5 / x
        - r * (1.0 / 12.0 - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r / 132.0))))
}

/// `ψ(j + ½)`.
fn digamma_half_integer(j: usize) -> f64 {
    if j >= 6 {
        digamma_asymptotic(j as f64 + 0.5)
    } else {
        DIGAMMA_HALF + (1..=j).map(|k| 2.0 / (2 * k - 1) as f64).sum::<f64>()
    }
}

/// Normalised Poisson(a) weights over the window carrying all but a
/// negligible amount of mass, returned with the first index of the window.
fn poisson_window(a: f64) -> Result<(usize, Vec<f64>)> {
    let half_width = 40.0 * a.sqrt() + 40.0;
    if half_width > 4.0 * MAX_TERMS as f64 {
        return Err(VbppError::SpecfunConvergence(a));
    }
    let mode = a.floor() as usize;
    let lo = (a - half_width).max(0.0).floor() as usize;
    let hi = (a + half_width).ceil() as usize;
    let mut w = vec![0.0; hi - lo + 1];
    w[mode - lo] = 1.0;
    for j in mode + 1..=hi {
        w[j - lo] = w[j - 1 - lo] * a / j as f64;
    }
    for j in (lo..mode).rev() {
        w[j - lo] = w[j + 1 - lo] * (j + 1) as f64 / a;
    }
    let mut total = Compensated::default();
    w.iter().for_each(|&v| total.add(v));
    let total = total.value();
    w.iter_mut().for_each(|v| *v /= total);
    Ok((lo, w))
}

fn kummer_series(a: f64) -> Result<f64> {
    let (lo, w) = poisson_window(a)?;
    let mut psi = digamma_half_integer(lo);
    let mut acc = Compensated::default();
    for (k, &wk) in w.iter().enumerate() {
        acc.add(wk * psi);
        psi += 1.0 / ((lo + k) as f64 + 0.5);
    }
    Ok(DIGAMMA_HALF - acc.value())
}

/// `G̃(z)` for `z ≤ 0`, accurate to ~1e-13 relative.
pub fn g_tilde_series(z: f64) -> Result<f64> {
    if z.is_nan() || z > 0.0 {
        return Err(VbppError::SpecfunDomain(z));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if -z <= DIRECT_SERIES_LIMIT {
        direct_series(z)
    } else {
        kummer_series(-z)
    }
}

/// `G̃'(z) = E[1/(J + ½)]`, `J ~ Poisson(-z)`.
pub fn g_tilde_deriv_series(z: f64) -> Result<f64> {
    if z.is_nan() || z > 0.0 {
        return Err(VbppError::SpecfunDomain(z));
    }
    if z == 0.0 {
        return Ok(2.0);
    }
    let (lo, w) = poisson_window(-z)?;
    let mut acc = Compensated::default();
    for (k, &wk) in w.iter().enumerate() {
        acc.add(wk / ((lo + k) as f64 + 0.5));
    }
    Ok(acc.value())
}

/// Knots per decade of `|z|`.
const KNOTS_PER_DECADE: i32 = 32;
const K_MIN: i32 = -256;
const K_MAX: i32 = 160;

const MAGIC: &[u8; 4] = b"GTBL";
const FORMAT_VERSION: u32 = 1;

/// Precomputed `G̃` and `G̃'` on log-spaced knots `0, -10^{k/32}`,
/// `k = -256..=160`, interpolated with cubic Hermite segments.
#[derive(Clone, Debug, PartialEq)]
pub struct GTildeTable {
    knots: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl GTildeTable {
    pub fn build() -> Result<Self> {
        let mut knots = vec![0.0];
        knots.extend((K_MIN..=K_MAX).map(|k| -(10f64.powf(k as f64 / KNOTS_PER_DECADE as f64))));
        let values = knots.iter().map(|&z| g_tilde_series(z)).collect::<Result<Vec<_>>>()?;
        let derivs = knots
            .iter()
            .map(|&z| g_tilde_deriv_series(z))
            .collect::<Result<Vec<_>>>()?;
        Ok(GTildeTable {
            knots,
            values,
            derivs,
        })
    }

    /// Process-wide table, built on first use.
    pub fn global() -> &'static GTildeTable {
        static TABLE: OnceLock<GTildeTable> = OnceLock::new();
        TABLE.get_or_init(|| GTildeTable::build().expect("G-tilde table construction"))
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    /// Most negative tabulated argument.
    pub fn min_z(&self) -> f64 {
        *self.knots.last().expect("non-empty table")
    }

    /// Index `i` with `knots[i+1] <= z <= knots[i]`.
    fn segment(&self, z: f64) -> usize {
        let a = -z;
        let last = self.knots.len() - 2;
        let mut i = if a <= -self.knots[1] {
            0
        } else {
            let k = (a.log10() * KNOTS_PER_DECADE as f64).floor() as i64 - K_MIN as i64 + 1;
            k.clamp(0, last as i64) as usize
        };
        while i > 0 && z > self.knots[i] {
            i -= 1;
        }
        while i < last && z < self.knots[i + 1] {
            i += 1;
        }
        i
    }

    /// `(G̃(z), G̃'(z))`.
    pub fn eval(&self, z: f64) -> Result<(f64, f64)> {
        if z.is_nan() || z > 0.0 {
            return Err(VbppError::SpecfunDomain(z));
        }
        if z < self.min_z() {
            let a = -z;
            return Ok((DIGAMMA_HALF - a.ln() + 0.5 / a, 1.0 / a + 0.5 / (a * a)));
        }
        let i = self.segment(z);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let t = (z - x0) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (d0, d1) = (self.derivs[i] * h, self.derivs[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1;
        let slope = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * d0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * d1)
            / h;
        Ok((value, slope))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.knots.len() as u64).to_le_bytes())?;
        for arr in [&self.knots, &self.values, &self.derivs] {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a cached table; `Ok(None)` when the blob is foreign or stale.
    pub fn read_from<R: Read>(mut r: R) -> Result<Option<Self>> {
        let mut magic = [0u8; 4];
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        if r.read_exact(&mut magic).is_err() || &magic != MAGIC {
            return Ok(None);
        }
        r.read_exact(&mut u32b)?;
        if u32::from_le_bytes(u32b) != FORMAT_VERSION {
            return Ok(None);
        }
        r.read_exact(&mut u64b)?;
        let n = u64::from_le_bytes(u64b) as usize;
        if n != (K_MAX - K_MIN + 2) as usize {
            return Ok(None);
        }
        let mut read_arr = || -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    r.read_exact(&mut u64b)?;
                    Ok(f64::from_le_bytes(u64b))
                })
                .collect()
        };
        let knots = read_arr()?;
        let values = read_arr()?;
        let derivs = read_arr()?;
        Ok(Some(GTildeTable {
            knots,
            values,
            derivs,
        }))
    }

    /// Loads the cached table at `path`, rebuilding and rewriting it when
    /// absent or version-mismatched.
    pub fn load_or_build(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Ok(f) = std::fs::File::open(path) {
            if let Ok(Some(t)) = GTildeTable::read_from(std::io::BufReader::new(f)) {
                return Ok(t);
            }
        }
        let t = GTildeTable::build()?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        t.write_to(&mut w)?;
        w.flush()?;
        Ok(t)
    }
}

/// Table lookup in any scalar type.
pub fn g_tilde<T: Real>(z: T, table: &GTildeTable) -> Result<(T, T)> {
    let (v, d) = table.eval(to_f64(z))?;
    Ok((lit(v), lit(d)))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from the defining series summed in 50-digit
    // arithmetic (mpmath), to convergence.
    const REFERENCE: [(f64, f64); 6] = [
        (-0.001, -0.001_999_333_511_073_022_7),
        (-1.0, -1.478_883_260_198_158_6),
        (-5.0, -3.448_275_692_941_852_5),
        (-20.0, -4.933_213_967_244_360_1),
        (-100.0, -6.563_642_069_983_954_2),
        (-10000.0, -11.173_800_394_246_981),
    ];

    #[test]
    fn series_matches_reference() {
        for (z, want) in REFERENCE {
            let got = g_tilde_series(z).unwrap();
            assert!(((got - want) / want).abs() < 1e-12, "z={z}: {got} vs {want}");
        }
        assert!((g_tilde_series(-1.0).unwrap() + 1.479).abs() < 2e-4);
    }

    #[test]
    fn series_zero_and_domain() {
        assert_eq!(g_tilde_series(0.0).unwrap(), 0.0);
        assert!(matches!(g_tilde_series(0.5), Err(VbppError::SpecfunDomain(_))));
        assert!(g_tilde_deriv_series(1.0).is_err());
        let g10 = g_tilde_series(-10.0).unwrap();
        assert!(g10 < g_tilde_series(-1.0).unwrap());
    }

    #[test]
    fn routes_agree_where_both_apply() {
        for z in [-0.5, -1.0, -2.0, -3.0, -4.0, -6.0, -8.0] {
            let d = direct_series(z).unwrap();
            let k = kummer_series(-z).unwrap();
            assert!((d - k).abs() < 1e-11 * d.abs().max(1.0), "z={z}: {d} vs {k}");
        }
    }

    #[test]
    fn derivative_matches_differences_of_series() {
        for z in [-0.01f64, -0.7, -3.9, -4.1, -30.0, -2000.0] {
            let h = 1e-4 * (1.0 + z.abs());
            let fd = (g_tilde_series(z + h).unwrap() - g_tilde_series(z - h).unwrap()) / (2.0 * h);
            let d = g_tilde_deriv_series(z).unwrap();
            assert!(((fd - d) / d).abs() < 1e-6, "z={z}: {fd} vs {d}");
        }
    }

    #[test]
    fn table_layout() {
        let t = GTildeTable::global();
        assert_eq!(t.knots().len(), 418);
        assert_eq!(t.values()[0], 0.0);
        assert!(t.knots().windows(2).all(|w| w[1] < w[0]));
        assert!(t.values().windows(2).all(|w| w[1] < w[0]));
        assert!(t.derivs().iter().all(|&d| d > 0.0));
        assert!((t.min_z() + 1e5).abs() < 1e-6);
    }

    #[test]
    fn table_exact_at_knots() {
        let t = GTildeTable::global();
        for i in [0, 1, 57, 256, 300, 417] {
            let (v, d) = t.eval(t.knots()[i]).unwrap();
            assert_eq!(v, t.values()[i]);
            assert!((d - t.derivs()[i]).abs() <= 1e-12 * d.abs());
        }
        let (v, d) = t.eval(0.0).unwrap();
        assert_eq!((v, d), (0.0, 2.0));
    }

    #[test]
    fn table_tracks_series() {
        let t = GTildeTable::global();
        let mut z = -1e-9;
        while z > -9e4 {
            let (v, _) = t.eval(z).unwrap();
            let s = g_tilde_series(z).unwrap();
            assert!((v - s).abs() / (s.abs() + 1e-12) <= 1e-6, "z={z}");
            z *= 1.37;
        }
    }

    #[test]
    fn interpolated_derivative_matches_differences() {
        let t = GTildeTable::global();
        for i in (1..t.knots().len() - 1).step_by(13) {
            let mid = 0.5 * (t.knots()[i] + t.knots()[i + 1]);
            let h = 1e-6 * (t.knots()[i] - t.knots()[i + 1]);
            let fd = (t.eval(mid + h).unwrap().0 - t.eval(mid - h).unwrap().0) / (2.0 * h);
            let d = t.eval(mid).unwrap().1;
            assert!(((fd - d) / d).abs() < 1e-4, "z={mid}");
        }
    }

    #[test]
    fn asymptotic_extension_is_continuous() {
        let t = GTildeTable::global();
        let edge = t.min_z();
        let inside = t.eval(edge).unwrap();
        let outside = t.eval(edge * (1.0 + 1e-12)).unwrap();
        assert!((inside.0 - outside.0).abs() < 1e-9);
        assert!(((inside.1 - outside.1) / inside.1).abs() < 1e-6);
        let far = t.eval(-1e9).unwrap();
        assert!(far.0 < inside.0 && far.1 > 0.0);
    }

    #[test]
    fn cache_roundtrip_and_version_check() {
        let t = GTildeTable::global();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = GTildeTable::read_from(buf.as_slice()).unwrap().unwrap();
        assert_eq!(&back, t);
        buf[4] = 99;
        assert!(GTildeTable::read_from(buf.as_slice()).unwrap().is_none());
        assert!(GTildeTable::read_from(&b"XXXX"[..]).unwrap().is_none());
    }

    #[test]
    fn load_or_build_writes_cache() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.bin");
        let a = GTildeTable::load_or_build(&p).unwrap();
        assert!(p.exists());
        let b = GTildeTable::load_or_build(&p).unwrap();
        assert_eq!(a, b);
    }
}
