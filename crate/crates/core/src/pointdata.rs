//! Observation domains, event sets, CSV ingestion and the inhomogeneous
//! Poisson log-likelihood.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Result, VbppError};
use crate::rng::{self, Purpose};
use crate::scalar::{lit, to_f64, Real};

/// Closed hyper-rectangle `[lo_1, hi_1] × … × [lo_R, hi_R]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain<T: Real = f64> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> Domain<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.is_empty() {
            return Err(VbppError::InvalidDomain("zero dimensions".into()));
        }
        if lo.len() != hi.len() {
            return Err(VbppError::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        for (r, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) {
                return Err(VbppError::InvalidDomain(format!("dimension {r} not finite")));
            }
            if h <= l {
                return Err(VbppError::InvalidDomain(format!(
                    "dimension {r}: upper bound {} not above lower bound {}",
                    to_f64(h),
                    to_f64(l)
                )));
            }
        }
        Ok(Domain { lo, hi })
    }

    /// Parses `lo1:hi1[,lo2:hi2,...]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for part in spec.split(',') {
            let (l, h) = part
                .split_once(':')
                .ok_or_else(|| VbppError::InvalidDomain(format!("expected lo:hi, got {part:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| VbppError::InvalidDomain(format!("{s:?}: {e}")))
            };
            lo.push(lit(parse(l)?));
            hi.push(lit(parse(h)?));
        }
        Domain::new(lo, hi)
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn extent(&self, r: usize) -> T {
        self.hi[r] - self.lo[r]
    }

    /// `|T| = ∏_r (hi_r - lo_r)`.
    pub fn measure(&self) -> T {
        (0..self.dims()).fold(T::one(), |acc, r| acc * self.extent(r))
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dims()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    pub fn to_spec(&self) -> String {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| format!("{}:{}", to_f64(*l), to_f64(*h)))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn cast<U: Real>(&self) -> Domain<U> {
        Domain {
            lo: self.lo.iter().map(|&v| lit(to_f64(v))).collect(),
            hi: self.hi.iter().map(|&v| lit(to_f64(v))).collect(),
        }
    }
}

/// Cell midpoints of a regular grid with `per_dim[r]` cells along dimension
/// `r`, as rows of a matrix (first dimension varies slowest).
pub fn midpoint_grid<T: Real>(domain: &Domain<T>, per_dim: &[usize]) -> Result<DMatrix<T>> {
    if per_dim.len() != domain.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: domain.dims(),
            found: per_dim.len(),
        });
    }
    if per_dim.contains(&0) {
        return Err(VbppError::InvalidParameter("grid resolution must be positive".into()));
    }
    let total: usize = per_dim.iter().product();
    let r_dims = domain.dims();
    let mut out = DMatrix::zeros(total, r_dims);
    for idx in 0..total {
        let mut rem = idx;
        for r in (0..r_dims).rev() {
            let k = rem % per_dim[r];
            rem /= per_dim[r];
            let cell = domain.extent(r) / lit(per_dim[r] as f64);
            out[(idx, r)] = domain.lo[r] + cell * (lit::<T>(k as f64) + lit(0.5));
        }
    }
    Ok(out)
}

/// Volume of one cell of [`midpoint_grid`].
pub fn grid_cell_volume<T: Real>(domain: &Domain<T>, per_dim: &[usize]) -> T {
    let cells: usize = per_dim.iter().product();
    domain.measure() / lit(cells as f64)
}

/// Observed points, one row per event.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSet<T: Real = f64> {
    points: DMatrix<T>,
}

impl<T: Real> EventSet<T> {
    /// Validates every row against `domain`.
    pub fn new(points: DMatrix<T>, domain: &Domain<T>) -> Result<Self> {
        if points.ncols() != domain.dims() {
            return Err(VbppError::DimensionMismatch {
                expected: domain.dims(),
                found: points.ncols(),
            });
        }
        for n in 0..points.nrows() {
            for r in 0..points.ncols() {
                let v = points[(n, r)];
                if !v.is_finite() {
                    return Err(VbppError::NonFinite(format!("event {n}, coordinate {r}")));
                }
                if v < domain.lo[r] || v > domain.hi[r] {
                    return Err(VbppError::OutOfBounds {
                        row: n + 1,
                        dim: r,
                        value: to_f64(v),
                        lo: to_f64(domain.lo[r]),
                        hi: to_f64(domain.hi[r]),
                    });
                }
            }
        }
        Ok(EventSet { points })
    }

    pub fn from_rows(rows: &[Vec<T>], domain: &Domain<T>) -> Result<Self> {
        let r = domain.dims();
        if let Some(bad) = rows.iter().find(|row| row.len() != r) {
            return Err(VbppError::DimensionMismatch {
                expected: r,
                found: bad.len(),
            });
        }
        let points = DMatrix::from_fn(rows.len(), r, |n, d| rows[n][d]);
        EventSet::new(points, domain)
    }

    pub fn empty(dims: usize) -> Self {
        EventSet {
            points: DMatrix::zeros(0, dims),
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<T> {
        &self.points
    }

    pub fn point(&self, n: usize) -> Vec<T> {
        self.points.row(n).iter().copied().collect()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        EventSet {
            points: self.points.select_rows(rows),
        }
    }

    /// Allocates each event independently to the first subset with
    /// probability `p`; the order of events is kept inside each subset.
    pub fn split(&self, p: f64, seed: u64) -> (Self, Self) {
        let mut rng = rng::stream(seed, Purpose::Split, 0);
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for n in 0..self.len() {
            if rng.random::<f64>() < p {
                first.push(n);
            } else {
                second.push(n);
            }
        }
        (self.select(&first), self.select(&second))
    }
}

fn parse_row(record: &csv::StringRecord) -> Option<Vec<f64>> {
    record.iter().map(|f| f.trim().parse::<f64>().ok()).collect()
}

/// Reads comma-separated events. A non-numeric first row is treated as a header.
pub fn read_events<T: Real, R: Read>(reader: R, domain: &Domain<T>) -> Result<EventSet<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let vals = match parse_row(&rec) {
            Some(v) => v,
            None if i == 0 => continue,
            None => {
                return Err(VbppError::Parse {
                    row: row_no,
                    msg: format!("non-numeric field in {:?}", rec.iter().collect::<Vec<_>>()),
                })
            }
        };
        if vals.len() != domain.dims() {
            return Err(VbppError::Parse {
                row: row_no,
                msg: format!("expected {} columns, found {}", domain.dims(), vals.len()),
            });
        }
        for (r, &v) in vals.iter().enumerate() {
            if !v.is_finite() {
                return Err(VbppError::Parse {
                    row: row_no,
                    msg: format!("non-finite value in column {r}"),
                });
            }
            let (l, h) = (to_f64(domain.lo[r]), to_f64(domain.hi[r]));
            if v < l || v > h {
                return Err(VbppError::OutOfBounds {
                    row: row_no,
                    dim: r,
                    value: v,
                    lo: l,
                    hi: h,
                });
            }
        }
        rows.push(vals.into_iter().map(lit).collect());
    }
    EventSet::from_rows(&rows, domain)
}

pub fn load_events<T: Real>(path: impl AsRef<Path>, domain: &Domain<T>) -> Result<EventSet<T>> {
    let file = std::fs::File::open(path)?;
    read_events(std::io::BufReader::new(file), domain)
}

/// Writes one event per line, no header, shortest round-trip decimal form.
pub fn write_events<T: Real, W: Write>(mut w: W, events: &EventSet<T>) -> Result<()> {
    for n in 0..events.len() {
        let line = (0..events.dims())
            .map(|r| format!("{}", to_f64(events.points[(n, r)])))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn save_events<T: Real>(path: impl AsRef<Path>, events: &EventSet<T>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_events(&mut w, events)?;
    w.flush()?;
    Ok(())
}

/// `log p(D | λ) = -∫λ + Σ_n log λ(x_n)`.
pub fn poisson_log_likelihood<T: Real>(log_rates_at_events: &[T], integrated_rate: T) -> Result<T> {
    if !integrated_rate.is_finite() || integrated_rate < T::zero() {
        return Err(VbppError::NonFinite(format!(
            "integrated rate {}",
            to_f64(integrated_rate)
        )));
    }
    let mut total = -integrated_rate;
    for (n, &l) in log_rates_at_events.iter().enumerate() {
        if !l.is_finite() {
            return Err(VbppError::NonFinite(format!("log-rate at event {n}")));
        }
        total += l;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> Domain {
        Domain::new(vec![0.0], vec![1.0]).unwrap()
    }

    #[test]
    fn measure_examples() {
        assert_eq!(unit().measure(), 1.0);
        assert_eq!(Domain::new(vec![0.0, 0.0], vec![2.0, 3.0]).unwrap().measure(), 6.0);
        assert_eq!(Domain::<f64>::parse("-1:1,-1:1,-1:1").unwrap().measure(), 8.0);
    }

    #[test]
    fn degenerate_domains_rejected() {
        assert!(Domain::new(vec![1.0], vec![1.0]).is_err());
        assert!(Domain::new(vec![2.0], vec![1.0]).is_err());
        assert!(Domain::<f64>::new(vec![], vec![]).is_err());
        assert!(Domain::<f64>::parse("0-1").is_err());
    }

    #[test]
    fn domain_spec_roundtrip() {
        let d = Domain::<f64>::parse(" 0:1 , -2.5:3").unwrap();
        assert_eq!(d.dims(), 2);
        assert_eq!(d.to_spec(), "0:1,-2.5:3");
    }

    #[test]
    fn reads_plain_rows() {
        let ev = read_events("0.5\n0.7\n".as_bytes(), &unit()).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev.point(1), vec![0.7]);
    }

    #[test]
    fn empty_file_is_empty_set() {
        let ev = read_events("".as_bytes(), &unit()).unwrap();
        assert!(ev.is_empty());
        assert_eq!(ev.dims(), 1);
    }

    #[test]
    fn header_is_skipped_and_whitespace_trimmed() {
        let d = Domain::<f64>::parse("0:1,0:2").unwrap();
        let ev = read_events("x , y\n 0.1 , 1.5\n0,2\n".as_bytes(), &d).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev.point(0), vec![0.1, 1.5]);
    }

    #[test]
    fn out_of_bounds_names_coordinate() {
        let err = read_events("0.2\n1.5\n".as_bytes(), &unit()).unwrap_err();
        match err {
            VbppError::OutOfBounds { row, dim, value, .. } => {
                assert_eq!((row, dim, value), (2, 0, 1.5));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let err = read_events("0.2\n0.3\nabc\n".as_bytes(), &unit()).unwrap_err();
        assert!(matches!(err, VbppError::Parse { row: 3, .. }), "{err}");
    }

    #[test]
    fn boundary_points_accepted() {
        let ev = read_events("0\n1\n".as_bytes(), &unit()).unwrap();
        assert_eq!(ev.len(), 2);
    }

    #[test]
    fn likelihood_examples() {
        let l2 = 2f64.ln();
        let v = poisson_log_likelihood(&[l2, l2, l2], 2.0).unwrap();
        assert!((v - (-2.0 + 3.0 * l2)).abs() < 1e-15);
        assert!((v - 0.07944).abs() < 1e-5);
        assert_eq!(poisson_log_likelihood::<f64>(&[], 5.0).unwrap(), -5.0);
        assert_eq!(poisson_log_likelihood(&[0.0], 1.0).unwrap(), -1.0);
        assert!(poisson_log_likelihood(&[f64::NAN], 1.0).is_err());
        assert!(poisson_log_likelihood::<f64>(&[], f64::INFINITY).is_err());
    }

    #[test]
    fn midpoint_grid_layout() {
        let d = Domain::<f64>::parse("0:1,0:2").unwrap();
        let g: DMatrix<f64> = midpoint_grid(&d, &[2, 4]).unwrap();
        assert_eq!(g.nrows(), 8);
        assert_eq!((g[(0, 0)], g[(0, 1)]), (0.25, 0.25));
        assert_eq!((g[(1, 0)], g[(1, 1)]), (0.25, 0.75));
        assert_eq!((g[(7, 0)], g[(7, 1)]), (0.75, 1.75));
        assert_eq!(grid_cell_volume(&d, &[2, 4]), 0.25);
        assert!(midpoint_grid(&d, &[2]).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let d = unit();
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0]).collect();
        let ev = EventSet::from_rows(&rows, &d).unwrap();
        let (a, b) = ev.split(0.5, 7);
        let (c, _) = ev.split(0.5, 7);
        assert_eq!(a, c);
        assert_eq!(a.len() + b.len(), 100);
        assert!(a.len() > 30 && a.len() < 70);
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(vals in proptest::collection::vec(0.0f64..=1.0, 0..40)) {
            let d = unit();
            let rows: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
            let ev = EventSet::from_rows(&rows, &d).unwrap();
            let mut buf = Vec::new();
            write_events(&mut buf, &ev).unwrap();
            let back = read_events(buf.as_slice(), &d).unwrap();
            prop_assert_eq!(back, ev);
        }

        #[test]
        fn likelihood_is_permutation_invariant(mut v in proptest::collection::vec(-5.0f64..5.0, 0..20), lam in 0.0f64..50.0) {
            let a = poisson_log_likelihood(&v, lam).unwrap();
            v.reverse();
            let b = poisson_log_likelihood(&v, lam).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn measure_is_multiplicative(e1 in 0.1f64..10.0, e2 in 0.1f64..10.0) {
            let d = Domain::new(vec![0.0, 1.0], vec![e1, 1.0 + e2]).unwrap();
            let prod = Domain::new(vec![0.0], vec![e1]).unwrap().measure()
                * Domain::new(vec![1.0], vec![1.0 + e2]).unwrap().measure();
            prop_assert!((d.measure() - prod).abs() <= 1e-12 * prod);
        }
    }
}
