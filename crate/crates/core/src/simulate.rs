//! Synthetic Cox-process data: a GP draw on a fine grid, a link to a
//! nonnegative intensity, and events by thinning.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbppError};
use crate::kernel::HyperParams;
use crate::pointdata::{midpoint_grid, Domain, EventSet};
use crate::rng::{stream, Purpose};

/// Default grid resolution per dimension.
pub fn default_grid(dims: usize) -> Vec<usize> {
    match dims {
        1 => vec![2048],
        2 => vec![128, 128],
        r => vec![32; r],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Link {
    /// `λ = f²`
    Square,
    /// `λ = λ* / (1 + e^{−f})`
    Sigmoid { lambda_star: f64 },
}

impl Link {
    pub fn apply(&self, f: f64) -> f64 {
        match *self {
            Link::Square => f * f,
            Link::Sigmoid { lambda_star } => lambda_star / (1.0 + (-f).exp()),
        }
    }
}

/// Intensity tabulated at the cell midpoints of a regular grid and taken
/// constant on each cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthGrid {
    pub domain: Domain,
    pub per_dim: Vec<usize>,
    /// Cell midpoints, first dimension varying slowest.
    pub points: DMatrix<f64>,
    pub lambda: Vec<f64>,
}

impl TruthGrid {
    fn cell_index(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for r in 0..self.domain.dims() {
            let k = self.per_dim[r];
            let t = (x[r] - self.domain.lo()[r]) / self.domain.extent(r);
            let c = ((t * k as f64).floor() as isize).clamp(0, k as isize - 1) as usize;
            idx = idx * k + c;
        }
        idx
    }

    /// Nearest-cell intensity.
    pub fn lambda_at(&self, x: &[f64]) -> f64 {
        self.lambda[self.cell_index(x)]
    }

    /// Midpoint-rule `∫ λ`.
    pub fn integral(&self) -> f64 {
        self.lambda.iter().sum::<f64>() * self.domain.measure() / self.lambda.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub grid: TruthGrid,
    pub f_values: Vec<f64>,
    pub link: Link,
}

fn unit_cholesky(coords: &[f64], alpha: f64) -> Result<DMatrix<f64>> {
    let n = coords.len();
    let k = DMatrix::from_fn(n, n, |i, j| (-(coords[i] - coords[j]).powi(2) / (2.0 * alpha)).exp());
    let mut jitter = 1e-8;
    while jitter <= 1e-4 * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok(c.l());
        }
        jitter *= 10.0;
    }
    Err(VbppError::Cholesky("grid covariance"))
}

/// Exact draw of the zero-mean GP with kernel `h` at the cell midpoints of a
/// `per_dim` grid. Returns the grid points and the function values.
///
/// The kernel is separable on a Cartesian grid, so the covariance factor is
/// the Kronecker product of one small Cholesky factor per dimension.
pub fn sample_gp_grid(h: &HyperParams, d: &Domain, per_dim: &[usize], seed: u64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if h.dims() != d.dims() {
        return Err(VbppError::DimensionMismatch {
            expected: d.dims(),
            found: h.dims(),
        });
    }
    let points = midpoint_grid(d, per_dim)?;
    let total = points.nrows();
    let mut rng = stream(seed, Purpose::GroundTruth, 0);
    let mut f: Vec<f64> = (0..total).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut stride = total;
    for r in 0..d.dims() {
        let k = per_dim[r];
        let cell = d.extent(r) / k as f64;
        let coords: Vec<f64> = (0..k).map(|i| d.lo()[r] + (i as f64 + 0.5) * cell).collect();
        let l = unit_cholesky(&coords, h.alpha[r])?;
        // apply L along axis r of the row-major tensor
        stride /= k;
        let outer = total / (k * stride);
        let mut buf = vec![0.0; k];
        for o in 0..outer {
            for s in 0..stride {
                let at = |i: usize| o * k * stride + i * stride + s;
                for i in 0..k {
                    buf[i] = (0..=i).map(|j| l[(i, j)] * f[at(j)]).sum();
                }
                for i in 0..k {
                    f[at(i)] = buf[i];
                }
            }
        }
    }
    let sg = h.gamma.sqrt();
    for v in f.iter_mut() {
        *v *= sg;
    }
    Ok((points, f))
}

impl GroundTruth {
    pub fn generate(h: &HyperParams, d: &Domain, per_dim: &[usize], link: Link, seed: u64) -> Result<Self> {
        if let Link::Sigmoid { lambda_star } = link {
            if !(lambda_star > 0.0) || !lambda_star.is_finite() {
                return Err(VbppError::InvalidParameter("λ* must be positive".into()));
            }
        }
        let (points, f_values) = sample_gp_grid(h, d, per_dim, seed)?;
        let lambda = f_values.iter().map(|&f| link.apply(f)).collect();
        Ok(GroundTruth {
            grid: TruthGrid {
                domain: d.clone(),
                per_dim: per_dim.to_vec(),
                points,
                lambda,
            },
            f_values,
            link,
        })
    }

    pub fn lambda_values(&self) -> &[f64] {
        &self.grid.lambda
    }
}

/// Events of the Poisson process with the nearest-cell intensity of `truth`.
pub fn thin_sample(truth: &TruthGrid, seed: u64) -> Result<EventSet> {
    thin_sample_stream(truth, seed, Purpose::Thinning)
}

/// As [`thin_sample`] from an explicitly chosen random stream, so that
/// training and test sets drawn with one seed are independent.
pub fn thin_sample_stream(truth: &TruthGrid, seed: u64, purpose: Purpose) -> Result<EventSet> {
    let d = &truth.domain;
    let lmax = truth.lambda.iter().copied().fold(0.0, f64::max);
    if !lmax.is_finite() {
        return Err(VbppError::NonFinite("ground-truth intensity".into()));
    }
    if lmax <= 0.0 {
        return Ok(EventSet::empty(d.dims()));
    }
    let mut rng = stream(seed, purpose, 0);
    let j = Poisson::new(lmax * d.measure())
        .map_err(|e| VbppError::InvalidParameter(e.to_string()))?
        .sample(&mut rng) as usize;
    let mut rows = Vec::new();
    for _ in 0..j {
        let x: Vec<f64> = (0..d.dims())
            .map(|r| d.lo()[r] + rng.random::<f64>() * d.extent(r))
            .collect();
        let u: f64 = rng.random();
        if u * lmax < truth.lambda_at(&x) {
            rows.push(x);
        }
    }
    if rows.is_empty() {
        return Ok(EventSet::empty(d.dims()));
    }
    EventSet::from_rows(&rows, d)
}

/// Root-mean-square difference between `estimate` and the truth over its grid.
pub fn rmse(truth: &TruthGrid, estimate: &[f64]) -> Result<f64> {
    if estimate.len() != truth.lambda.len() {
        return Err(VbppError::DimensionMismatch {
            expected: truth.lambda.len(),
            found: estimate.len(),
        });
    }
    let ss: f64 = truth.lambda.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / estimate.len() as f64).sqrt())
}

/// CSV with columns `x1..xR, f, lambda`.
pub fn write_truth<W: Write>(w: W, truth: &GroundTruth) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let r = truth.grid.domain.dims();
    let mut header: Vec<String> = (1..=r).map(|k| format!("x{k}")).collect();
    header.push("f".into());
    header.push("lambda".into());
    wr.write_record(&header)?;
    for i in 0..truth.grid.points.nrows() {
        let mut rec: Vec<String> = (0..r).map(|k| format!("{:?}", truth.grid.points[(i, k)])).collect();
        rec.push(format!("{:?}", truth.f_values[i]));
        rec.push(format!("{:?}", truth.grid.lambda[i]));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_truth(path: impl AsRef<Path>, truth: &GroundTruth) -> Result<()> {
    write_truth(std::io::BufWriter::new(std::fs::File::create(path)?), truth)
}

/// Reads a file written by [`write_truth`]; the grid shape is recovered from
/// the distinct coordinates in each column.
pub fn read_truth<R: Read>(r: R, d: &Domain) -> Result<TruthGrid> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let dims = d.dims();
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut lambda = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != dims + 2 {
            return Err(VbppError::Parse {
                row: row + 2,
                msg: format!("expected {} columns, found {}", dims + 2, rec.len()),
            });
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| VbppError::Parse {
                row: row + 2,
                msg: e.to_string(),
            })?;
        coords.push(vals[..dims].to_vec());
        lambda.push(vals[dims + 1]);
    }
    let per_dim: Vec<usize> = (0..dims)
        .map(|r| {
            let mut v: Vec<f64> = coords.iter().map(|c| c[r]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.len()
        })
        .collect();
    let points = midpoint_grid(d, &per_dim)?;
    if points.nrows() != lambda.len() {
        return Err(VbppError::Mismatch("ground-truth rows do not form a full grid".into()));
    }
    for (i, c) in coords.iter().enumerate() {
        for r in 0..dims {
            if (points[(i, r)] - c[r]).abs() > 1e-9 * d.extent(r) {
                return Err(VbppError::Mismatch("ground-truth grid does not match the domain".into()));
            }
        }
    }
    Ok(TruthGrid {
        domain: d.clone(),
        per_dim,
        points,
        lambda,
    })
}

pub fn load_truth(path: impl AsRef<Path>, d: &Domain) -> Result<TruthGrid> {
    read_truth(std::fs::File::open(path)?, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_link_is_exact() {
        let d = Domain::new(vec![0.0], vec![1.0]).unwrap();
        let h = HyperParams::new(2.0, vec![0.01], 0.0).unwrap();
        let t = GroundTruth::generate(&h, &d, &[64], Link::Square, 3).unwrap();
        for (f, l) in t.f_values.iter().zip(t.lambda_values()) {
            assert_eq!(f * f, *l);
        }
    }

    #[test]
    fn zero_intensity_gives_no_events() {
        let d = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let g = TruthGrid {
            points: midpoint_grid(&d, &[4, 4]).unwrap(),
            domain: d,
            per_dim: vec![4, 4],
            lambda: vec![0.0; 16],
        };
        assert!(thin_sample(&g, 1).unwrap().is_empty());
    }

    #[test]
    fn nearest_cell_lookup() {
        let d = Domain::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        let g = TruthGrid {
            points: midpoint_grid(&d, &[2, 2]).unwrap(),
            domain: d,
            per_dim: vec![2, 2],
            lambda: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(g.lambda_at(&[0.1, 0.1]), 1.0);
        assert_eq!(g.lambda_at(&[0.1, 0.9]), 2.0);
        assert_eq!(g.lambda_at(&[1.9, 0.1]), 3.0);
        assert_eq!(g.lambda_at(&[2.0, 1.0]), 4.0);
    }
}
