//! Variational state, inducing points and the fitted model with its cached
//! factorisations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbppError};
use crate::kernel::{gram, psi_matrix, HyperParams};
use crate::optimizer::params::z_from_omega;
use crate::optimizer::FitConfig;
use crate::pointdata::Domain;
use crate::scalar::{lit, to_f64, Real};

/// Gaussian `q(u) = N(m, L Lᵀ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState<T: Real = f64> {
    m: DVector<T>,
    l: DMatrix<T>,
}

impl<T: Real> VariationalState<T> {
    pub fn new(m: DVector<T>, l: DMatrix<T>) -> Result<Self> {
        let k = m.len();
        if l.nrows() != k || l.ncols() != k {
            return Err(VbppError::DimensionMismatch {
                expected: k,
                found: l.nrows(),
            });
        }
        for i in 0..k {
            if !(l[(i, i)] > T::zero()) {
                return Err(VbppError::InvalidParameter(format!(
                    "Cholesky diagonal {i} must be positive"
                )));
            }
            for j in i + 1..k {
                if l[(i, j)] != T::zero() {
                    return Err(VbppError::InvalidParameter(
                        "Cholesky factor must be lower triangular".into(),
                    ));
                }
            }
        }
        if m.iter().chain(l.iter()).any(|v| !v.is_finite()) {
            return Err(VbppError::NonFinite("variational state".into()));
        }
        Ok(VariationalState { m, l })
    }

    pub fn m(&self) -> &DVector<T> {
        &self.m
    }

    pub fn l(&self) -> &DMatrix<T> {
        &self.l
    }

    pub fn s(&self) -> DMatrix<T> {
        &self.l * self.l.transpose()
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Inducing locations, optionally driven by unconstrained angles.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingPoints<T: Real = f64> {
    z: DMatrix<T>,
    omega: Option<DMatrix<T>>,
}

impl<T: Real> InducingPoints<T> {
    /// Fixed locations; every point must lie in `domain`.
    pub fn fixed(z: DMatrix<T>, domain: &Domain<T>) -> Result<Self> {
        if z.ncols() != domain.dims() {
            return Err(VbppError::DimensionMismatch {
                expected: domain.dims(),
                found: z.ncols(),
            });
        }
        if z.nrows() == 0 {
            return Err(VbppError::InvalidParameter("no inducing points".into()));
        }
        for i in 0..z.nrows() {
            let p: Vec<T> = z.row(i).iter().copied().collect();
            if !domain.contains(&p) {
                return Err(VbppError::InvalidParameter(format!(
                    "inducing point {i} outside the domain"
                )));
            }
        }
        Ok(InducingPoints { z, omega: None })
    }

    /// Locations given by the sine map of `omega`.
    pub fn from_omega(omega: DMatrix<T>, domain: &Domain<T>) -> Result<Self> {
        let z = z_from_omega(&omega, domain)?;
        if z.nrows() == 0 {
            return Err(VbppError::InvalidParameter("no inducing points".into()));
        }
        Ok(InducingPoints {
            z,
            omega: Some(omega),
        })
    }

    pub fn z(&self) -> &DMatrix<T> {
        &self.z
    }

    pub fn omega(&self) -> Option<&DMatrix<T>> {
        self.omega.as_ref()
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }
}

/// One accepted optimiser iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub elbo: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub trace: Vec<TraceEntry>,
    pub config: FitConfig,
}

#[derive(Clone, Debug)]
pub(crate) struct Cache<T: Real> {
    pub kzz: DMatrix<T>,
    pub chol: Cholesky<T, Dyn>,
    pub psi: DMatrix<T>,
}

impl<T: Real> Cache<T> {
    fn build(hyper: &HyperParams<T>, z: &DMatrix<T>, domain: &Domain<T>) -> Result<Self> {
        let mut kzz = gram(z, z, hyper)?;
        let jit = hyper.jitter();
        for i in 0..kzz.nrows() {
            kzz[(i, i)] += jit;
        }
        let chol = Cholesky::new(kzz.clone()).ok_or(VbppError::Cholesky("K_zz"))?;
        let psi = psi_matrix(z, hyper, domain)?;
        Ok(Cache { kzz, chol, psi })
    }
}

/// Inducing points, hyperparameters and `q(u)` over a domain.
///
/// The Cholesky factor of `K_zz + jitter` and the Ψ matrix are cached and
/// rebuilt whenever the hyperparameters or inducing points change.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f64> {
    domain: Domain<T>,
    hyper: HyperParams<T>,
    inducing: InducingPoints<T>,
    var_state: VariationalState<T>,
    pub(crate) cache: Cache<T>,
    fit: Option<FitMetadata>,
}

impl<T: Real> Model<T> {
    pub fn new(
        domain: Domain<T>,
        hyper: HyperParams<T>,
        inducing: InducingPoints<T>,
        var_state: VariationalState<T>,
    ) -> Result<Self> {
        let r = domain.dims();
        if hyper.dims() != r || inducing.z().ncols() != r {
            return Err(VbppError::DimensionMismatch {
                expected: r,
                found: if hyper.dims() != r { hyper.dims() } else { inducing.z().ncols() },
            });
        }
        if var_state.len() != inducing.len() {
            return Err(VbppError::DimensionMismatch {
                expected: inducing.len(),
                found: var_state.len(),
            });
        }
        let cache = Cache::build(&hyper, inducing.z(), &domain)?;
        Ok(Model {
            domain,
            hyper,
            inducing,
            var_state,
            cache,
            fit: None,
        })
    }

    /// `q(u)` equal to the prior `N(1ū, K_zz)`.
    pub fn with_prior_state(domain: Domain<T>, hyper: HyperParams<T>, inducing: InducingPoints<T>) -> Result<Self> {
        let cache = Cache::build(&hyper, inducing.z(), &domain)?;
        let m = DVector::from_element(inducing.len(), hyper.u_bar);
        let var_state = VariationalState::new(m, cache.chol.l())?;
        Ok(Model {
            domain,
            hyper,
            inducing,
            var_state,
            cache,
            fit: None,
        })
    }

    pub fn domain(&self) -> &Domain<T> {
        &self.domain
    }

    pub fn hyper(&self) -> &HyperParams<T> {
        &self.hyper
    }

    pub fn inducing(&self) -> &InducingPoints<T> {
        &self.inducing
    }

    pub fn var_state(&self) -> &VariationalState<T> {
        &self.var_state
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    pub fn fit_metadata(&self) -> Option<&FitMetadata> {
        self.fit.as_ref()
    }

    pub fn set_fit_metadata(&mut self, meta: FitMetadata) {
        self.fit = Some(meta);
    }

    /// `K_zz + jitter·I`.
    pub fn kzz(&self) -> &DMatrix<T> {
        &self.cache.kzz
    }

    pub fn kzz_cholesky(&self) -> &Cholesky<T, Dyn> {
        &self.cache.chol
    }

    pub fn psi(&self) -> &DMatrix<T> {
        &self.cache.psi
    }

    pub fn with_var_state(&self, var_state: VariationalState<T>) -> Result<Self> {
        if var_state.len() != self.num_inducing() {
            return Err(VbppError::DimensionMismatch {
                expected: self.num_inducing(),
                found: var_state.len(),
            });
        }
        Ok(Model {
            var_state,
            fit: None,
            ..self.clone()
        })
    }

    pub fn with_hyper(&self, hyper: HyperParams<T>) -> Result<Self> {
        Model::new(self.domain.clone(), hyper, self.inducing.clone(), self.var_state.clone())
    }

    pub fn with_inducing(&self, inducing: InducingPoints<T>) -> Result<Self> {
        Model::new(self.domain.clone(), self.hyper.clone(), inducing, self.var_state.clone())
    }

    pub fn to_doc(&self) -> ModelDoc {
        let rows = |m: &DMatrix<T>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().map(|v| to_f64(*v)).collect())
                .collect()
        };
        let l = self.var_state.l();
        let mut tri = Vec::new();
        for i in 0..l.nrows() {
            for j in 0..=i {
                tri.push(to_f64(l[(i, j)]));
            }
        }
        ModelDoc {
            domain: DomainDoc {
                lo: self.domain.lo().iter().map(|v| to_f64(*v)).collect(),
                hi: self.domain.hi().iter().map(|v| to_f64(*v)).collect(),
            },
            hyper: HyperParams {
                gamma: to_f64(self.hyper.gamma),
                alpha: self.hyper.alpha.iter().map(|v| to_f64(*v)).collect(),
                u_bar: to_f64(self.hyper.u_bar),
            },
            z: rows(self.inducing.z()),
            omega: self.inducing.omega().map(rows),
            m: self.var_state.m().iter().map(|v| to_f64(*v)).collect(),
            l: tri,
            fit_metadata: self.fit.clone(),
        }
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<Self> {
        let domain = Domain::new(
            doc.domain.lo.iter().map(|&v| lit(v)).collect(),
            doc.domain.hi.iter().map(|&v| lit(v)).collect(),
        )?;
        let hyper = HyperParams::new(
            lit(doc.hyper.gamma),
            doc.hyper.alpha.iter().map(|&v| lit(v)).collect(),
            lit(doc.hyper.u_bar),
        )?;
        let r = domain.dims();
        let to_mat = |rows: &[Vec<f64>]| -> Result<DMatrix<T>> {
            if let Some(bad) = rows.iter().find(|row| row.len() != r) {
                return Err(VbppError::DimensionMismatch {
                    expected: r,
                    found: bad.len(),
                });
            }
            Ok(DMatrix::from_fn(rows.len(), r, |i, j| lit(rows[i][j])))
        };
        let inducing = match &doc.omega {
            Some(om) => InducingPoints::from_omega(to_mat(om)?, &domain)?,
            None => InducingPoints::fixed(to_mat(&doc.z)?, &domain)?,
        };
        let k = inducing.len();
        if doc.m.len() != k || doc.l.len() != k * (k + 1) / 2 {
            return Err(VbppError::DimensionMismatch {
                expected: k,
                found: doc.m.len(),
            });
        }
        let m = DVector::from_iterator(k, doc.m.iter().map(|&v| lit(v)));
        let mut l = DMatrix::zeros(k, k);
        let mut it = doc.l.iter();
        for i in 0..k {
            for j in 0..=i {
                l[(i, j)] = lit(*it.next().expect("length checked"));
            }
        }
        let mut model = Model::new(domain, hyper, inducing, VariationalState::new(m, l)?)?;
        model.fit = doc.fit_metadata.clone();
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Model::from_doc(&serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDoc {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// On-disk model: `L` is stored as its lower triangle, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub domain: DomainDoc,
    pub hyper: HyperParams<f64>,
    pub z: Vec<Vec<f64>>,
    pub omega: Option<Vec<Vec<f64>>>,
    pub m: Vec<f64>,
    pub l: Vec<f64>,
    pub fit_metadata: Option<FitMetadata>,
}
