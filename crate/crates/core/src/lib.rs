//! Variational inference for Poisson processes whose intensity is the square
//! of a Gaussian process.
//!
//! The intensity is `λ(x) = f(x)²` with `f` a sparse GP summarised by a
//! Gaussian over its values at a set of inducing points. Fitting maximises a
//! closed-form lower bound on the marginal likelihood, without discretising
//! the domain.
//!
//! ```no_run
//! use vbpp::{fit, Domain, EventSet, FitConfig, InducingSpec};
//!
//! let domain = Domain::parse("0:10").unwrap();
//! let events = EventSet::from_rows(&[vec![1.0], vec![2.5], vec![2.7]], &domain).unwrap();
//! let model = fit(&events, &domain, &InducingSpec::Total(8), &FitConfig::default()).unwrap();
//! println!("{}", model.to_json().unwrap());
//! ```

pub mod baseline;
pub mod bound;
pub mod error;
pub mod kernel;
pub mod model;
pub mod optimizer;
pub mod pointdata;
pub mod predictive;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod specfun;

pub use nalgebra;
pub use bound::{elbo, elbo_gradient, elbo_with_gradient, ElboGradient, ParamSelector};
pub use error::{Result, VbppError};
pub use kernel::{gram, kernel_eval, psi_matrix, HyperParams};
pub use model::{FitMetadata, InducingPoints, Model, ModelDoc, VariationalState};
pub use optimizer::{fit, fit_from, FitConfig, InducingSpec, MapPrior};
pub use pointdata::{load_events, poisson_log_likelihood, save_events, Domain, EventSet};
pub use scalar::Real;
pub use specfun::GTildeTable;

pub type Domain64 = Domain<f64>;
pub type Domain32 = Domain<f32>;
pub type EventSet64 = EventSet<f64>;
pub type EventSet32 = EventSet<f32>;
pub type HyperParams64 = HyperParams<f64>;
pub type HyperParams32 = HyperParams<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
