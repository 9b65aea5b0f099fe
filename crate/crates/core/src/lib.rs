//! Divergence-minimization estimation for finite mixture models.

pub mod density;
pub mod divergence;
pub mod dm;
pub mod error;
pub mod inference;
pub mod io;
pub mod kmeans;
pub mod mixtures;
pub mod optim;
pub mod quadrature;
pub mod robustness;
pub mod segment;
pub mod selection;

pub use density::{DensityEstimate, DiscreteKernel};
pub use divergence::{Divergence, RafEnvelope};
pub use dm::{fit, fit_estimate, fit_target, FitConfig, FitResult, Init, PiUpdate, Target};
pub use error::{Error, Result};
pub use mixtures::{Component, Family, MixtureSpec};
