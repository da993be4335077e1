//! Rasch models fitted by conditional maximum likelihood, together with tools
//! for checking measurement invariance: two-group DIF tests with anchoring,
//! score-based parameter instability tests, Rasch trees and Rasch mixtures.

pub mod dataset;
pub mod diftest;
pub mod error;
pub mod esf;
mod montecarlo;
pub mod rasch;
pub mod raschmix;
pub mod raschtree;
pub mod sctest;
pub mod simulate;

pub use dataset::{Covariate, CovariateKind, CovariateValues, ExamDataset, ItemResponses};
pub use error::{Error, Result};
pub use rasch::{fit_cml, fit_cml_with, itempar, personpar, CmlOptions, Constraint, RaschFit};
