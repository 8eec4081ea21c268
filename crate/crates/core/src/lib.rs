//! Adversarial training of linear classifiers on separable data.
//!
//! The crate trains linear models by gradient descent on the worst-case
//! exponential risk under norm-bounded perturbations, solves the max-margin
//! and robust-margin problems whose directions the iterates converge to, and
//! checks the per-iterate inequalities and rates that govern that
//! convergence.

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod gdat;
pub mod margins;
pub mod objective;
pub mod perturbation;
pub mod plot;
pub mod presets;
pub mod runner;
pub mod vecops;

pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use perturbation::{Exponent, PerturbationModel};
