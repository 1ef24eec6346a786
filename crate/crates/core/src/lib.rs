//! Learned positive-incentive noise for classifiers.
//!
//! A generator network maps a labelled input `(x, y)` to the standard
//! deviations of a zero-mean diagonal Gaussian. Noise drawn from it is added
//! to the classifier input, and both networks are trained by minimising the
//! Monte-Carlo estimate of the negative variational bound
//!
//! ```text
//! L = -1/(n m) * sum_i sum_j log softmax(h(x_i + eps_ij))[y_i],   eps_ij = e_ij * sigma(x_i, y_i)
//! ```
//!
//! with `e_ij ~ N(0, I)`. The crate carries everything needed to run that at
//! desk scale: a small reverse-mode autodiff tape, IDX/synthetic data loading,
//! softmax-regression and MLP classifiers, the generator, the training
//! regimes, per-class noisy inference and variance heatmap export.

pub mod autodiff;
pub mod data_io;
mod error;
pub mod inference;
pub mod models;
pub mod pinoise;
pub mod rng;
pub mod training;

pub use error::{Result, VpnError};
