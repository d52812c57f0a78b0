//! Histogram-transform density estimation.
//!
//! Each of `H` random affine maps `A_i = U_i diag(lambda_i)`, `b_i` sends the
//! training set onto the integer lattice; the estimate averages the
//! resulting histograms (mapped back through the bin volume
//! `|det A_i|^-1`) and mixes in a Gaussian for cells no training point
//! reached.

mod filling;
mod histogram;
mod io;
mod model;
mod prior;
mod transform;

pub use filling::{filling_rate, FILLING_GRID};
pub use histogram::SparseHistogram;
pub use model::{build_histogram, HtConfig, HtModel};
pub use prior::{mean_and_covariance, GaussianPrior};
pub use transform::{lambda_hat, sample_offset, sample_rotation, sample_scales, AffineTransform};
