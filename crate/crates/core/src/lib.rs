//! Blind single-image denoising by joint optimization of a signal grid and
//! a noise grid under signal priors (piecewise constancy, total variation)
//! and noise-whiteness priors (autocorrelation, stationarity). No clean
//! ground truth is required; the decomposition is driven entirely by the
//! composite loss.
//!
//! Module map:
//! - [`grid`]: image container, PGM I/O, difference operators
//! - [`noise`]: AWGN synthesis, blind sigma estimation, phantoms
//! - [`segment`]: graph-based segmentation and the piecewise target
//! - [`loss`]: the five loss terms and the stochastic composite
//! - [`optim`]: Adam loop over the (signal, noise) grids
//! - [`metrics`]: PSNR, SSIM, paired t-test
//! - [`nlm`]: non-local means baseline
//! - [`bench`]: experiment configuration, benchmark driver, reports

// `!(x > 0.0)`-style guards deliberately reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod nlm;
pub mod noise;
pub mod optim;
pub mod segment;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
pub use grid::{load_pgm, save_pgm, ImageGrid, PixelIndex};
pub use loss::{DecompositionState, LossBreakdown, LossConfig, StochasticDraw, TermValues};
pub use noise::{add_awgn, estimate_sigma, generate_phantom, NoiseModel, PhantomSpec};
pub use optim::{denoise, InitStrategy, OptimizationTrace, OptimizerConfig};
pub use segment::{felzenszwalb_segment, piecewise_target, SegmentationLabels, SegmentationParams};
