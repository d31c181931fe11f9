//! Shared helpers for unit tests: deterministic random grids and the
//! central finite-difference oracle used to check analytic gradients.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::grid::ImageGrid;

pub fn random_grid(width: usize, height: usize, seed: u64, range: Range<f64>) -> ImageGrid {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ImageGrid::from_vec(
        width,
        height,
        (0..width * height)
            .map(|_| rng.gen_range(range.clone()))
            .collect(),
    )
    .unwrap()
}

/// Central finite differences of a scalar functional, evaluated
/// independently of any analytic gradient path.
pub fn finite_difference_grad(
    point: &ImageGrid,
    h: f64,
    mut f: impl FnMut(&ImageGrid) -> f64,
) -> ImageGrid {
    let mut grad = ImageGrid::zeros(point.width(), point.height());
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.pixels_mut()[i] += h;
        let mut minus = point.clone();
        minus.pixels_mut()[i] -= h;
        grad.pixels_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    grad
}

/// Max relative error between two gradients. `floor` is the absolute
/// scale below which entries compare absolutely instead of relatively;
/// it should sit at the cancellation-noise level of the finite-difference
/// oracle (roughly machine epsilon times the loss value over the step).
pub fn max_rel_err(analytic: &ImageGrid, reference: &ImageGrid, floor: f64) -> f64 {
    analytic
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}
