//! The five loss terms driving the signal/noise decomposition, each exposed
//! as value plus analytic gradient with respect to the optimization grids,
//! and the weighted stochastic composite that the optimizer consumes.
//!
//! Signal terms: gradient matching against the piecewise-constant target
//! (`pc_loss`) and Charbonnier-smoothed total variation (`tv_loss`).
//! Noise terms: squared sample autocorrelation at randomly drawn spatial
//! lags (`ac_loss`) and a blockwise stationarity penalty built from the
//! cross-entropy between a softmax over block standard deviations and the
//! uniform distribution (`st_loss`). `rec_loss` anchors the decomposition
//! to the observation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{mirror_index, ImageGrid};

/// The optimization variable: paired signal and noise grids for one
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionState {
    pub signal: ImageGrid,
    pub noise: ImageGrid,
}

impl DecompositionState {
    pub fn new(signal: ImageGrid, noise: ImageGrid) -> Result<Self> {
        signal.check_same_shape(&noise)?;
        Ok(DecompositionState { signal, noise })
    }
}

fn default_block_sizes() -> Vec<usize> {
    vec![2, 4, 8, 16]
}

/// Per-term enable weights and stochastic-schedule parameters.
///
/// The default weights are all 1 except total variation at 5e-5; block
/// sizes default to {2, 4, 8, 16}. A term with weight 0 is skipped
/// entirely, which makes this struct the switchboard for ablations.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub weight_rec: f64,
    pub weight_ac: f64,
    pub weight_st: f64,
    pub weight_pc: f64,
    pub weight_tv: f64,
    /// Lags are drawn uniformly from [-ac_max_lag, ac_max_lag]^2 \ {(0,0)}.
    pub ac_max_lag: usize,
    pub ac_lags_per_step: usize,
    pub st_block_sizes: Vec<usize>,
    /// Added to the per-block variance before the square root so a
    /// constant block does not produce a gradient singularity.
    pub st_epsilon: f64,
    /// Softmax temperature over block standard deviations; 1 reproduces
    /// the plain softmax.
    pub st_temperature: f64,
    /// Charbonnier smoothing half-width for the total variation term.
    pub tv_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weight_rec: 1.0,
            weight_ac: 1.0,
            weight_st: 1.0,
            weight_pc: 1.0,
            weight_tv: 5e-5,
            ac_max_lag: 16,
            ac_lags_per_step: 1,
            st_block_sizes: default_block_sizes(),
            st_epsilon: 1e-8,
            st_temperature: 1.0,
            tv_epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.weight_rec,
            self.weight_ac,
            self.weight_st,
            self.weight_pc,
            self.weight_tv,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidParameter(
                "at least one loss weight must be positive".into(),
            ));
        }
        if self.ac_max_lag == 0 {
            return Err(Error::InvalidParameter("ac_max_lag must be >= 1".into()));
        }
        if self.ac_lags_per_step == 0 {
            return Err(Error::InvalidParameter(
                "ac_lags_per_step must be >= 1".into(),
            ));
        }
        if self.st_block_sizes.is_empty() {
            return Err(Error::InvalidParameter(
                "st_block_sizes must be non-empty".into(),
            ));
        }
        if self.st_block_sizes.iter().any(|&b| b < 2) {
            return Err(Error::InvalidParameter(
                "stationarity block sizes must be >= 2".into(),
            ));
        }
        if !(self.st_epsilon > 0.0) || !(self.tv_epsilon > 0.0) || !(self.st_temperature > 0.0) {
            return Err(Error::InvalidParameter(
                "st_epsilon, tv_epsilon and st_temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One step's randomness: the autocorrelation lags and the stationarity
/// block size, recorded in the trace for replay.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticDraw {
    pub lags: Vec<(i32, i32)>,
    pub block_size: usize,
}

impl StochasticDraw {
    /// Draws lags and a block size for a grid of the given dimensions.
    ///
    /// Lag bounds are clipped to the grid so reflect padding stays valid;
    /// block sizes that cannot produce two complete blocks are excluded.
    /// When the grid admits no usable draw for a component, the draw is
    /// left degenerate (empty lags / smallest configured block) and the
    /// corresponding loss reports the error if it is actually evaluated.
    pub fn sample(rng: &mut impl Rng, config: &LossConfig, width: usize, height: usize) -> Self {
        let row_max = config.ac_max_lag.min(height.saturating_sub(1)) as i32;
        let col_max = config.ac_max_lag.min(width.saturating_sub(1)) as i32;
        let mut lags = Vec::with_capacity(config.ac_lags_per_step);
        if row_max > 0 || col_max > 0 {
            while lags.len() < config.ac_lags_per_step {
                let l = rng.gen_range(-row_max..=row_max);
                let m = rng.gen_range(-col_max..=col_max);
                if (l, m) != (0, 0) {
                    lags.push((l, m));
                }
            }
        }

        let usable: Vec<usize> = config
            .st_block_sizes
            .iter()
            .copied()
            .filter(|&b| (width / b) * (height / b) >= 2)
            .collect();
        let block_size = if usable.is_empty() {
            *config
                .st_block_sizes
                .iter()
                .min()
                .expect("validated non-empty")
        } else {
            usable[rng.gen_range(0..usable.len())]
        };

        StochasticDraw { lags, block_size }
    }
}

/// Unweighted per-term loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct TermValues {
    pub rec: f64,
    pub ac: f64,
    pub st: f64,
    pub pc: f64,
    pub tv: f64,
}

impl TermValues {
    pub fn as_pairs(&self) -> [(&'static str, f64); 5] {
        [
            ("rec", self.rec),
            ("ac", self.ac),
            ("st", self.st),
            ("pc", self.pc),
            ("tv", self.tv),
        ]
    }
}

/// Weighted total, unweighted per-term values, and the accumulated
/// gradients with respect to signal and noise.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_term: TermValues,
    pub grad_signal: ImageGrid,
    pub grad_noise: ImageGrid,
}

/// Reconstruction loss `(1/M) sum (x - s - n)^2` with its gradients
/// (identical for signal and noise).
pub fn rec_loss(x: &ImageGrid, state: &DecompositionState) -> Result<(f64, ImageGrid, ImageGrid)> {
    x.check_same_shape(&state.signal)?;
    x.check_same_shape(&state.noise)?;
    let m = x.len() as f64;
    let mut value = 0.0;
    let mut grad = ImageGrid::zeros(x.width(), x.height());
    for i in 0..x.len() {
        let r = x.pixels()[i] - state.signal.pixels()[i] - state.noise.pixels()[i];
        value += r * r;
        grad.pixels_mut()[i] = -2.0 * r / m;
    }
    Ok((value / m, grad.clone(), grad))
}

fn check_lag(lag: (i32, i32), width: usize, height: usize) -> Result<()> {
    if lag == (0, 0) {
        return Err(Error::ZeroLag);
    }
    if lag.0.unsigned_abs() as usize >= height || lag.1.unsigned_abs() as usize >= width {
        return Err(Error::LagOutOfRange {
            row: lag.0,
            col: lag.1,
            height,
            width,
        });
    }
    Ok(())
}

/// Squared sample autocorrelation of the noise estimate, averaged over the
/// given lags.
///
/// For each lag the noise grid is extended by reflecting it about its
/// borders (edge sample not repeated), `Rbar = (1/M) sum n(i) * n~(i+lag)`,
/// and the loss is the mean of `Rbar^2`. Squaring penalizes correlation of
/// either sign and keeps the objective smooth at zero. The gradient folds
/// reflected contributions back onto their source pixels.
pub fn ac_loss(noise: &ImageGrid, lags: &[(i32, i32)]) -> Result<(f64, ImageGrid)> {
    if lags.is_empty() {
        return Err(Error::EmptyLags);
    }
    let (w, h) = (noise.width(), noise.height());
    for &lag in lags {
        check_lag(lag, w, h)?;
    }

    let m = noise.len() as f64;
    let lag_count = lags.len() as f64;
    let mut value = 0.0;
    let mut grad = ImageGrid::zeros(w, h);

    for &(dl, dm) in lags {
        // partner(q) = mirrored q + lag, always an in-image pixel
        let mut rbar = 0.0;
        for r in 0..h {
            let pr = mirror_index(r as isize + dl as isize, h);
            for c in 0..w {
                let pc = mirror_index(c as isize + dm as isize, w);
                rbar += noise.get(r, c) * noise.get(pr, pc);
            }
        }
        rbar /= m;
        value += rbar * rbar;

        let coeff = 2.0 * rbar / (m * lag_count);
        for r in 0..h {
            let pr = mirror_index(r as isize + dl as isize, h);
            for c in 0..w {
                let pc = mirror_index(c as isize + dm as isize, w);
                let source = noise.get(r, c);
                let partner = noise.get(pr, pc);
                grad[(r, c)] += coeff * partner;
                grad[(pr, pc)] += coeff * source;
            }
        }
    }

    Ok((value / lag_count, grad))
}

/// Stationarity loss over non-overlapping `b x b` blocks.
///
/// Per block: population variance plus `st_epsilon`, square root, softmax
/// across blocks (optionally tempered), then cross-entropy against the
/// uniform distribution: `-(1/B) sum log psi_b`. The minimum is `log B`,
/// attained exactly when all block standard deviations agree. Trailing
/// partial blocks are dropped, not padded.
pub fn st_loss(
    noise: &ImageGrid,
    block_size: usize,
    st_epsilon: f64,
    temperature: f64,
) -> Result<(f64, ImageGrid)> {
    if block_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "block size must be >= 2, got {block_size}"
        )));
    }
    if !(st_epsilon > 0.0) || !(temperature > 0.0) {
        return Err(Error::InvalidParameter(
            "st_epsilon and temperature must be positive".into(),
        ));
    }
    let (w, h) = (noise.width(), noise.height());
    let blocks_x = w / block_size;
    let blocks_y = h / block_size;
    let block_count = blocks_x * blocks_y;
    if block_count < 2 {
        return Err(Error::TooFewBlocks {
            block: block_size,
            blocks: block_count,
        });
    }

    let area = (block_size * block_size) as f64;
    let mut means = vec![0.0f64; block_count];
    let mut sigmas = vec![0.0f64; block_count];
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let idx = by * blocks_x + bx;
            let mut sum = 0.0;
            for r in 0..block_size {
                for c in 0..block_size {
                    sum += noise.get(by * block_size + r, bx * block_size + c);
                }
            }
            let mean = sum / area;
            let mut var = 0.0;
            for r in 0..block_size {
                for c in 0..block_size {
                    let d = noise.get(by * block_size + r, bx * block_size + c) - mean;
                    var += d * d;
                }
            }
            means[idx] = mean;
            sigmas[idx] = (var / area + st_epsilon).sqrt();
        }
    }

    // Stable log-softmax over z = sigma / temperature.
    let z: Vec<f64> = sigmas.iter().map(|s| s / temperature).collect();
    let z_max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp_sum: f64 = z.iter().map(|v| (v - z_max).exp()).sum();
    let log_sum = z_max + exp_sum.ln();
    let b_count = block_count as f64;
    let value = log_sum - z.iter().sum::<f64>() / b_count;

    let mut grad = ImageGrid::zeros(w, h);
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let idx = by * blocks_x + bx;
            let psi = (z[idx] - log_sum).exp();
            // dL/dsigma_b, then dsigma_b/dn_i = (n_i - mean_b) / (b^2 sigma_b)
            let dsigma = (psi - 1.0 / b_count) / temperature;
            let scale = dsigma / (area * sigmas[idx]);
            for r in 0..block_size {
                for c in 0..block_size {
                    let (gr, gc) = (by * block_size + r, bx * block_size + c);
                    grad.set(gr, gc, scale * (noise.get(gr, gc) - means[idx]));
                }
            }
        }
    }

    Ok((value, grad))
}

/// Piecewise-constant loss: squared distance between the gradients of the
/// signal estimate and the gradients of the piecewise target, so only the
/// smoothness structure is imposed, not the target intensities.
pub fn pc_loss(signal: &ImageGrid, m_target: &ImageGrid) -> Result<(f64, ImageGrid)> {
    signal.check_same_shape(m_target)?;
    let m = signal.len() as f64;
    let dx = signal
        .forward_diff_x()
        .zip_map(&m_target.forward_diff_x(), |a, b| a - b);
    let dy = signal
        .forward_diff_y()
        .zip_map(&m_target.forward_diff_y(), |a, b| a - b);
    let value = (dx.dot(&dx) + dy.dot(&dy)) / m;
    let mut grad = dx.adjoint_diff_x();
    grad.add_scaled(&dy.adjoint_diff_y(), 1.0);
    let grad = grad.map(|v| 2.0 * v / m);
    Ok((value, grad))
}

/// Total variation with Charbonnier smoothing
/// `phi(g) = sqrt(g^2 + eps^2) - eps`, which restores a true gradient at
/// the kinks of the absolute value.
pub fn tv_loss(signal: &ImageGrid, tv_epsilon: f64) -> (f64, ImageGrid) {
    assert!(tv_epsilon > 0.0, "tv_epsilon must be positive");
    let m = signal.len() as f64;
    let e2 = tv_epsilon * tv_epsilon;
    let gx = signal.forward_diff_x();
    let gy = signal.forward_diff_y();
    let phi = |g: f64| (g * g + e2).sqrt() - tv_epsilon;
    let dphi = |g: f64| g / (g * g + e2).sqrt();
    let value = (gx.pixels().iter().map(|&g| phi(g)).sum::<f64>()
        + gy.pixels().iter().map(|&g| phi(g)).sum::<f64>())
        / m;
    let mut grad = gx.map(dphi).adjoint_diff_x();
    grad.add_scaled(&gy.map(dphi).adjoint_diff_y(), 1.0);
    let grad = grad.map(|v| v / m);
    (value, grad)
}

fn ensure_finite(term: &'static str, value: f64, grads: &[&ImageGrid]) -> Result<()> {
    if value.is_finite() && grads.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteTerm { term })
    }
}

/// Weighted sum of the five terms under one stochastic draw.
///
/// Per-term values are reported unweighted; terms with weight 0 are not
/// evaluated at all.
pub fn total_loss(
    x: &ImageGrid,
    state: &DecompositionState,
    m_target: &ImageGrid,
    config: &LossConfig,
    draw: &StochasticDraw,
) -> Result<LossBreakdown> {
    config.validate()?;
    x.check_same_shape(&state.signal)?;
    x.check_same_shape(&state.noise)?;
    x.check_same_shape(m_target)?;

    let mut terms = TermValues::default();
    let mut grad_signal = ImageGrid::zeros(x.width(), x.height());
    let mut grad_noise = ImageGrid::zeros(x.width(), x.height());

    if config.weight_rec > 0.0 {
        let (v, gs, gn) = rec_loss(x, state)?;
        ensure_finite("rec", v, &[&gs, &gn])?;
        terms.rec = v;
        grad_signal.add_scaled(&gs, config.weight_rec);
        grad_noise.add_scaled(&gn, config.weight_rec);
    }
    if config.weight_ac > 0.0 {
        let (v, gn) = ac_loss(&state.noise, &draw.lags)?;
        ensure_finite("ac", v, &[&gn])?;
        terms.ac = v;
        grad_noise.add_scaled(&gn, config.weight_ac);
    }
    if config.weight_st > 0.0 {
        let (v, gn) = st_loss(
            &state.noise,
            draw.block_size,
            config.st_epsilon,
            config.st_temperature,
        )?;
        ensure_finite("st", v, &[&gn])?;
        terms.st = v;
        grad_noise.add_scaled(&gn, config.weight_st);
    }
    if config.weight_pc > 0.0 {
        let (v, gs) = pc_loss(&state.signal, m_target)?;
        ensure_finite("pc", v, &[&gs])?;
        terms.pc = v;
        grad_signal.add_scaled(&gs, config.weight_pc);
    }
    if config.weight_tv > 0.0 {
        let (v, gs) = tv_loss(&state.signal, config.tv_epsilon);
        ensure_finite("tv", v, &[&gs])?;
        terms.tv = v;
        grad_signal.add_scaled(&gs, config.weight_tv);
    }

    let total = config.weight_rec * terms.rec
        + config.weight_ac * terms.ac
        + config.weight_st * terms.st
        + config.weight_pc * terms.pc
        + config.weight_tv * terms.tv;

    Ok(LossBreakdown {
        total,
        per_term: terms,
        grad_signal,
        grad_noise,
    })
}
