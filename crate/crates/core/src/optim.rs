//! Per-image joint optimization of the signal and noise grids with Adam
//! under the stochastic composite loss.
//!
//! The learning-rate schedule halves the rate every `lr_halving_period`
//! iterations, mirroring an epoch-halving schedule at per-image scale. The
//! whole loop is a pure function of the observation, the configs and the
//! seed: repeated runs are bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::loss::{total_loss, DecompositionState, LossConfig, StochasticDraw, TermValues};
use crate::noise::{seeded_stream, stream_tag};

/// How to initialize the decomposition before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// `s = x`, `n = 0`.
    ObservationSignal,
    /// `s` is a 3x3 box blur of `x`, `n = x - s`; starts the whiteness
    /// losses from an informative noise field.
    SmoothedSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub iterations: usize,
    pub lr_halving_period: usize,
    pub seed: u64,
    pub init_strategy: InitStrategy,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            iterations: 3000,
            lr_halving_period: 600,
            seed: 0,
            init_strategy: InitStrategy::SmoothedSplit,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(
                "learning_rate must be positive and finite".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {b}"
                )));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidParameter(
                "adam_epsilon must be positive".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::InvalidParameter(
                "lr_halving_period must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at iteration `t`: `learning_rate * 2^-(t / period)`.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((iteration / self.lr_halving_period) as i32)
    }
}

/// Adam first/second moment grids for both optimization variables.
#[derive(Debug, Clone)]
pub struct AdamMoments {
    m_signal: ImageGrid,
    v_signal: ImageGrid,
    m_noise: ImageGrid,
    v_noise: ImageGrid,
    step: u64,
}

impl AdamMoments {
    pub fn new(width: usize, height: usize) -> Self {
        AdamMoments {
            m_signal: ImageGrid::zeros(width, height),
            v_signal: ImageGrid::zeros(width, height),
            m_noise: ImageGrid::zeros(width, height),
            v_noise: ImageGrid::zeros(width, height),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// 3x3 box blur with in-bounds neighborhood averaging at the borders.
fn box_blur3(grid: &ImageGrid) -> ImageGrid {
    let (w, h) = (grid.width(), grid.height());
    let mut out = ImageGrid::zeros(w, h);
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            let mut count = 0.0;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let rr = r as isize + dr;
                    let cc = c as isize + dc;
                    if rr >= 0 && rr < h as isize && cc >= 0 && cc < w as isize {
                        sum += grid.get(rr as usize, cc as usize);
                        count += 1.0;
                    }
                }
            }
            out.set(r, c, sum / count);
        }
    }
    out
}

pub fn init_state(x: &ImageGrid, strategy: InitStrategy) -> DecompositionState {
    match strategy {
        InitStrategy::ObservationSignal => DecompositionState {
            signal: x.clone(),
            noise: ImageGrid::zeros(x.width(), x.height()),
        },
        InitStrategy::SmoothedSplit => {
            let signal = box_blur3(x);
            let noise = x.zip_map(&signal, |a, b| a - b);
            DecompositionState { signal, noise }
        }
    }
}

fn adam_update_grid(
    values: &mut ImageGrid,
    grad: &ImageGrid,
    m: &mut ImageGrid,
    v: &mut ImageGrid,
    config: &OptimizerConfig,
    lr_now: f64,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..values.len() {
        let g = grad.pixels()[i];
        let mi = config.beta1 * m.pixels()[i] + (1.0 - config.beta1) * g;
        let vi = config.beta2 * v.pixels()[i] + (1.0 - config.beta2) * g * g;
        m.pixels_mut()[i] = mi;
        v.pixels_mut()[i] = vi;
        let m_hat = mi / bias1;
        let v_hat = vi / bias2;
        values.pixels_mut()[i] -= lr_now * m_hat / (v_hat.sqrt() + config.adam_epsilon);
    }
}

/// One Adam step with bias correction applied independently per pixel of
/// both grids. Rejects non-finite gradients outright: a NaN here means a
/// genuine bug upstream, not a transient.
pub fn adam_step(
    state: &mut DecompositionState,
    grad_signal: &ImageGrid,
    grad_noise: &ImageGrid,
    moments: &mut AdamMoments,
    config: &OptimizerConfig,
    lr_now: f64,
) -> Result<()> {
    if !grad_signal.is_finite() {
        return Err(Error::NonFiniteTerm {
            term: "signal gradient",
        });
    }
    if !grad_noise.is_finite() {
        return Err(Error::NonFiniteTerm {
            term: "noise gradient",
        });
    }
    if !(lr_now > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be positive, got {lr_now}"
        )));
    }
    moments.step += 1;
    let bias1 = 1.0 - config.beta1.powi(moments.step as i32);
    let bias2 = 1.0 - config.beta2.powi(moments.step as i32);
    adam_update_grid(
        &mut state.signal,
        grad_signal,
        &mut moments.m_signal,
        &mut moments.v_signal,
        config,
        lr_now,
        bias1,
        bias2,
    );
    adam_update_grid(
        &mut state.noise,
        grad_noise,
        &mut moments.m_noise,
        &mut moments.v_noise,
        config,
        lr_now,
        bias1,
        bias2,
    );
    Ok(())
}

/// One iteration's worth of trace data.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub terms: TermValues,
    pub draw: StochasticDraw,
}

/// Per-iteration loss history; one record per iteration, including the
/// stochastic draw so a run can be replayed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
}

impl OptimizationTrace {
    /// CSV with columns (iter, lr, total, rec, ac, st, pc, tv).
    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "iter,lr,total,rec,ac,st,pc,tv")?;
        for rec in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                rec.iteration,
                rec.learning_rate,
                rec.total,
                rec.terms.rec,
                rec.terms.ac,
                rec.terms.st,
                rec.terms.pc,
                rec.terms.tv
            )?;
        }
        Ok(())
    }
}

/// Jointly optimizes the signal and noise grids for one observation.
///
/// `m_target` is the piecewise-constant target precomputed from `x` by the
/// segmentation module; it is fixed for the whole run. Returns the final
/// decomposition and the full trace. Both grids stay unconstrained during
/// optimization; clamp the signal at export time.
pub fn denoise(
    x: &ImageGrid,
    loss_config: &LossConfig,
    opt_config: &OptimizerConfig,
    m_target: &ImageGrid,
) -> Result<(DecompositionState, OptimizationTrace)> {
    loss_config.validate()?;
    opt_config.validate()?;
    x.check_same_shape(m_target)?;

    let mut rng = seeded_stream(opt_config.seed, stream_tag::DRAWS);
    let mut state = init_state(x, opt_config.init_strategy);
    let mut moments = AdamMoments::new(x.width(), x.height());
    let mut trace = OptimizationTrace::default();

    for iteration in 0..opt_config.iterations {
        let lr_now = opt_config.learning_rate_at(iteration);
        let draw = StochasticDraw::sample(&mut rng, loss_config, x.width(), x.height());
        let breakdown = match total_loss(x, &state, m_target, loss_config, &draw) {
            Ok(b) => b,
            Err(Error::NonFiniteTerm { term }) => {
                return Err(Error::OptimizationAborted {
                    term,
                    iteration,
                    trace: Box::new(trace),
                });
            }
            Err(e) => return Err(e),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::OptimizationAborted {
                term: "total",
                iteration,
                trace: Box::new(trace),
            });
        }
        trace.records.push(TraceRecord {
            iteration,
            learning_rate: lr_now,
            total: breakdown.total,
            terms: breakdown.per_term,
            draw,
        });
        adam_step(
            &mut state,
            &breakdown.grad_signal,
            &breakdown.grad_noise,
            &mut moments,
            opt_config,
            lr_now,
        )?;
    }

    Ok((state, trace))
}
