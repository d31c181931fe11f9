//! Quantitative evaluation: PSNR, SSIM, and the paired t-test used for
//! significance reporting.
//!
//! SSIM uses the reference constants (11x11 Gaussian window, sigma 1.5,
//! k1 = 0.01, k2 = 0.03) with valid-mode windows. The t-test p-value comes
//! from the regularized incomplete beta function evaluated by Lentz
//! continued fractions, accurate well past the 1e-8 target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)`. Identical
/// inputs report positive infinity.
pub fn psnr(estimate: &ImageGrid, reference: &ImageGrid, peak: f64) -> Result<f64> {
    estimate.check_same_shape(reference)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let m = estimate.len() as f64;
    let mse = estimate
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / m;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// SSIM window and stabilization constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

fn gaussian_kernel(n: usize, sigma: f64) -> Vec<f64> {
    let half = (n / 2) as isize;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Separable valid-mode filtering: output shrinks by (kernel - 1) per axis.
fn separable_valid(grid: &ImageGrid, kernel: &[f64]) -> ImageGrid {
    let n = kernel.len();
    let (w, h) = (grid.width(), grid.height());
    let out_w = w - n + 1;
    let mut horizontal = ImageGrid::zeros(out_w, h);
    for r in 0..h {
        for c in 0..out_w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * grid.get(r, c + i);
            }
            horizontal.set(r, c, acc);
        }
    }
    let out_h = h - n + 1;
    let mut out = ImageGrid::zeros(out_w, out_h);
    for r in 0..out_h {
        for c in 0..out_w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * horizontal.get(r + i, c);
            }
            out.set(r, c, acc);
        }
    }
    out
}

/// Mean structural similarity over all valid window positions.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, params: &SsimParams) -> Result<f64> {
    a.check_same_shape(b)?;
    if params.window == 0 || params.window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "SSIM window must be odd and positive, got {}",
            params.window
        )));
    }
    if !(params.k1 > 0.0)
        || !(params.k2 > 0.0)
        || !(params.peak > 0.0)
        || !(params.window_sigma > 0.0)
    {
        return Err(Error::InvalidParameter(
            "SSIM constants must be positive".into(),
        ));
    }
    if a.width() < params.window || a.height() < params.window {
        return Err(Error::WindowTooLarge {
            window: params.window,
            width: a.width(),
            height: a.height(),
        });
    }

    let kernel = gaussian_kernel(params.window, params.window_sigma);
    let mu_a = separable_valid(a, &kernel);
    let mu_b = separable_valid(b, &kernel);
    let e_aa = separable_valid(&a.zip_map(a, |x, y| x * y), &kernel);
    let e_bb = separable_valid(&b.zip_map(b, |x, y| x * y), &kernel);
    let e_ab = separable_valid(&a.zip_map(b, |x, y| x * y), &kernel);

    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.pixels()[i], mu_b.pixels()[i]);
        let var_a = e_aa.pixels()[i] - ma * ma;
        let var_b = e_bb.pixels()[i] - mb * mb;
        let cov = e_ab.pixels()[i] - ma * mb;
        let index = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        sum += index;
    }
    Ok(sum / mu_a.len() as f64)
}

/// Two-sided paired t-test result.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: usize,
}

/// Paired t-test on `a - b` with sample standard deviation; two-sided
/// p-value from Student's t with n-1 degrees of freedom. Zero-variance
/// differences are a distinct error, not an infinite statistic.
pub fn paired_t_test(scores_a: &[f64], scores_b: &[f64]) -> Result<TTestResult> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::LengthMismatch(scores_a.len(), scores_b.len()));
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = scores_a
        .iter()
        .zip(scores_b)
        .map(|(&a, &b)| a - b)
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let ss = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>();
    if ss == 0.0 {
        return Err(Error::DegenerateDifferences);
    }
    let sd = (ss / (n as f64 - 1.0)).sqrt();
    let t = mean / (sd / (n as f64).sqrt());
    let df = n - 1;
    let p = student_t_two_sided_p(t, df as f64);
    Ok(TTestResult {
        t_statistic: t,
        p_value: p,
        degrees_of_freedom: df,
    })
}

/// P(|T| >= |t|) for Student's t: `I_x(df/2, 1/2)` with `x = df/(df+t^2)`.
fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x)
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection formula
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = 0.99999999999980993;
        for (i, &c) in COEFFS.iter().enumerate() {
            acc += c / (x + (i + 1) as f64);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Modified Lentz continued fraction for the incomplete beta function.
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub(crate) fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::random_grid;

    #[test]
    fn psnr_identity_is_infinite() {
        let g = random_grid(8, 8, 1, 0.0..1.0);
        assert_eq!(psnr(&g, &g, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_constant_offset_fixtures() {
        let a = ImageGrid::filled(16, 16, 0.5);
        let b = a.map(|v| v + 0.1);
        let value = psnr(&a, &b, 1.0).unwrap();
        assert!((value - 20.0).abs() < 1e-9, "{value}");

        let c = a.map(|v| v + 0.05);
        let value = psnr(&a, &c, 1.0).unwrap();
        // oracle: 10 log10(1 / 0.0025)
        assert!((value - 26.020599913279624).abs() < 1e-9, "{value}");
    }

    #[test]
    fn psnr_invariant_under_common_offset() {
        let a = random_grid(10, 10, 2, 0.0..0.5);
        let b = random_grid(10, 10, 3, 0.0..0.5);
        let p1 = psnr(&a, &b, 1.0).unwrap();
        let p2 = psnr(&a.map(|v| v + 0.25), &b.map(|v| v + 0.25), 1.0).unwrap();
        assert!((p1 - p2).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        use crate::noise::{add_awgn, NoiseModel};
        let clean = ImageGrid::filled(64, 64, 0.5);
        let mut last = f64::INFINITY;
        for (i, sigma) in [0.02, 0.05, 0.1, 0.2].into_iter().enumerate() {
            let noisy = add_awgn(
                &clean,
                &NoiseModel {
                    sigma,
                    seed: i as u64,
                },
            )
            .unwrap();
            let value = psnr(&noisy, &clean, 1.0).unwrap();
            assert!(value < last, "sigma {sigma}: {value} !< {last}");
            last = value;
        }
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let a = ImageGrid::zeros(4, 4);
        let b = ImageGrid::zeros(5, 4);
        assert!(psnr(&a, &b, 1.0).is_err());
    }

    #[test]
    fn ssim_identity_is_one() {
        let g = random_grid(16, 16, 7, 0.0..1.0);
        let value = ssim(&g, &g, &SsimParams::default()).unwrap();
        assert!((value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_grids_match_closed_form() {
        let (u, v) = (0.3, 0.7);
        let a = ImageGrid::filled(16, 16, u);
        let b = ImageGrid::filled(16, 16, v);
        let params = SsimParams::default();
        let c1 = (params.k1 * params.peak).powi(2);
        let expected = (2.0 * u * v + c1) / (u * u + v * v + c1);
        let value = ssim(&a, &b, &params).unwrap();
        assert!((value - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        for seed in 0..5u64 {
            let a = random_grid(20, 14, seed, 0.0..1.0);
            let b = random_grid(20, 14, seed + 40, 0.0..1.0);
            let params = SsimParams::default();
            let ab = ssim(&a, &b, &params).unwrap();
            let ba = ssim(&b, &a, &params).unwrap();
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_range_bounds() {
        // unrelated images can score negative (anti-correlated windows);
        // the index itself is confined to [-1, 1]
        for seed in 0..6u64 {
            let a = random_grid(18, 18, seed + 100, 0.0..1.0);
            let b = random_grid(18, 18, seed + 200, 0.0..1.0);
            let value = ssim(&a, &b, &SsimParams::default()).unwrap();
            assert!((-1.0..=1.0).contains(&value), "seed {seed}: {value}");
        }

        // a noisy observation of the same scene stays in (0, 1], with 1
        // only for an exact match
        use crate::noise::{add_awgn, NoiseModel};
        for seed in 0..6u64 {
            let scene = random_grid(18, 18, seed + 300, 0.2..0.8);
            let noisy = add_awgn(&scene, &NoiseModel { sigma: 0.05, seed }).unwrap();
            let value = ssim(&scene, &noisy, &SsimParams::default()).unwrap();
            assert!(value > 0.0 && value < 1.0, "seed {seed}: {value}");
        }
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImageGrid::zeros(8, 8);
        assert!(matches!(
            ssim(&a, &a, &SsimParams::default()),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn t_test_textbook_case() {
        // d = (1, 2, 3): mean 2, sd 1, t = 2 sqrt(3)
        let a = [2.0, 4.0, 6.0];
        let b = [1.0, 2.0, 3.0];
        let result = paired_t_test(&a, &b).unwrap();
        assert!((result.t_statistic - 3.4641016151377544).abs() < 1e-10);
        assert_eq!(result.degrees_of_freedom, 2);
        // closed form: I_x(1, 1/2) = 1 - sqrt(1 - x) with x = 2/(2 + 12)
        let expected_p = 1.0 - (6.0f64 / 7.0).sqrt();
        assert!((result.p_value - expected_p).abs() < 1e-8);
        assert!((result.p_value - 0.0742).abs() < 1e-3);
    }

    #[test]
    fn t_test_zero_variance_is_distinct_error() {
        let a = [1.0, 2.0, 3.0];
        assert!(matches!(
            paired_t_test(&a, &a),
            Err(Error::DegenerateDifferences)
        ));
        // constant non-zero differences are degenerate too
        let b = [0.0, 1.0, 2.0];
        assert!(matches!(
            paired_t_test(&a, &b),
            Err(Error::DegenerateDifferences)
        ));
    }

    #[test]
    fn t_test_negation_flips_t_and_keeps_p() {
        let a = [2.0, 4.5, 5.0, 7.5];
        let b = [1.0, 2.0, 6.0, 3.0];
        let fwd = paired_t_test(&a, &b).unwrap();
        let rev = paired_t_test(&b, &a).unwrap();
        assert!((fwd.t_statistic + rev.t_statistic).abs() < 1e-12);
        assert!((fwd.p_value - rev.p_value).abs() < 1e-12);
    }

    #[test]
    fn t_test_invariant_under_common_shift() {
        let a = [2.0, 4.5, 5.0, 7.5];
        let b = [1.0, 2.0, 6.0, 3.0];
        let base = paired_t_test(&a, &b).unwrap();
        let shift_a: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
        let shift_b: Vec<f64> = b.iter().map(|v| v + 10.0).collect();
        let shifted = paired_t_test(&shift_a, &shift_b).unwrap();
        assert!((base.t_statistic - shifted.t_statistic).abs() < 1e-9);
    }

    #[test]
    fn t_test_rejects_mismatched_lengths() {
        assert!(matches!(
            paired_t_test(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, b) = 1 - (1 - x)^b
        for x in [0.1f64, 0.3, 0.5, 0.9] {
            for b in [0.5f64, 1.0, 2.5] {
                let expected = 1.0 - (1.0 - x).powf(b);
                let got = regularized_incomplete_beta(1.0, b, x);
                assert!((got - expected).abs() < 1e-12, "x={x} b={b}");
            }
        }
        // symmetry I_x(a, b) = 1 - I_{1-x}(b, a)
        for (a, b, x) in [(2.5, 3.5, 0.2), (0.5, 0.5, 0.7), (4.0, 1.5, 0.45)] {
            let lhs = regularized_incomplete_beta(a, b, x);
            let rhs = 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);
            assert!((lhs - rhs).abs() < 1e-12);
        }
        // known p-value scale of a large-t case: t = 12.83, df ~ 36 gives
        // p around 1e-15..1e-16, must not underflow to garbage
        let p = student_t_two_sided_p(12.83, 36.0);
        assert!(p > 0.0 && p < 1e-12);
    }
}
