//! Non-local means baseline denoiser, fed by the blind noise-level
//! estimate.
//!
//! Classic patchwise NLM: each pixel becomes the weighted average of the
//! pixels in its search window, with weights
//! `exp(-max(d^2 - 2 sigma^2, 0) / h^2)` where `d^2` is the mean squared
//! patch distance. The sigma offset discounts the distance contributed by
//! the noise itself. Patches use mirror boundary handling; window centers
//! stay inside the image.

use crate::error::{Error, Result};
use crate::grid::{mirror_index, ImageGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmParams {
    /// Patch half-width; 3 gives 7x7 patches.
    pub patch_radius: usize,
    /// Search half-width; 10 gives a 21x21 window.
    pub search_radius: usize,
    /// Weight decay scale.
    pub filter_h: f64,
    /// Noise level used in the distance offset.
    pub sigma: f64,
}

impl NlmParams {
    /// Standard calibration for a given (estimated) noise level:
    /// `h = 0.55 sigma` with the default 7x7/21x21 geometry.
    pub fn for_sigma(sigma: f64) -> Self {
        NlmParams {
            patch_radius: 3,
            search_radius: 10,
            filter_h: (0.55 * sigma).max(1e-6),
            sigma,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 {
            return Err(Error::InvalidParameter("patch_radius must be >= 1".into()));
        }
        if self.search_radius < self.patch_radius {
            return Err(Error::InvalidParameter(
                "search_radius must be >= patch_radius".into(),
            ));
        }
        if !(self.filter_h > 0.0) {
            return Err(Error::InvalidParameter("filter_h must be positive".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidParameter("sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean squared distance between the patches centered at `p` and `q`.
fn patch_distance(
    x: &ImageGrid,
    (pr, pc): (usize, usize),
    (qr, qc): (usize, usize),
    radius: usize,
) -> f64 {
    let (w, h) = (x.width(), x.height());
    let r = radius as isize;
    let mut acc = 0.0;
    for dr in -r..=r {
        let ar = mirror_index(pr as isize + dr, h);
        let br = mirror_index(qr as isize + dr, h);
        for dc in -r..=r {
            let ac = mirror_index(pc as isize + dc, w);
            let bc = mirror_index(qc as isize + dc, w);
            let d = x.get(ar, ac) - x.get(br, bc);
            acc += d * d;
        }
    }
    let side = 2 * radius + 1;
    acc / (side * side) as f64
}

/// Denoises a grid with non-local means.
pub fn nlm_denoise(x: &ImageGrid, params: &NlmParams) -> Result<ImageGrid> {
    params.validate()?;
    let window = 2 * params.patch_radius + 1;
    if x.width() <= window || x.height() <= window {
        return Err(Error::WindowTooLarge {
            window,
            width: x.width(),
            height: x.height(),
        });
    }

    let (w, h) = (x.width(), x.height());
    let h2 = params.filter_h * params.filter_h;
    let offset = 2.0 * params.sigma * params.sigma;
    let s = params.search_radius as isize;
    let mut out = ImageGrid::zeros(w, h);

    for pr in 0..h {
        let q_lo_r = (pr as isize - s).max(0) as usize;
        let q_hi_r = ((pr as isize + s) as usize).min(h - 1);
        for pc in 0..w {
            let q_lo_c = (pc as isize - s).max(0) as usize;
            let q_hi_c = ((pc as isize + s) as usize).min(w - 1);
            let mut weight_sum = 0.0;
            let mut value_sum = 0.0;
            for qr in q_lo_r..=q_hi_r {
                for qc in q_lo_c..=q_hi_c {
                    let d2 = patch_distance(x, (pr, pc), (qr, qc), params.patch_radius);
                    let weight = (-(d2 - offset).max(0.0) / h2).exp();
                    weight_sum += weight;
                    value_sum += weight * x.get(qr, qc);
                }
            }
            out.set(pr, pc, value_sum / weight_sum);
        }
    }
    Ok(out)
}
