//! Noise synthesis, blind noise-level estimation, and synthetic
//! piecewise-constant phantoms.
//!
//! Random draws run on ChaCha12 counter streams keyed by `(seed, purpose)`,
//! with normal variates produced by the ziggurat sampler of `rand_distr`.
//! Identical seeds therefore give bit-identical realizations on every
//! platform, and concurrent callers never share RNG state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Stream tags keep draws for different purposes statistically independent
/// even under the same user seed.
pub(crate) mod stream_tag {
    pub const AWGN: u64 = 1;
    pub const PHANTOM: u64 = 2;
    pub const DRAWS: u64 = 3;
}

pub(crate) fn seeded_stream(seed: u64, tag: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Additive white Gaussian noise model on the [0, 1] intensity scale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

/// Adds i.i.d. Gaussian(0, sigma) noise to a clean grid.
///
/// The output is deliberately not clipped to [0, 1]: clipping would make
/// the noise non-Gaussian and break the whiteness assumptions the losses
/// encode. Metrics use peak 1.0 regardless.
pub fn add_awgn(clean: &ImageGrid, model: &NoiseModel) -> Result<ImageGrid> {
    if !(model.sigma > 0.0) || !model.sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive and finite, got {}",
            model.sigma
        )));
    }
    let mut rng = seeded_stream(model.seed, stream_tag::AWGN);
    Ok(clean.map(|v| {
        let g: f64 = rng.sample(StandardNormal);
        v + model.sigma * g
    }))
}

/// Blind noise-level estimate from a single image via the Immerkaer
/// Laplacian-difference operator:
///
/// `sigma_hat = sqrt(pi/2) / (6 (W-2)(H-2)) * sum |noisy * L|`
///
/// with `L = [[1,-2,1],[-2,4,-2],[1,-2,1]]`, interior pixels only. The
/// operator annihilates locally linear structure but responds to edges,
/// so step-heavy images bias the estimate upward.
pub fn estimate_sigma(noisy: &ImageGrid) -> Result<f64> {
    let (w, h) = (noisy.width(), noisy.height());
    if w < 3 || h < 3 {
        return Err(Error::GridTooSmall {
            width: w,
            height: h,
        });
    }
    let mut acc = 0.0;
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let l = noisy.get(r - 1, c - 1) - 2.0 * noisy.get(r - 1, c) + noisy.get(r - 1, c + 1)
                - 2.0 * noisy.get(r, c - 1)
                + 4.0 * noisy.get(r, c)
                - 2.0 * noisy.get(r, c + 1)
                + noisy.get(r + 1, c - 1)
                - 2.0 * noisy.get(r + 1, c)
                + noisy.get(r + 1, c + 1);
            acc += l.abs();
        }
    }
    let norm = (std::f64::consts::PI / 2.0).sqrt() / (6.0 * ((w - 2) * (h - 2)) as f64);
    Ok(norm * acc)
}

fn default_levels() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

/// Specification for a seeded Voronoi phantom: `region_count` cells, each
/// filled with one intensity level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub region_count: usize,
    #[serde(default = "default_levels")]
    pub intensity_levels: Vec<f64>,
    pub seed: u64,
}

/// Generates a piecewise-constant phantom from a seeded Voronoi partition.
///
/// Sites are distinct pixel centers, so every cell is non-empty; each cell
/// takes `intensity_levels[i]` when enough levels are given, otherwise
/// levels are sampled with replacement from the same seeded stream.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<ImageGrid> {
    if spec.region_count < 2 {
        return Err(Error::InvalidParameter(format!(
            "region_count must be at least 2, got {}",
            spec.region_count
        )));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidParameter(
            "phantom dimensions must be positive".into(),
        ));
    }
    if spec.region_count > spec.width * spec.height {
        return Err(Error::InvalidParameter(format!(
            "region_count {} exceeds pixel count {}",
            spec.region_count,
            spec.width * spec.height
        )));
    }
    if spec.intensity_levels.is_empty() {
        return Err(Error::InvalidParameter(
            "intensity_levels must be non-empty".into(),
        ));
    }
    if let Some(&bad) = spec
        .intensity_levels
        .iter()
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::InvalidParameter(format!(
            "intensity level {bad} outside [0, 1]"
        )));
    }

    let mut rng = seeded_stream(spec.seed, stream_tag::PHANTOM);

    // Distinct sites: each Voronoi cell then contains at least its own site.
    let mut sites: Vec<(usize, usize)> = Vec::with_capacity(spec.region_count);
    while sites.len() < spec.region_count {
        let r = rng.gen_range(0..spec.height);
        let c = rng.gen_range(0..spec.width);
        if !sites.contains(&(r, c)) {
            sites.push((r, c));
        }
    }

    let levels: Vec<f64> = if spec.intensity_levels.len() >= spec.region_count {
        spec.intensity_levels[..spec.region_count].to_vec()
    } else {
        (0..spec.region_count)
            .map(|_| spec.intensity_levels[rng.gen_range(0..spec.intensity_levels.len())])
            .collect()
    };

    let mut grid = ImageGrid::zeros(spec.width, spec.height);
    for r in 0..spec.height {
        for c in 0..spec.width {
            let mut best = 0usize;
            let mut best_d = usize::MAX;
            for (i, &(sr, sc)) in sites.iter().enumerate() {
                let dr = sr.abs_diff(r);
                let dc = sc.abs_diff(c);
                let d = dr * dr + dc * dc;
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            grid.set(r, c, levels[best]);
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awgn_rejects_nonpositive_sigma() {
        let clean = ImageGrid::filled(4, 4, 0.5);
        for sigma in [0.0, -0.1, f64::NAN] {
            let model = NoiseModel { sigma, seed: 1 };
            assert!(add_awgn(&clean, &model).is_err());
        }
    }

    #[test]
    fn awgn_is_deterministic_in_seed() {
        let clean = ImageGrid::filled(16, 16, 0.5);
        let model = NoiseModel {
            sigma: 0.1,
            seed: 99,
        };
        let a = add_awgn(&clean, &model).unwrap();
        let b = add_awgn(&clean, &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn awgn_tiny_sigma_approaches_clean() {
        let clean = ImageGrid::filled(8, 8, 0.25);
        let model = NoiseModel {
            sigma: 1e-300,
            seed: 7,
        };
        let noisy = add_awgn(&clean, &model).unwrap();
        for (a, b) in noisy.pixels().iter().zip(clean.pixels()) {
            assert!((a - b).abs() < 1e-290);
        }
    }

    /// Monte-Carlo check of the sampling oracle: sample mean and std of the
    /// realized noise field on 256x256 pixels.
    #[test]
    fn awgn_sample_moments() {
        let clean = ImageGrid::filled(256, 256, 0.5);
        let model = NoiseModel {
            sigma: 0.1,
            seed: 42,
        };
        let noisy = add_awgn(&clean, &model).unwrap();
        let diffs: Vec<f64> = noisy
            .pixels()
            .iter()
            .zip(clean.pixels())
            .map(|(n, c)| n - c)
            .collect();
        let m = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / m;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (m - 1.0);
        let std = var.sqrt();
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((0.098..=0.102).contains(&std), "std {std}");
    }

    /// The noise field is independent of the clean content: same seed on two
    /// different clean images gives the same realization.
    #[test]
    fn awgn_realization_independent_of_content() {
        let a = ImageGrid::filled(12, 9, 0.2);
        let b =
            ImageGrid::from_vec(12, 9, (0..108).map(|i| (i % 11) as f64 / 11.0).collect()).unwrap();
        let model = NoiseModel {
            sigma: 0.05,
            seed: 5,
        };
        let na = add_awgn(&a, &model).unwrap();
        let nb = add_awgn(&b, &model).unwrap();
        for i in 0..a.len() {
            let ra = na.pixels()[i] - a.pixels()[i];
            let rb = nb.pixels()[i] - b.pixels()[i];
            // identical draws; only the add/subtract rounding differs
            assert!((ra - rb).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma_estimate_zero_on_constant_grid() {
        let g = ImageGrid::filled(16, 16, 0.4);
        assert_eq!(estimate_sigma(&g).unwrap(), 0.0);
    }

    #[test]
    fn sigma_estimate_rejects_tiny_grids() {
        let g = ImageGrid::filled(2, 5, 0.4);
        assert!(matches!(
            estimate_sigma(&g),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn sigma_estimate_recovers_known_sigma() {
        let clean = ImageGrid::filled(256, 256, 0.5);
        for seed in 0..20u64 {
            let noisy = add_awgn(&clean, &NoiseModel { sigma: 0.1, seed }).unwrap();
            let est = estimate_sigma(&noisy).unwrap();
            assert!((0.09..=0.11).contains(&est), "seed {seed}: est {est}");
        }
    }

    #[test]
    fn sigma_estimate_positive_on_noiseless_step_edge() {
        // The separable operator annihilates anything constant along one
        // axis, so a purely vertical step reads as noiseless...
        let mut vertical = ImageGrid::zeros(16, 16);
        for r in 0..16 {
            for c in 8..16 {
                vertical.set(r, c, 1.0);
            }
        }
        assert_eq!(estimate_sigma(&vertical).unwrap(), 0.0);

        // ...while a diagonal step edge leaks into the estimate; this is
        // the documented edge bias.
        let mut diagonal = ImageGrid::zeros(16, 16);
        for r in 0..16 {
            for c in 0..16 {
                if c > r {
                    diagonal.set(r, c, 1.0);
                }
            }
        }
        assert!(estimate_sigma(&diagonal).unwrap() > 0.0);
    }

    #[test]
    fn sigma_estimate_scale_covariant_on_pure_noise() {
        let zero = ImageGrid::filled(128, 128, 0.0);
        let noise = add_awgn(
            &zero,
            &NoiseModel {
                sigma: 0.1,
                seed: 3,
            },
        )
        .unwrap();
        let base = estimate_sigma(&noise).unwrap();
        for a in [0.5, 2.0] {
            let scaled = noise.map(|v| a * v);
            let est = estimate_sigma(&scaled).unwrap();
            assert!(
                (est / (a * base) - 1.0).abs() < 0.02,
                "a={a}: {est} vs {}",
                a * base
            );
        }
    }

    #[test]
    fn phantom_two_regions_contains_exactly_both_levels() {
        let spec = PhantomSpec {
            width: 32,
            height: 32,
            region_count: 2,
            intensity_levels: vec![0.2, 0.8],
            seed: 11,
        };
        let g = generate_phantom(&spec).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for &v in g.pixels() {
            seen.insert((v * 10.0).round() as i64);
            assert!(v == 0.2 || v == 0.8);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn phantom_is_deterministic() {
        let spec = PhantomSpec {
            width: 40,
            height: 24,
            region_count: 5,
            intensity_levels: default_levels(),
            seed: 123,
        };
        assert_eq!(
            generate_phantom(&spec).unwrap(),
            generate_phantom(&spec).unwrap()
        );
    }

    #[test]
    fn phantom_rejects_degenerate_region_count() {
        let spec = PhantomSpec {
            width: 8,
            height: 8,
            region_count: 1,
            intensity_levels: default_levels(),
            seed: 1,
        };
        assert!(generate_phantom(&spec).is_err());
    }

    /// Perimeter bound on piecewise-constant Voronoi images, checked against
    /// a direct boundary-pixel count.
    #[test]
    fn phantom_tv_respects_perimeter_bound() {
        for seed in 0..6u64 {
            let spec = PhantomSpec {
                width: 64,
                height: 48,
                region_count: 5,
                intensity_levels: default_levels(),
                seed,
            };
            let g = generate_phantom(&spec).unwrap();
            let m = g.len() as f64;

            // Oracle: accumulate |differences| directly over boundary pixels.
            let mut direct = 0.0;
            let mut transitions = 0usize;
            for r in 0..g.height() {
                for c in 0..g.width() {
                    if c + 1 < g.width() && g.get(r, c + 1) != g.get(r, c) {
                        direct += (g.get(r, c + 1) - g.get(r, c)).abs();
                        transitions += 1;
                    }
                    if r + 1 < g.height() && g.get(r + 1, c) != g.get(r, c) {
                        direct += (g.get(r + 1, c) - g.get(r, c)).abs();
                        transitions += 1;
                    }
                }
            }
            let tv = direct / m;
            let bound = 2.0 * spec.region_count as f64 * g.width().max(g.height()) as f64 / m;
            assert!(tv <= bound, "seed {seed}: tv {tv} > bound {bound}");
            assert!(transitions > 0);
        }
    }

    /// Phantoms are exactly piecewise constant: differences vanish away from
    /// region boundaries by construction (checked via value changes only).
    #[test]
    fn phantom_diffs_zero_within_regions() {
        let spec = PhantomSpec {
            width: 32,
            height: 32,
            region_count: 4,
            intensity_levels: vec![0.0, 0.25, 0.75, 1.0],
            seed: 9,
        };
        let g = generate_phantom(&spec).unwrap();
        let dx = g.forward_diff_x();
        for r in 0..g.height() {
            for c in 0..g.width() - 1 {
                if g.get(r, c) == g.get(r, c + 1) {
                    assert_eq!(dx.get(r, c), 0.0);
                }
            }
        }
    }
}
