//! Property tests for the cross-module invariants.

mod common;

use proptest::prelude::*;

use whiteprior::loss::ac_loss;
use whiteprior::nlm::{nlm_denoise, NlmParams};
use whiteprior::noise::{generate_phantom, PhantomSpec};
use whiteprior::segment::{felzenszwalb_segment, piecewise_target, SegmentationParams};
use whiteprior::{load_pgm, save_pgm, ImageGrid};

fn grid_strategy(max_side: usize, lo: f64, hi: f64) -> impl Strategy<Value = ImageGrid> {
    (2..=max_side, 2..=max_side).prop_flat_map(move |(w, h)| {
        proptest::collection::vec(lo..hi, w * h)
            .prop_map(move |pixels| ImageGrid::from_vec(w, h, pixels).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// load(save(g)) reproduces the quantized grid exactly.
    #[test]
    fn pgm_round_trip_is_exact_on_quantized_grids(g in grid_strategy(12, 0.0, 1.0)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        save_pgm(&g, &path, 255).unwrap();
        let back = load_pgm(&path).unwrap();
        let quantized = g.map(|v| (v * 255.0).round() / 255.0);
        prop_assert_eq!(back, quantized);
    }

    /// Forward differences are linear operators.
    #[test]
    fn forward_diffs_are_linear(
        u in grid_strategy(10, -1.0, 1.0),
        scale_a in -3.0..3.0f64,
        scale_b in -3.0..3.0f64,
        seed in 0..1000u64,
    ) {
        let v = common::random_grid(u.width(), u.height(), seed, -1.0..1.0);
        let combined = u.zip_map(&v, |x, y| scale_a * x + scale_b * y);
        for (direct, parts) in [
            (combined.forward_diff_x(),
             u.forward_diff_x().zip_map(&v.forward_diff_x(), |x, y| scale_a * x + scale_b * y)),
            (combined.forward_diff_y(),
             u.forward_diff_y().zip_map(&v.forward_diff_y(), |x, y| scale_a * x + scale_b * y)),
        ] {
            for (a, b) in direct.pixels().iter().zip(parts.pixels()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// The trailing column/row of the difference operators is exactly zero.
    #[test]
    fn forward_diffs_have_zero_boundary(g in grid_strategy(10, -2.0, 2.0)) {
        let dx = g.forward_diff_x();
        let dy = g.forward_diff_y();
        for r in 0..g.height() {
            prop_assert_eq!(dx.get(r, g.width() - 1), 0.0);
        }
        for c in 0..g.width() {
            prop_assert_eq!(dy.get(g.height() - 1, c), 0.0);
        }
    }

    /// Contrast stretch lands in [0, 1] and attains both endpoints on
    /// non-constant input.
    #[test]
    fn contrast_stretch_spans_unit_interval(g in grid_strategy(10, -5.0, 5.0)) {
        let stretched = g.contrast_stretch();
        let (mut saw_zero, mut saw_one) = (false, false);
        for &v in stretched.pixels() {
            prop_assert!((0.0..=1.0).contains(&v));
            saw_zero |= v == 0.0;
            saw_one |= v == 1.0;
        }
        if g.max() > g.min() {
            prop_assert!(saw_zero && saw_one);
        }
    }

    /// The piecewise target preserves the global mean for any segmentation.
    #[test]
    fn piecewise_target_preserves_mean(
        g in grid_strategy(12, 0.0, 1.0),
        k in 0.05..2.0f64,
        min_size in 1usize..8,
    ) {
        let labels = felzenszwalb_segment(&g, &SegmentationParams {
            k_threshold: k,
            min_size,
            presmooth_sigma: 0.0,
        });
        let target = piecewise_target(&g, &labels).unwrap();
        prop_assert!((target.mean() - g.mean()).abs() < 1e-12);
    }

    /// Scaling the noise grid by a > 0 scales ac_loss by a^4 exactly.
    #[test]
    fn ac_loss_scales_quartically(
        g in grid_strategy(8, -1.0, 1.0),
        scale in 0.1..4.0f64,
    ) {
        let (base, _) = ac_loss(&g, &[(1, 1)]).unwrap();
        let (scaled, _) = ac_loss(&g.map(|v| scale * v), &[(1, 1)]).unwrap();
        let expected = scale.powi(4) * base;
        prop_assert!((scaled - expected).abs() <= 1e-11 * expected.abs().max(1.0));
    }

    /// NLM output is a convex combination of input pixels.
    #[test]
    fn nlm_stays_within_input_range(seed in 0..200u64, sigma in 0.01..0.2f64) {
        let phantom = generate_phantom(&PhantomSpec {
            width: 12,
            height: 12,
            region_count: 3,
            intensity_levels: vec![0.2, 0.5, 0.8],
            seed,
        }).unwrap();
        let params = NlmParams {
            patch_radius: 1,
            search_radius: 3,
            filter_h: (0.55 * sigma).max(1e-6),
            sigma,
        };
        let out = nlm_denoise(&phantom, &params).unwrap();
        let (lo, hi) = (phantom.min(), phantom.max());
        for &v in out.pixels() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
