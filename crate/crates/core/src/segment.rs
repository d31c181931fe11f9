//! Graph-based segmentation of the noisy observation and construction of
//! the piecewise-constant target image used by the gradient-matching loss.
//!
//! The segmenter is the Felzenszwalb-Huttenlocher greedy merge over a
//! 4-connected grid graph: edges sorted by absolute intensity difference,
//! components merged while the joining edge is no heavier than the adaptive
//! internal-difference threshold `Int(C) + k/|C|`, followed by a pass that
//! folds undersized components into their cheapest neighbor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mirror_index, ImageGrid};

/// Per-pixel cluster assignment. Labels are compact (`0..cluster_count`)
/// and every cluster is 4-connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationLabels {
    labels: Vec<usize>,
    cluster_count: usize,
    width: usize,
    height: usize,
}

impl SegmentationLabels {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn label_at(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }
}

/// Knobs for the graph merge. The defaults are the reference settings of
/// the original method with the scale threshold rescaled to [0, 1]
/// intensities (300/255 ≈ 1.2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Scale of the adaptive threshold tau(C) = k/|C|.
    pub k_threshold: f64,
    /// Components smaller than this are merged into a neighbor.
    pub min_size: usize,
    /// Gaussian presmoothing std in pixels; 0 disables smoothing.
    pub presmooth_sigma: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            k_threshold: 1.2,
            min_size: 20,
            presmooth_sigma: 0.8,
        }
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Max weight seen inside each component (Int(C)); valid at roots.
    internal: Vec<f64>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the components rooted at `a` and `b`; the edge weight becomes
    /// the new internal difference (edges arrive in ascending order).
    fn union(&mut self, a: usize, b: usize, weight: f64) -> usize {
        debug_assert_ne!(a, b);
        // Deterministic root choice: larger component wins, ties to the
        // smaller index.
        let (root, child) =
            if self.size[a] > self.size[b] || (self.size[a] == self.size[b] && a < b) {
                (a, b)
            } else {
                (b, a)
            };
        self.parent[child] = root;
        self.size[root] += self.size[child];
        self.internal[root] = self.internal[root].max(self.internal[child]).max(weight);
        root
    }
}

/// Separable Gaussian blur with mirror boundary; kernel truncated at 4 sigma.
fn gaussian_presmooth(grid: &ImageGrid, sigma: f64) -> ImageGrid {
    if sigma <= 0.0 {
        return grid.clone();
    }
    let radius = (4.0 * sigma).ceil() as usize;
    let radius = radius.max(1);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for i in -(radius as isize)..=(radius as isize) {
        let x = i as f64;
        kernel.push((-x * x / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let (w, h) = (grid.width(), grid.height());
    let mut horizontal = ImageGrid::zeros(w, h);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let offset = ki as isize - radius as isize;
                acc += kv * grid.get(r, mirror_index(c as isize + offset, w));
            }
            horizontal.set(r, c, acc);
        }
    }
    let mut out = ImageGrid::zeros(w, h);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let offset = ki as isize - radius as isize;
                acc += kv * horizontal.get(mirror_index(r as isize + offset, h), c);
            }
            out.set(r, c, acc);
        }
    }
    out
}

/// Partitions a grid into clusters with the Felzenszwalb-Huttenlocher
/// merge rule. Deterministic: edge sort ties break on
/// (weight, source index, target index).
pub fn felzenszwalb_segment(noisy: &ImageGrid, params: &SegmentationParams) -> SegmentationLabels {
    let smoothed = gaussian_presmooth(noisy, params.presmooth_sigma);
    let (w, h) = (smoothed.width(), smoothed.height());
    let n = w * h;

    // 4-connected edges, built in row-major order with source < target.
    let mut edges: Vec<(f64, u32, u32)> = Vec::with_capacity(2 * n);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let v = smoothed.get(r, c);
            if c + 1 < w {
                edges.push(((smoothed.get(r, c + 1) - v).abs(), p as u32, (p + 1) as u32));
            }
            if r + 1 < h {
                edges.push(((smoothed.get(r + 1, c) - v).abs(), p as u32, (p + w) as u32));
            }
        }
    }
    edges.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("edge weights are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut sets = DisjointSets::new(n);
    for &(weight, a, b) in &edges {
        let ra = sets.find(a as usize);
        let rb = sets.find(b as usize);
        if ra == rb {
            continue;
        }
        let threshold = f64::min(
            sets.internal[ra] + params.k_threshold / sets.size[ra] as f64,
            sets.internal[rb] + params.k_threshold / sets.size[rb] as f64,
        );
        if weight <= threshold {
            sets.union(ra, rb, weight);
        }
    }

    // Fold undersized components into the neighbor joined by the lightest
    // edge (edges are still in ascending order).
    if params.min_size > 1 {
        for &(weight, a, b) in &edges {
            let ra = sets.find(a as usize);
            let rb = sets.find(b as usize);
            if ra != rb && (sets.size[ra] < params.min_size || sets.size[rb] < params.min_size) {
                sets.union(ra, rb, weight);
            }
        }
    }

    // Compact relabeling in row-major order of first appearance.
    let mut labels = vec![usize::MAX; n];
    let mut root_label = std::collections::HashMap::new();
    let mut next = 0usize;
    for (p, label) in labels.iter_mut().enumerate() {
        let root = sets.find(p);
        *label = *root_label.entry(root).or_insert_with(|| {
            let l = next;
            next += 1;
            l
        });
    }

    SegmentationLabels {
        labels,
        cluster_count: next,
        width: w,
        height: h,
    }
}

/// Replaces every pixel with the mean intensity of its cluster, producing
/// the piecewise-constant target image.
pub fn piecewise_target(noisy: &ImageGrid, labels: &SegmentationLabels) -> Result<ImageGrid> {
    if noisy.width() != labels.width() || noisy.height() != labels.height() {
        return Err(Error::dims(
            (noisy.width(), noisy.height()),
            (labels.width(), labels.height()),
        ));
    }
    let k = labels.cluster_count();
    let mut sums = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for (&label, &value) in labels.labels().iter().zip(noisy.pixels()) {
        sums[label] += value;
        counts[label] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    let mut out = ImageGrid::zeros(noisy.width(), noisy.height());
    for (pixel, &label) in out.pixels_mut().iter_mut().zip(labels.labels()) {
        *pixel = means[label];
    }
    Ok(out)
}
