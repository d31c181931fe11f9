//! Dense 2D pixel grid, PGM file I/O, finite-difference operators and
//! intensity utilities.
//!
//! `ImageGrid` is the carrier for every image-like quantity in the crate:
//! observations, signal and noise estimates, piecewise targets, gradients.
//! Observations and signal grids live in [0, 1]; noise and gradient grids are
//! unbounded reals. Everything is stored at double precision; quantization
//! happens only when a grid is written to a PGM file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Grid coordinates, row-major addressing: `row < height`, `col < width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelIndex {
    pub row: usize,
    pub col: usize,
}

/// Dense row-major grid of `f64` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    /// Grid of the given dimensions with every pixel set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        ImageGrid {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds a grid from row-major pixel data.
    pub fn from_vec(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(
                "grid dimensions must be positive".into(),
            ));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "expected {} pixels for a {}x{} grid, got {}",
                width * height,
                width,
                height,
                pixels.len()
            )));
        }
        Ok(ImageGrid {
            width,
            height,
            pixels,
        })
    }

    /// Builds a grid from nested rows; rows must be non-empty and rectangular.
    /// Panics otherwise (test and construction convenience).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "no rows");
        let width = rows[0].len();
        assert!(width > 0, "empty rows");
        let mut pixels = Vec::with_capacity(rows.len() * width);
        for row in rows {
            assert_eq!(row.len(), width, "ragged rows");
            pixels.extend_from_slice(row);
        }
        ImageGrid {
            width,
            height: rows.len(),
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Total pixel count.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are always positive
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(
                (self.width, self.height),
                (other.width, other.height),
            ))
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn at(&self, index: PixelIndex) -> f64 {
        self.get(index.row, index.col)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ImageGrid {
        ImageGrid {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped grids.
    pub fn zip_map(&self, other: &ImageGrid, mut f: impl FnMut(f64, f64) -> f64) -> ImageGrid {
        assert!(self.same_shape(other), "zip_map shape mismatch");
        ImageGrid {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ImageGrid, scale: f64) {
        assert!(self.same_shape(other), "add_scaled shape mismatch");
        for (a, &b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a += scale * b;
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.pixels
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dot(&self, other: &ImageGrid) -> f64 {
        assert!(self.same_shape(other), "dot shape mismatch");
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    /// Values clamped to [0, 1]; applied at export time only.
    pub fn clamped01(&self) -> ImageGrid {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Horizontal forward difference: `out(r, c) = g(r, c+1) - g(r, c)`,
    /// zero in the last column (replicate boundary).
    pub fn forward_diff_x(&self) -> ImageGrid {
        let mut out = ImageGrid::zeros(self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width - 1 {
                out.set(r, c, self.get(r, c + 1) - self.get(r, c));
            }
        }
        out
    }

    /// Vertical forward difference: `out(r, c) = g(r+1, c) - g(r, c)`,
    /// zero in the last row.
    pub fn forward_diff_y(&self) -> ImageGrid {
        let mut out = ImageGrid::zeros(self.width, self.height);
        for r in 0..self.height - 1 {
            for c in 0..self.width {
                out.set(r, c, self.get(r + 1, c) - self.get(r, c));
            }
        }
        out
    }

    /// Exact adjoint of [`forward_diff_x`](Self::forward_diff_x):
    /// `out(r, c) = v(r, c-1)·[c ≥ 1] - v(r, c)·[c < width-1]`.
    pub fn adjoint_diff_x(&self) -> ImageGrid {
        let mut out = ImageGrid::zeros(self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let mut v = 0.0;
                if c >= 1 {
                    v += self.get(r, c - 1);
                }
                if c < self.width - 1 {
                    v -= self.get(r, c);
                }
                out.set(r, c, v);
            }
        }
        out
    }

    /// Exact adjoint of [`forward_diff_y`](Self::forward_diff_y).
    pub fn adjoint_diff_y(&self) -> ImageGrid {
        let mut out = ImageGrid::zeros(self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let mut v = 0.0;
                if r >= 1 {
                    v += self.get(r - 1, c);
                }
                if r < self.height - 1 {
                    v -= self.get(r, c);
                }
                out.set(r, c, v);
            }
        }
        out
    }

    /// Affine map sending min → 0 and max → 1. A constant grid maps to
    /// all-0.5 so that visualization never aborts a batch run.
    pub fn contrast_stretch(&self) -> ImageGrid {
        let lo = self.min();
        let hi = self.max();
        if hi - lo == 0.0 {
            return ImageGrid::filled(self.width, self.height, 0.5);
        }
        let span = hi - lo;
        self.map(|v| (v - lo) / span)
    }
}

impl std::ops::Index<(usize, usize)> for ImageGrid {
    type Output = f64;

    /// Index by `(row, col)`.
    fn index(&self, (row, col): (usize, usize)) -> &f64 {
        &self.pixels[row * self.width + col]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ImageGrid {
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut f64 {
        &mut self.pixels[row * self.width + col]
    }
}

/// Folds an out-of-range index back into `[0, len)` by mirror reflection
/// about the boundary samples (the edge sample is not repeated: -1 → 1,
/// len → len-2). Repeats the fold for arbitrarily large overshoot.
pub(crate) fn mirror_index(i: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

// ---------------------------------------------------------------------------
// PGM I/O
// ---------------------------------------------------------------------------

struct PgmHeader {
    binary: bool,
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

/// Pulls whitespace-and-comment-separated header tokens out of a PGM
/// prefix. Comments run from '#' to end of line.
fn parse_pgm_header(bytes: &[u8], path: &Path) -> Result<PgmHeader> {
    let bad = |detail: &str| Error::PgmHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };

    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }

    let binary = match tokens[0].as_str() {
        "P2" => false,
        "P5" => true,
        other => return Err(bad(&format!("unsupported magic {other:?}"))),
    };
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| bad(&format!("bad width {:?}", tokens[1])))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| bad(&format!("bad height {:?}", tokens[2])))?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| bad(&format!("bad maxval {:?}", tokens[3])))?;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(&format!("maxval {maxval} outside [1, 65535]")));
    }

    // For binary payloads exactly one whitespace byte separates the header
    // from the raster.
    if binary {
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(bad("missing separator before binary raster"));
        }
        pos += 1;
    }

    Ok(PgmHeader {
        binary,
        width,
        height,
        maxval,
        data_offset: pos,
    })
}

/// Loads a P2 (ASCII) or P5 (binary) PGM file and normalizes intensities
/// by maxval so pixels land in [0, 1].
pub fn load_pgm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_pgm_header(&bytes, path)?;
    let count = header.width * header.height;
    let mut raw: Vec<u32> = Vec::with_capacity(count);

    if header.binary {
        let payload = &bytes[header.data_offset..];
        let bytes_per_sample = if header.maxval > 255 { 2 } else { 1 };
        let need = count * bytes_per_sample;
        if payload.len() < need {
            return Err(Error::PgmPixelCount {
                path: path.to_path_buf(),
                expected: count,
                found: payload.len() / bytes_per_sample,
            });
        }
        if bytes_per_sample == 1 {
            raw.extend(payload[..count].iter().map(|&b| b as u32));
        } else {
            for chunk in payload[..need].chunks_exact(2) {
                raw.push(u16::from_be_bytes([chunk[0], chunk[1]]) as u32);
            }
        }
    } else {
        let text = String::from_utf8_lossy(&bytes[header.data_offset..]);
        for token in text.split_whitespace() {
            if raw.len() == count {
                break;
            }
            let v: u32 = token.parse().map_err(|_| Error::PgmHeader {
                path: path.to_path_buf(),
                detail: format!("bad ASCII sample {token:?}"),
            })?;
            raw.push(v);
        }
        if raw.len() < count {
            return Err(Error::PgmPixelCount {
                path: path.to_path_buf(),
                expected: count,
                found: raw.len(),
            });
        }
    }

    if let Some(&v) = raw.iter().find(|&&v| v > header.maxval) {
        return Err(Error::PgmSampleRange {
            path: path.to_path_buf(),
            value: v,
            maxval: header.maxval,
        });
    }

    let maxval = header.maxval as f64;
    ImageGrid::from_vec(
        header.width,
        header.height,
        raw.into_iter().map(|v| v as f64 / maxval).collect(),
    )
}

/// Writes a grid with values in [0, 1] as a binary (P5) PGM.
///
/// Each pixel is written as `round(p * maxval)` clamped to `[0, maxval]`;
/// out-of-range input values are rejected before anything is written.
pub fn save_pgm(grid: &ImageGrid, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    if maxval != 255 && maxval != 65535 {
        return Err(Error::InvalidMaxval(maxval));
    }
    if let Some(&v) = grid.pixels().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::PixelOutOfRange { value: v });
    }

    let mut out = format!("P5\n{} {}\n{}\n", grid.width(), grid.height(), maxval).into_bytes();
    let m = maxval as f64;
    if maxval == 255 {
        out.extend(
            grid.pixels()
                .iter()
                .map(|&p| (p * m).round().clamp(0.0, m) as u8),
        );
    } else {
        for &p in grid.pixels() {
            let q = (p * m).round().clamp(0.0, m) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
