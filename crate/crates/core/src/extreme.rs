//! Occlusion-heavy augmentation for covered-image synthesis.
//!
//! Composition order: pick a cover line in the second eighth of the frame,
//! dim everything below it, stamp zero-valued square patches at random
//! positions, apply a 3x3 grayscale erosion, then a Gaussian blur. Every
//! stage maps `[0,1]` images to `[0,1]` images and the whole pipeline is a
//! pure function of (image, config, seed), so parallel workers reproduce
//! serial output. Keypoint labels carry through unchanged; none of the
//! stages moves geometry.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ThermalImage;

/// Tunables for the occlusion pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeAugConfig {
    /// Multiplicative dimming factor range (lo, hi], drawn per image.
    pub dim_factor_range: (f64, f64),
    /// Number of zero patches, drawn uniformly from lo..=hi per image.
    pub n_dark_kernels_range: (u32, u32),
    /// Side length of each zero patch.
    pub dark_kernel_size: usize,
    /// Erosion neighborhood side (odd).
    pub erosion_kernel: usize,
    /// Blur kernel side (odd).
    pub blur_kernel: usize,
    /// Blur spread in pixels.
    pub blur_sigma: f64,
    /// Global seed; per-sample streams derive from (seed, sample index).
    pub seed: u64,
}

impl Default for ExtremeAugConfig {
    fn default() -> Self {
        Self {
            dim_factor_range: (0.6, 0.9),
            n_dark_kernels_range: (5, 15),
            dark_kernel_size: 20,
            erosion_kernel: 3,
            blur_kernel: 5,
            blur_sigma: 1.5,
            seed: 0,
        }
    }
}

impl ExtremeAugConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.dim_factor_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "dim factor range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        if self.n_dark_kernels_range.0 > self.n_dark_kernels_range.1 {
            return Err(Error::invalid("dark kernel count range has lo > hi"));
        }
        if self.erosion_kernel % 2 == 0 || self.erosion_kernel == 0 {
            return Err(Error::invalid("erosion kernel must be odd and >= 1"));
        }
        if self.blur_kernel % 2 == 0 || self.blur_kernel == 0 {
            return Err(Error::invalid("blur kernel must be odd and >= 1"));
        }
        if self.blur_sigma <= 0.0 {
            return Err(Error::invalid("blur sigma must be positive"));
        }
        Ok(())
    }

    /// Deterministic per-sample stream: same (seed, index) -> same draws,
    /// independent of worker scheduling.
    pub fn sample_rng(&self, sample_index: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(sample_index);
        rng
    }
}

/// Picks the cover line: uniform row in `[floor(H/8), floor(H/4))`.
pub fn select_cover_line(rng: &mut impl Rng, height: usize) -> Result<usize> {
    if height < 8 {
        return Err(Error::invalid(format!(
            "height must be >= 8 to place a cover line, got {height}"
        )));
    }
    let lo = height / 8;
    let hi = height / 4;
    Ok(rng.gen_range(lo..hi))
}

/// Multiplies all pixels at rows >= `row` by `factor`.
pub fn dim_below_line(img: &ThermalImage, row: usize, factor: f64) -> Result<ThermalImage> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid(format!("dim factor must be in (0, 1], got {factor}")));
    }
    if row >= img.height() {
        return Err(Error::invalid(format!(
            "cover line {row} outside image of height {}",
            img.height()
        )));
    }
    let mut px = img.pixels().clone();
    for y in row..img.height() {
        for x in 0..img.width() {
            px[[y, x]] *= factor;
        }
    }
    ThermalImage::new(px)
}

/// Stamps `n` axis-aligned `size x size` zero patches; overlaps allowed.
/// Top-left corners are drawn uniformly so every patch fits in the frame.
pub fn add_dark_kernels(
    img: &ThermalImage,
    rng: &mut impl Rng,
    n: u32,
    size: usize,
) -> Result<ThermalImage> {
    let (h, w) = img.dims();
    if size > h.min(w) {
        return Err(Error::invalid(format!(
            "dark kernel size {size} exceeds image dims {h}x{w}"
        )));
    }
    if size == 0 {
        return Err(Error::invalid("dark kernel size must be positive"));
    }
    let mut px = img.pixels().clone();
    for _ in 0..n {
        let ty = rng.gen_range(0..=(h - size));
        let tx = rng.gen_range(0..=(w - size));
        for y in ty..ty + size {
            for x in tx..tx + size {
                px[[y, x]] = 0.0;
            }
        }
    }
    ThermalImage::new(px)
}

/// Grayscale erosion: each pixel becomes the minimum of its kernel
/// neighborhood, borders handled by edge replication.
pub fn erode(img: &ThermalImage, kernel: usize) -> Result<ThermalImage> {
    if kernel % 2 == 0 || kernel == 0 {
        return Err(Error::invalid(format!("erosion kernel must be odd, got {kernel}")));
    }
    let (h, w) = img.dims();
    let r = (kernel / 2) as isize;
    let src = img.pixels();
    let mut out = Array2::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut m = f64::INFINITY;
            for dy in -r..=r {
                for dx in -r..=r {
                    let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                    m = m.min(src[[sy, sx]]);
                }
            }
            out[[y as usize, x as usize]] = m;
        }
    }
    ThermalImage::new(out)
}

/// Separable Gaussian blur with a normalized kernel and edge replication.
pub fn gaussian_blur(img: &ThermalImage, kernel: usize, sigma: f64) -> Result<ThermalImage> {
    if kernel % 2 == 0 || kernel == 0 {
        return Err(Error::invalid(format!("blur kernel must be odd, got {kernel}")));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid("blur sigma must be positive"));
    }
    let r = (kernel / 2) as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();

    let (h, w) = img.dims();
    let src = img.pixels();
    // horizontal pass
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let sx = (x + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += t * src[[y, sx]];
            }
            tmp[[y, x as usize]] = acc;
        }
    }
    // vertical pass
    let mut out = Array2::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let sy = (y + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += t * tmp[[sy, x]];
            }
            out[[y as usize, x]] = acc;
        }
    }
    // convex combination of [0,1] values stays in range up to rounding
    ThermalImage::from_clamped(out)
}

/// Full occlusion pipeline in paper order. Deterministic given the RNG
/// stream; dimensions are preserved.
pub fn extreme_aug(
    img: &ThermalImage,
    cfg: &ExtremeAugConfig,
    rng: &mut impl Rng,
) -> Result<ThermalImage> {
    cfg.validate()?;
    let row = select_cover_line(rng, img.height())?;
    let factor = if cfg.dim_factor_range.0 == cfg.dim_factor_range.1 {
        cfg.dim_factor_range.0
    } else {
        rng.gen_range(cfg.dim_factor_range.0..cfg.dim_factor_range.1)
    };
    let dimmed = dim_below_line(img, row, factor)?;
    let n = rng.gen_range(cfg.n_dark_kernels_range.0..=cfg.n_dark_kernels_range.1);
    let stamped = add_dark_kernels(&dimmed, rng, n, cfg.dark_kernel_size)?;
    let eroded = erode(&stamped, cfg.erosion_kernel)?;
    gaussian_blur(&eroded, cfg.blur_kernel, cfg.blur_sigma)
}

/// Applies [`extreme_aug`] with the per-sample substream for `sample_index`.
pub fn extreme_aug_indexed(
    img: &ThermalImage,
    cfg: &ExtremeAugConfig,
    sample_index: u64,
) -> Result<ThermalImage> {
    let mut rng = cfg.sample_rng(sample_index);
    extreme_aug(img, cfg, &mut rng)
}
