//! Brute-force reference implementations of the windowed metrics.
//!
//! Every window is materialized and reduced with direct per-pixel double
//! loops against a freshly built two-dimensional Gaussian kernel: no
//! separable convolution, no shared moment maps, no buffer reuse. The fast
//! paths in the parent module are validated against these functions, so keep
//! this module free of any numerical code shared with them.

use super::{MetricError, MsSsimParams, SsimParams};
use crate::pixel::PixelImage;

/// Full 2-D L1-normalized Gaussian, built directly (not as an outer product).
fn kernel_2d(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size - 1) as f64 / 2.0;
    let denom = 2.0 * sigma * sigma;
    let mut kernel = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 - center;
            let dy = y as f64 - center;
            kernel.push((-(dx * dx + dy * dy) / denom).exp());
        }
    }
    let sum: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= sum;
    }
    kernel
}

struct WindowMoments {
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

/// Weighted two-pass moments of the window anchored at `(wx, wy)`.
fn window_moments(
    a: &PixelImage,
    b: &PixelImage,
    kernel: &[f64],
    size: usize,
    wx: usize,
    wy: usize,
) -> WindowMoments {
    let (mut mu_a, mut mu_b) = (0.0, 0.0);
    for dy in 0..size {
        for dx in 0..size {
            let w = kernel[dy * size + dx];
            mu_a += w * a.get(wx + dx, wy + dy);
            mu_b += w * b.get(wx + dx, wy + dy);
        }
    }
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for dy in 0..size {
        for dx in 0..size {
            let w = kernel[dy * size + dx];
            let da = a.get(wx + dx, wy + dy) - mu_a;
            let db = b.get(wx + dx, wy + dy) - mu_b;
            var_a += w * da * da;
            var_b += w * db * db;
            cov += w * da * db;
        }
    }
    WindowMoments {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
    }
}

fn check_pair(a: &PixelImage, b: &PixelImage, window: usize) -> Result<(), MetricError> {
    if !a.same_dimensions(b) {
        return Err(MetricError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    if a.width() < window || a.height() < window {
        return Err(MetricError::ImageTooSmall {
            width: a.width(),
            height: a.height(),
            window,
        });
    }
    Ok(())
}

/// Naive single-scale SSIM: the mean over all window positions of the
/// combined luminance/contrast-structure quotient.
pub fn ssim(a: &PixelImage, b: &PixelImage, params: &SsimParams) -> Result<f64, MetricError> {
    params.validate()?;
    let size = params.window_size;
    check_pair(a, b, size)?;
    let kernel = kernel_2d(size, params.window_sigma);
    let c1 = params.c1();
    let c2 = params.c2();
    let mut sum = 0.0;
    let mut count = 0usize;
    for wy in 0..=a.height() - size {
        for wx in 0..=a.width() - size {
            let m = window_moments(a, b, &kernel, size, wx, wy);
            sum += ((2.0 * m.mu_a * m.mu_b + c1) * (2.0 * m.cov + c2))
                / ((m.mu_a * m.mu_a + m.mu_b * m.mu_b + c1) * (m.var_a + m.var_b + c2));
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

fn downsample(img: &PixelImage) -> PixelImage {
    let w = img.width() / 2;
    let h = img.height() / 2;
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let sum = img.get(2 * x, 2 * y)
                + img.get(2 * x + 1, 2 * y)
                + img.get(2 * x, 2 * y + 1)
                + img.get(2 * x + 1, 2 * y + 1);
            pixels.push(sum / 4.0);
        }
    }
    PixelImage::new(w, h, pixels).expect("pooled averages stay in range")
}

/// Naive multi-scale SSIM: per scale the mean clamped contrast-structure
/// value raised to its weight, times the mean luminance term at the coarsest
/// scale. Scale truncation and weight renormalization mirror the metric's
/// definition for undersized images.
pub fn ms_ssim(a: &PixelImage, b: &PixelImage, params: &MsSsimParams) -> Result<f64, MetricError> {
    params.validate()?;
    let size = params.base.window_size;
    check_pair(a, b, size)?;
    let mut levels = 0;
    let (mut w, mut h) = (a.width(), a.height());
    while w >= size && h >= size && levels < params.scales() {
        levels += 1;
        w /= 2;
        h /= 2;
    }
    if levels == 0 {
        return Err(MetricError::ImageTooSmall {
            width: a.width(),
            height: a.height(),
            window: size,
        });
    }
    let (mut alpha_sum, mut beta_sum) = (0.0, 0.0);
    for w in &params.weights[..levels] {
        alpha_sum += w.alpha;
        beta_sum += w.beta;
    }
    let kernel = kernel_2d(size, params.base.window_sigma);
    let c1 = params.base.c1();
    let c2 = params.base.c2();
    let mut cur_a = a.clone();
    let mut cur_b = b.clone();
    let mut result = 1.0;
    for level in 0..levels {
        let (mut cs_sum, mut lum_sum) = (0.0, 0.0);
        let mut count = 0usize;
        for wy in 0..=cur_a.height() - size {
            for wx in 0..=cur_a.width() - size {
                let m = window_moments(&cur_a, &cur_b, &kernel, size, wx, wy);
                let cs = (2.0 * m.cov + c2) / (m.var_a + m.var_b + c2);
                cs_sum += cs.max(0.0);
                lum_sum += (2.0 * m.mu_a * m.mu_b + c1) / (m.mu_a * m.mu_a + m.mu_b * m.mu_b + c1);
                count += 1;
            }
        }
        let beta = params.weights[level].beta / beta_sum;
        result *= (cs_sum / count as f64).powf(beta);
        if level == levels - 1 {
            let alpha = params.weights[level].alpha / alpha_sum;
            result *= (lum_sum / count as f64).powf(alpha);
        } else {
            cur_a = downsample(&cur_a);
            cur_b = downsample(&cur_b);
        }
    }
    Ok(result)
}
