//! Grayscale rasters, binary masks, and the geometry/mask operations the
//! audit pipeline is built on.
//!
//! Invariants maintained by every operation in this module:
//!
//! * images are row-major luminance buffers with values in `[0, 1]`;
//! * masks are boolean rasters (`true` = foreground) of matching shape;
//! * image resizing is bilinear, mask resizing is nearest-neighbor;
//! * masking zeroes the excluded region and never changes dimensions.

use std::path::Path;

use image::DynamicImage;
use thiserror::Error;

/// Rec.601 luma weights used to collapse color inputs.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

#[derive(Debug, Error)]
pub enum PixelError {
    #[error("failed to read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode {path}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("zero-sized raster ({width}x{height})")]
    ZeroDimension { width: usize, height: usize },
    #[error("buffer holds {len} values, expected {expected}")]
    BufferLength { len: usize, expected: usize },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// How multi-channel inputs are collapsed to a single luminance channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[non_exhaustive]
pub enum ChannelPolicy {
    /// Rec.601 luma (`0.299 R + 0.587 G + 0.114 B`), the only policy the
    /// pipeline currently defines. Grayscale inputs pass through untouched.
    #[default]
    Rec601Luma,
}

/// Row-major grayscale image with luminance values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl PixelImage {
    /// Validates shape and value range; the constructor is the only public
    /// way in, so every `PixelImage` in the program satisfies the invariants.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::ZeroDimension { width, height });
        }
        let expected = width * height;
        if pixels.len() != expected {
            return Err(PixelError::BufferLength {
                len: pixels.len(),
                expected,
            });
        }
        for (index, &value) in pixels.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(PixelError::PixelRange { index, value });
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Constant-valued image.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, PixelError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Internal constructor for buffers that are valid by construction.
    pub(crate) fn from_parts(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        debug_assert!(pixels
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_dimensions(&self, other: &PixelImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Boolean raster; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, PixelError> {
        if width == 0 || height == 0 {
            return Err(PixelError::ZeroDimension { width, height });
        }
        let expected = width * height;
        if bits.len() != expected {
            return Err(PixelError::BufferLength {
                len: bits.len(),
                expected,
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Mask with every bit set to `value`.
    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self, PixelError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Foreground/background swap.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }
}

/// Which side of a mask an operation keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRegion {
    Foreground,
    Background,
}

/// An image paired with its same-shaped segmentation mask.
#[derive(Debug, Clone)]
pub struct MaskedImage {
    image: PixelImage,
    mask: BinaryMask,
}

impl MaskedImage {
    pub fn new(image: PixelImage, mask: BinaryMask) -> Result<Self, PixelError> {
        if image.width != mask.width || image.height != mask.height {
            return Err(PixelError::DimensionMismatch(
                image.width,
                image.height,
                mask.width,
                mask.height,
            ));
        }
        Ok(Self { image, mask })
    }

    pub fn image(&self) -> &PixelImage {
        &self.image
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn foreground_proportion(&self) -> f64 {
        foreground_proportion(&self.mask)
    }

    /// The image with the given region kept and the rest zeroed.
    pub fn masked(&self, region: MaskRegion) -> PixelImage {
        apply_mask(&self.image, &self.mask, region)
            .expect("image and mask dimensions are validated at construction")
    }
}

/// Decodes an image file into a grayscale raster. Color inputs are collapsed
/// per `policy`; integer samples are normalized to `[0, 1]`.
pub fn load_image<P: AsRef<Path>>(
    path: P,
    policy: ChannelPolicy,
) -> Result<PixelImage, PixelError> {
    let decoded = open(path.as_ref())?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(PixelError::ZeroDimension { width, height });
    }
    let ChannelPolicy::Rec601Luma = policy;
    let pixels = match &decoded {
        DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(buf) => buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| {
                let luma = LUMA_R * p.0[0] as f64 + LUMA_G * p.0[1] as f64 + LUMA_B * p.0[2] as f64;
                luma.clamp(0.0, 1.0)
            })
            .collect(),
    };
    Ok(PixelImage::from_parts(width, height, pixels))
}

/// Decodes a mask file: any nonzero sample is foreground.
pub fn load_mask<P: AsRef<Path>>(path: P) -> Result<BinaryMask, PixelError> {
    let decoded = open(path.as_ref())?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    if width == 0 || height == 0 {
        return Err(PixelError::ZeroDimension { width, height });
    }
    let bits = decoded.to_luma8().pixels().map(|p| p.0[0] != 0).collect();
    Ok(BinaryMask {
        width,
        height,
        bits,
    })
}

fn open(path: &Path) -> Result<DynamicImage, PixelError> {
    image::open(path).map_err(|err| match err {
        image::ImageError::IoError(source) => PixelError::Io {
            path: path.display().to_string(),
            source,
        },
        source => PixelError::Decode {
            path: path.display().to_string(),
            source,
        },
    })
}

/// Keeps `region` and zeroes the rest. Output dimensions equal the input's.
pub fn apply_mask(
    img: &PixelImage,
    mask: &BinaryMask,
    region: MaskRegion,
) -> Result<PixelImage, PixelError> {
    if img.width != mask.width || img.height != mask.height {
        return Err(PixelError::DimensionMismatch(
            img.width,
            img.height,
            mask.width,
            mask.height,
        ));
    }
    let keep_foreground = matches!(region, MaskRegion::Foreground);
    let pixels = img
        .pixels
        .iter()
        .zip(&mask.bits)
        .map(|(&v, &fg)| if fg == keep_foreground { v } else { 0.0 })
        .collect();
    Ok(PixelImage::from_parts(img.width, img.height, pixels))
}

/// Fraction of mask pixels that are foreground, in `[0, 1]`.
pub fn foreground_proportion(mask: &BinaryMask) -> f64 {
    mask.foreground_count() as f64 / mask.bits.len() as f64
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize with pixel-center alignment. Resizing to the current
/// dimensions returns a bit-identical copy; output values stay in `[0, 1]`.
pub fn resize(img: &PixelImage, width: usize, height: usize) -> Result<PixelImage, PixelError> {
    if width == 0 || height == 0 {
        return Err(PixelError::ZeroDimension { width, height });
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let scale_x = img.width as f64 / width as f64;
    let scale_y = img.height as f64 / height as f64;
    let mut pixels = Vec::with_capacity(width * height);
    for dst_y in 0..height {
        let src_y = ((dst_y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = src_y - y0 as f64;
        for dst_x in 0..width {
            let src_x = ((dst_x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = src_x - x0 as f64;
            let top = lerp(img.get(x0, y0), img.get(x1, y0), fx);
            let bottom = lerp(img.get(x0, y1), img.get(x1, y1), fx);
            pixels.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
        }
    }
    Ok(PixelImage::from_parts(width, height, pixels))
}

/// Nearest-neighbor mask resize (keeps bits crisp; no interpolated values).
pub fn resize_mask(
    mask: &BinaryMask,
    width: usize,
    height: usize,
) -> Result<BinaryMask, PixelError> {
    if width == 0 || height == 0 {
        return Err(PixelError::ZeroDimension { width, height });
    }
    if width == mask.width && height == mask.height {
        return Ok(mask.clone());
    }
    let scale_x = mask.width as f64 / width as f64;
    let scale_y = mask.height as f64 / height as f64;
    let mut bits = Vec::with_capacity(width * height);
    for dst_y in 0..height {
        let src_y = (((dst_y as f64 + 0.5) * scale_y) as usize).min(mask.height - 1);
        for dst_x in 0..width {
            let src_x = (((dst_x as f64 + 0.5) * scale_x) as usize).min(mask.width - 1);
            bits.push(mask.get(src_x, src_y));
        }
    }
    Ok(BinaryMask {
        width,
        height,
        bits,
    })
}
