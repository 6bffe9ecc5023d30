//! Raster image substrate: owned 8-bit RGB grids, affine warping with
//! bilinear resampling, and aspect-preserving resize with invertible
//! letterbox metadata.
//!
//! Coordinate conventions used throughout the crate:
//!
//! * Pixel `(x, y)` has its sampling center at the real coordinate `(x, y)`;
//!   the image center is `((w-1)/2, (h-1)/2)`.
//! * Resampled intensities are rounded half away from zero.
//! * Samples that fall outside the source grid take the fill color.

mod hsv;
mod io;

pub use hsv::{hsv_to_rgb, rgb_to_hsv, HsvPixel};
pub use io::{decode_p6, encode_p6, read_image, write_image};

use std::path::PathBuf;

use thiserror::Error;

/// Letterbox fill, the padding convention of the detector family the
/// augmented data targets.
pub const FILL_RGB: [u8; 3] = [114, 114, 114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("{path}: unsupported format: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("{path}: unsupported bit depth: {detail}")]
    UnsupportedDepth { path: PathBuf, detail: String },
    #[error("{path}: truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("invalid image dimensions {width}x{height} for a {len}-byte buffer")]
    InvalidDimensions { width: u32, height: u32, len: usize },
    #[error("affine map is degenerate (non-invertible or non-finite)")]
    DegenerateMap,
}

/// Owned row-major RGB image, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    /// Builds an image from a row-major RGB buffer.
    ///
    /// The buffer length must equal `width * height * 3` and both dimensions
    /// must be at least 1.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        let expected = (width as usize) * (height as usize) * 3;
        if width == 0 || height == 0 || pixels.len() != expected {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Constant-color image. Panics on zero dimensions.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..(width as usize * height as usize) {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

/// 2x3 affine map sending output pixel coordinates to source coordinates.
///
/// `coeffs = [a, b, c, d, e, f]` maps `(x, y)` to
/// `(a*x + b*y + c, d*x + e*y + f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    coeffs: [f64; 6],
}

impl AffineMap {
    pub fn new(coeffs: [f64; 6]) -> Result<Self, ImageError> {
        let map = Self { coeffs };
        if !coeffs.iter().all(|c| c.is_finite()) || map.determinant() == 0.0 {
            return Err(ImageError::DegenerateMap);
        }
        Ok(map)
    }

    pub fn identity() -> Self {
        Self {
            coeffs: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn coeffs(&self) -> [f64; 6] {
        self.coeffs
    }

    /// Determinant of the 2x2 linear part.
    pub fn determinant(&self) -> f64 {
        let [a, b, _, d, e, _] = self.coeffs;
        a * e - b * d
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, c, d, e, f] = self.coeffs;
        (a * x + b * y + c, d * x + e * y + f)
    }

    pub fn inverse(&self) -> Result<AffineMap, ImageError> {
        let [a, b, c, d, e, f] = self.coeffs;
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(ImageError::DegenerateMap);
        }
        let ia = e / det;
        let ib = -b / det;
        let id = -d / det;
        let ie = a / det;
        // inverse offset = -A^{-1} * t
        let ic = -(ia * c + ib * f);
        let if_ = -(id * c + ie * f);
        AffineMap::new([ia, ib, ic, id, ie, if_])
    }

    /// Map sending `p` to `self(other(p))`.
    ///
    /// Warping an image by `self` and then warping the result by `other`
    /// equals a single warp by `self.compose(other)`.
    pub fn compose(&self, other: &AffineMap) -> AffineMap {
        let [a1, b1, c1, d1, e1, f1] = self.coeffs;
        let [a2, b2, c2, d2, e2, f2] = other.coeffs;
        AffineMap {
            coeffs: [
                a1 * a2 + b1 * d2,
                a1 * b2 + b1 * e2,
                a1 * c2 + b1 * f2 + c1,
                d1 * a2 + e1 * d2,
                d1 * b2 + e1 * e2,
                d1 * c2 + e1 * f2 + f1,
            ],
        }
    }
}

#[inline]
fn round_channel(v: f64) -> u8 {
    // f64::round is round-half-away-from-zero, the crate-wide rule.
    v.round().clamp(0.0, 255.0) as u8
}

#[inline]
fn sample_bilinear(image: &RasterImage, sx: f64, sy: f64) -> Option<[u8; 3]> {
    let max_x = (image.width - 1) as f64;
    let max_y = (image.height - 1) as f64;
    if !(0.0..=max_x).contains(&sx) || !(0.0..=max_y).contains(&sy) {
        return None;
    }
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let x0 = x0 as u32;
    let y0 = y0 as u32;
    let x1 = (x0 + 1).min(image.width - 1);
    let y1 = (y0 + 1).min(image.height - 1);

    let p00 = image.get(x0, y0);
    let p10 = image.get(x1, y0);
    let p01 = image.get(x0, y1);
    let p11 = image.get(x1, y1);

    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = (1.0 - fx) * p00[c] as f64 + fx * p10[c] as f64;
        let bottom = (1.0 - fx) * p01[c] as f64 + fx * p11[c] as f64;
        out[c] = round_channel((1.0 - fy) * top + fy * bottom);
    }
    Some(out)
}

/// Warps `image` onto an `out_w` x `out_h` canvas.
///
/// Each output pixel bilinearly samples the source at the coordinate the map
/// assigns to it; samples outside the source grid take `fill`.
pub fn warp_affine(
    image: &RasterImage,
    map: &AffineMap,
    out_w: u32,
    out_h: u32,
    fill: [u8; 3],
) -> Result<RasterImage, ImageError> {
    if map.determinant() == 0.0 || !map.coeffs.iter().all(|c| c.is_finite()) {
        return Err(ImageError::DegenerateMap);
    }
    assert!(out_w >= 1 && out_h >= 1, "output dimensions must be >= 1");
    let mut out = RasterImage::filled(out_w, out_h, fill);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = map.apply(x as f64, y as f64);
            if let Some(rgb) = sample_bilinear(image, sx, sy) {
                out.put(x, y, rgb);
            }
        }
    }
    Ok(out)
}

/// Everything needed to undo a [`resize`]: original size, realized content
/// size, pad offsets, and per-axis scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizeInfo {
    pub orig_w: u32,
    pub orig_h: u32,
    pub content_w: u32,
    pub content_h: u32,
    pub pad_x: u32,
    pub pad_y: u32,
    pub scale_x: f64,
    pub scale_y: f64,
}

fn stretch_sample(src: &RasterImage, out_w: u32, out_h: u32) -> RasterImage {
    let sx_scale = out_w as f64 / src.width as f64;
    let sy_scale = out_h as f64 / src.height as f64;
    let mut out = RasterImage::filled(out_w, out_h, [0, 0, 0]);
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) / sy_scale - 0.5).clamp(0.0, (src.height - 1) as f64);
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) / sx_scale - 0.5).clamp(0.0, (src.width - 1) as f64);
            let rgb = sample_bilinear(src, sx, sy).expect("clamped sample is inside the grid");
            out.put(x, y, rgb);
        }
    }
    out
}

/// Resizes to `target_w` x `target_h` with bilinear resampling.
///
/// With `preserve_aspect` the content is scaled to fit inside the target box
/// and centered on a [`FILL_RGB`] letterbox; the returned [`ResizeInfo`]
/// suffices to invert the operation with [`restore`]. Without it the image is
/// stretched to the target independently per axis.
pub fn resize(
    image: &RasterImage,
    target_w: u32,
    target_h: u32,
    preserve_aspect: bool,
) -> (RasterImage, ResizeInfo) {
    assert!(target_w >= 1 && target_h >= 1, "targets must be >= 1");
    let (content_w, content_h) = if preserve_aspect {
        let s = (target_w as f64 / image.width as f64).min(target_h as f64 / image.height as f64);
        let cw = ((image.width as f64 * s).round() as u32).clamp(1, target_w);
        let ch = ((image.height as f64 * s).round() as u32).clamp(1, target_h);
        (cw, ch)
    } else {
        (target_w, target_h)
    };
    let pad_x = (target_w - content_w) / 2;
    let pad_y = (target_h - content_h) / 2;
    let info = ResizeInfo {
        orig_w: image.width,
        orig_h: image.height,
        content_w,
        content_h,
        pad_x,
        pad_y,
        scale_x: content_w as f64 / image.width as f64,
        scale_y: content_h as f64 / image.height as f64,
    };

    let content = if content_w == image.width && content_h == image.height {
        image.clone()
    } else {
        stretch_sample(image, content_w, content_h)
    };

    if content_w == target_w && content_h == target_h {
        return (content, info);
    }
    let mut out = RasterImage::filled(target_w, target_h, FILL_RGB);
    for y in 0..content_h {
        for x in 0..content_w {
            out.put(pad_x + x, pad_y + y, content.get(x, y));
        }
    }
    (out, info)
}

/// Inverts [`resize`]: crops the content band and resamples it back to the
/// original dimensions recorded in `info`.
pub fn restore(image: &RasterImage, info: &ResizeInfo) -> RasterImage {
    let mut content = RasterImage::filled(info.content_w, info.content_h, [0, 0, 0]);
    for y in 0..info.content_h {
        for x in 0..info.content_w {
            content.put(x, y, image.get(info.pad_x + x, info.pad_y + y));
        }
    }
    if info.content_w == info.orig_w && info.content_h == info.orig_h {
        content
    } else {
        stretch_sample(&content, info.orig_w, info.orig_h)
    }
}
