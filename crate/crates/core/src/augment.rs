//! Seeded augmentation: affine transforms with box propagation, HSV jitter,
//! mixup blending, and four-image mosaics.
//!
//! Every operation is deterministic given its generator state. Whole-frame
//! augmentation is keyed by a single 64-bit seed derived from the global
//! seed and the frame identity, so parallel execution cannot reorder
//! randomness.
//!
//! Random draw order inside [`augment_frame`] is fixed: mosaic gate, mosaic
//! pool picks and pivot, mixup gate, mixup pick and blend weight, affine
//! parameters (scale, angle, shear, translation x/y, flip), then the three
//! HSV gains.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imagery::{
    hsv_to_rgb, rgb_to_hsv, warp_affine, AffineMap, ImageError, RasterImage, FILL_RGB,
};
use crate::labels::{clip_box, NormBox};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("frame pool exhausted: needed {needed}, pool holds {available}")]
    PoolExhausted { needed: usize, available: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("failed to fetch pool frame {index}: {detail}")]
    PoolFetch { index: usize, detail: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Augmentation policy: magnitudes and probabilities of every transform.
///
/// The default values are the shipped pipeline configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugPolicy {
    /// Max scale deviation fraction; scale is drawn from `[1-zoom, 1+zoom]`.
    pub zoom: f64,
    /// Max rotation in degrees.
    pub rotation: f64,
    /// Max translation as a fraction of width/height.
    pub translate: f64,
    /// Max shear in degrees.
    pub shear: f64,
    /// Horizontal flip probability.
    pub hflip_p: f64,
    /// Max additive hue shift as a fraction of the hue circle.
    pub hue: f64,
    /// Max multiplicative saturation deviation.
    pub saturation: f64,
    /// Max multiplicative value (brightness) deviation.
    pub value: f64,
    pub mixup_p: f64,
    pub mosaic_p: f64,
}

impl Default for AugPolicy {
    fn default() -> Self {
        Self {
            zoom: 0.5,
            rotation: 0.4,
            translate: 0.1,
            shear: 0.1,
            hflip_p: 0.5,
            hue: 0.015,
            saturation: 0.7,
            value: 0.4,
            mixup_p: 0.3,
            mosaic_p: 1.0,
        }
    }
}

impl AugPolicy {
    /// Policy with every magnitude and probability at zero: augmentation
    /// becomes the identity.
    pub fn identity() -> Self {
        Self {
            zoom: 0.0,
            rotation: 0.0,
            translate: 0.0,
            shear: 0.0,
            hflip_p: 0.0,
            hue: 0.0,
            saturation: 0.0,
            value: 0.0,
            mixup_p: 0.0,
            mosaic_p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, p) in [
            ("hflip_p", self.hflip_p),
            ("mixup_p", self.mixup_p),
            ("mosaic_p", self.mosaic_p),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(AugmentError::InvalidPolicy(format!(
                    "probability {name} = {p} outside [0, 1]"
                )));
            }
        }
        for (name, m) in [
            ("zoom", self.zoom),
            ("rotation", self.rotation),
            ("translate", self.translate),
            ("shear", self.shear),
            ("hue", self.hue),
            ("saturation", self.saturation),
            ("value", self.value),
        ] {
            if m < 0.0 || !m.is_finite() {
                return Err(AugmentError::InvalidPolicy(format!(
                    "magnitude {name} = {m} is negative"
                )));
            }
        }
        if self.zoom >= 1.0 {
            return Err(AugmentError::InvalidPolicy(format!(
                "zoom {} must stay below 1 so sampled scales remain positive",
                self.zoom
            )));
        }
        if self.shear >= 90.0 {
            return Err(AugmentError::InvalidPolicy(format!(
                "shear {} degrees reaches a degenerate tangent",
                self.shear
            )));
        }
        Ok(())
    }
}

/// One sampled realization of the affine part of a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub scale: f64,
    pub angle_deg: f64,
    pub shear_x_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub flip: bool,
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            angle_deg: 0.0,
            shear_x_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
            flip: false,
        }
    }
}

#[inline]
fn sample_symmetric(rng: &mut impl Rng, magnitude: f64) -> f64 {
    if magnitude == 0.0 {
        0.0
    } else {
        rng.random_range(-magnitude..=magnitude)
    }
}

/// Draws affine parameters: scale from `[1-zoom, 1+zoom]`, angle/shear/
/// translation symmetric around zero, flip with `hflip_p`.
pub fn sample_affine(policy: &AugPolicy, rng: &mut impl Rng) -> AffineParams {
    let scale = if policy.zoom == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - policy.zoom..=1.0 + policy.zoom)
    };
    let angle_deg = sample_symmetric(rng, policy.rotation);
    let shear_x_deg = sample_symmetric(rng, policy.shear);
    let translate_x = sample_symmetric(rng, policy.translate);
    let translate_y = sample_symmetric(rng, policy.translate);
    let flip = policy.hflip_p > 0.0 && rng.random::<f64>() < policy.hflip_p;
    AffineParams {
        scale,
        angle_deg,
        shear_x_deg,
        translate_x,
        translate_y,
        flip,
    }
}

/// Builds the output-to-source map realizing `params` on a `w` x `h` canvas.
///
/// The forward transform composes about the image center, in order: flip,
/// scale, rotation, shear, then translation by `(translate_x * w,
/// translate_y * h)`. The returned map is its inverse, ready for
/// [`warp_affine`].
pub fn affine_to_map(params: &AffineParams, w: u32, h: u32) -> Result<AffineMap, AugmentError> {
    let theta = params.angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let shear_tan = params.shear_x_deg.to_radians().tan();
    let s = params.scale;
    let fx = if params.flip { -1.0 } else { 1.0 };

    // linear part: shear * rotation * scale * flip
    let (r00, r01, r10, r11) = (cos, -sin, sin, cos);
    let (a00, a01) = (r00 + shear_tan * r10, r01 + shear_tan * r11);
    let (a10, a11) = (r10, r11);
    let l00 = a00 * s * fx;
    let l01 = a01 * s;
    let l10 = a10 * s * fx;
    let l11 = a11 * s;

    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let tx = params.translate_x * w as f64;
    let ty = params.translate_y * h as f64;

    // forward: p -> L (p - c) + c + t; invert for output-to-source
    let det = l00 * l11 - l01 * l10;
    if det == 0.0 || !det.is_finite() {
        return Err(AugmentError::Image(ImageError::DegenerateMap));
    }
    let (i00, i01, i10, i11) = (l11 / det, -l01 / det, -l10 / det, l00 / det);
    let px = cx + tx;
    let py = cy + ty;
    let c0 = cx - (i00 * px + i01 * py);
    let c1 = cy - (i10 * px + i11 * py);
    Ok(AffineMap::new([i00, i01, c0, i10, i11, c1])?)
}

/// Continuous pixel coordinate of a normalized position: pixel `i` covers
/// `[i - 0.5, i + 0.5]`, so the image spans `[-0.5, size - 0.5]`.
#[inline]
fn norm_to_px(v: f64, size: u32) -> f64 {
    v * size as f64 - 0.5
}

#[inline]
fn px_to_norm(p: f64, size: u32) -> f64 {
    (p + 0.5) / size as f64
}

/// Propagates boxes through an output-to-source warp map.
///
/// Each box's corners are pushed through the forward (source-to-output)
/// map, the axis-aligned hull is clipped to the unit square, and the box is
/// dropped when the clipped area falls below 10% of the transformed hull
/// (or below the 2-pixel floor applied by [`clip_box`]).
pub fn transform_boxes(
    boxes: &[NormBox],
    map: &AffineMap,
    w: u32,
    h: u32,
) -> Result<Vec<NormBox>, AugmentError> {
    let forward = map.inverse()?;
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        let corners = [
            (b.left(), b.top()),
            (b.right(), b.top()),
            (b.left(), b.bottom()),
            (b.right(), b.bottom()),
        ];
        let mut x0 = f64::INFINITY;
        let mut y0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for (u, v) in corners {
            let (px, py) = forward.apply(norm_to_px(u, w), norm_to_px(v, h));
            let (nx, ny) = (px_to_norm(px, w), px_to_norm(py, h));
            x0 = x0.min(nx);
            y0 = y0.min(ny);
            x1 = x1.max(nx);
            y1 = y1.max(ny);
        }
        let hull = NormBox::new(b.class_id, (x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0);
        let hull_area = hull.area();
        if let Some(clipped) = clip_box(&hull) {
            if clipped.area() >= 0.1 * hull_area {
                out.push(clipped);
            }
        }
    }
    Ok(out)
}

/// Applies per-image HSV gains: additive wrapping hue shift and
/// multiplicative saturation/value gains clamped to `[0, 1]`.
pub fn hsv_jitter(image: &RasterImage, rng: &mut impl Rng, policy: &AugPolicy) -> RasterImage {
    let gain_h = sample_symmetric(rng, policy.hue);
    let gain_s = if policy.saturation == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - policy.saturation..=1.0 + policy.saturation)
    };
    let gain_v = if policy.value == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - policy.value..=1.0 + policy.value)
    };
    if gain_h == 0.0 && gain_s == 1.0 && gain_v == 1.0 {
        return image.clone();
    }
    let mut pixels = Vec::with_capacity(image.pixels().len());
    for px in image.pixels().chunks_exact(3) {
        let mut hsv = rgb_to_hsv(px[0], px[1], px[2]);
        hsv.h = (hsv.h + gain_h).rem_euclid(1.0);
        hsv.s = (hsv.s * gain_s).clamp(0.0, 1.0);
        hsv.v = (hsv.v * gain_v).clamp(0.0, 1.0);
        pixels.extend_from_slice(&hsv_to_rgb(hsv));
    }
    RasterImage::new(image.width(), image.height(), pixels).expect("same dimensions")
}

/// An image with its boxes, the unit augmentation operates on.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub image: RasterImage,
    pub boxes: Vec<NormBox>,
}

/// Blends two same-sized frames: `lambda * a + (1 - lambda) * b` per
/// channel, rounded half away from zero; labels are the union.
pub fn mixup(a: &FrameData, b: &FrameData, lambda: f64) -> Result<FrameData, AugmentError> {
    let (aw, ah) = (a.image.width(), a.image.height());
    let (bw, bh) = (b.image.width(), b.image.height());
    if (aw, ah) != (bw, bh) {
        return Err(AugmentError::DimensionMismatch(aw, ah, bw, bh));
    }
    let pixels: Vec<u8> = a
        .image
        .pixels()
        .iter()
        .zip(b.image.pixels())
        .map(|(&pa, &pb)| {
            (lambda * pa as f64 + (1.0 - lambda) * pb as f64)
                .round()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    let mut boxes = a.boxes.clone();
    boxes.extend_from_slice(&b.boxes);
    Ok(FrameData {
        image: RasterImage::new(aw, ah, pixels).expect("same dimensions"),
        boxes,
    })
}

/// Composes four same-sized frames on a double canvas around a random pivot
/// and downscales back to the input size.
///
/// The pivot is drawn uniformly from the central half of the double canvas
/// and rounded to a whole pixel. Frame 0 anchors its bottom-right corner to
/// the pivot, frames 1..3 fill the other quadrants clockwise; regions no
/// image covers take the fill color.
pub fn mosaic4(frames: &[FrameData; 4], rng: &mut impl Rng) -> Result<FrameData, AugmentError> {
    let w = frames[0].image.width();
    let h = frames[0].image.height();
    let pivot_x = rng.random_range(0.5 * w as f64..=1.5 * w as f64).round() as i64;
    let pivot_y = rng.random_range(0.5 * h as f64..=1.5 * h as f64).round() as i64;
    mosaic4_with_pivot(frames, pivot_x, pivot_y)
}

/// [`mosaic4`] with an explicit pivot on the double canvas.
pub fn mosaic4_with_pivot(
    frames: &[FrameData; 4],
    pivot_x: i64,
    pivot_y: i64,
) -> Result<FrameData, AugmentError> {
    let w = frames[0].image.width();
    let h = frames[0].image.height();
    for f in frames.iter().skip(1) {
        if (f.image.width(), f.image.height()) != (w, h) {
            return Err(AugmentError::DimensionMismatch(
                w,
                h,
                f.image.width(),
                f.image.height(),
            ));
        }
    }
    let (cw, ch) = (2 * w, 2 * h);
    let mut canvas = RasterImage::filled(cw, ch, FILL_RGB);

    // top-left corner of each quadrant image on the canvas
    let offsets = [
        (pivot_x - w as i64, pivot_y - h as i64),
        (pivot_x, pivot_y - h as i64),
        (pivot_x - w as i64, pivot_y),
        (pivot_x, pivot_y),
    ];
    let mut boxes = Vec::new();
    for (frame, &(ox, oy)) in frames.iter().zip(&offsets) {
        for sy in 0..h as i64 {
            let dy = oy + sy;
            if dy < 0 || dy >= ch as i64 {
                continue;
            }
            for sx in 0..w as i64 {
                let dx = ox + sx;
                if dx < 0 || dx >= cw as i64 {
                    continue;
                }
                canvas.put(dx as u32, dy as u32, frame.image.get(sx as u32, sy as u32));
            }
        }
        for b in &frame.boxes {
            // box edges in canvas pixel units, then back to canvas fractions
            let x0 = (b.left() * w as f64 + ox as f64) / cw as f64;
            let x1 = (b.right() * w as f64 + ox as f64) / cw as f64;
            let y0 = (b.top() * h as f64 + oy as f64) / ch as f64;
            let y1 = (b.bottom() * h as f64 + oy as f64) / ch as f64;
            let moved = NormBox::new(b.class_id, (x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0);
            if let Some(clipped) = clip_box(&moved) {
                boxes.push(clipped);
            }
        }
    }

    let (image, _) = crate::imagery::resize(&canvas, w, h, false);
    Ok(FrameData { image, boxes })
}

/// Provides extra frames for mosaic and mixup. Index order must be stable;
/// augmentation draws indices from its seeded generator.
pub trait FramePool {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fetch(&self, index: usize) -> Result<FrameData, AugmentError>;
}

impl FramePool for [FrameData] {
    fn len(&self) -> usize {
        <[FrameData]>::len(self)
    }

    fn fetch(&self, index: usize) -> Result<FrameData, AugmentError> {
        Ok(self[index].clone())
    }
}

impl FramePool for Vec<FrameData> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn fetch(&self, index: usize) -> Result<FrameData, AugmentError> {
        Ok(self[index].clone())
    }
}

fn draw_distinct(
    rng: &mut impl Rng,
    pool_len: usize,
    needed: usize,
) -> Result<Vec<usize>, AugmentError> {
    if pool_len < needed {
        return Err(AugmentError::PoolExhausted {
            needed,
            available: pool_len,
        });
    }
    let mut picks: Vec<usize> = Vec::with_capacity(needed);
    while picks.len() < needed {
        let i = rng.random_range(0..pool_len);
        if !picks.contains(&i) {
            picks.push(i);
        }
    }
    Ok(picks)
}

/// Stable per-frame seed from the global seed, a pipeline stage label, the
/// frame stem, and a replica index.
pub fn derive_seed(global: u64, stage: &str, stem: &str, replica: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(stage.as_bytes());
    hasher.update([0x1f]);
    hasher.update(stem.as_bytes());
    hasher.update([0x1f]);
    hasher.update(replica.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Runs the full augmentation chain on one frame.
///
/// With probability `mosaic_p` the frame becomes the first tile of a mosaic
/// over three pool frames; with probability `mixup_p` it is blended with one
/// pool frame using a Beta(32, 32) weight; the sampled affine warp and HSV
/// jitter always follow. Output is a pure function of `(frame, pool, policy,
/// seed)`.
pub fn augment_frame(
    frame: &FrameData,
    pool: &dyn FramePool,
    policy: &AugPolicy,
    seed: u64,
) -> Result<FrameData, AugmentError> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = frame.clone();

    if policy.mosaic_p > 0.0 && rng.random::<f64>() < policy.mosaic_p {
        let picks = draw_distinct(&mut rng, pool.len(), 3)?;
        let extra: Vec<FrameData> = picks
            .iter()
            .map(|&i| pool.fetch(i))
            .collect::<Result<_, _>>()?;
        let tiles = [work, extra[0].clone(), extra[1].clone(), extra[2].clone()];
        work = mosaic4(&tiles, &mut rng)?;
    }

    if policy.mixup_p > 0.0 && rng.random::<f64>() < policy.mixup_p {
        if pool.is_empty() {
            return Err(AugmentError::PoolExhausted {
                needed: 1,
                available: 0,
            });
        }
        let pick = rng.random_range(0..pool.len());
        let other = pool.fetch(pick)?;
        let beta = Beta::new(32.0, 32.0).expect("fixed valid parameters");
        let lambda: f64 = beta.sample(&mut rng);
        work = mixup(&work, &other, lambda)?;
    }

    let params = sample_affine(policy, &mut rng);
    let map = affine_to_map(&params, work.image.width(), work.image.height())?;
    let image = warp_affine(
        &work.image,
        &map,
        work.image.width(),
        work.image.height(),
        FILL_RGB,
    )?;
    let boxes = transform_boxes(&work.boxes, &map, work.image.width(), work.image.height())?;
    work = FrameData { image, boxes };

    let image = hsv_jitter(&work.image, &mut rng, policy);
    Ok(FrameData {
        image,
        boxes: work.boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checker(w: u32, h: u32) -> RasterImage {
        let mut img = RasterImage::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                let v = if (x / 4 + y / 4) % 2 == 0 { 200 } else { 40 };
                img.put(x, y, [v, v / 2, 255 - v]);
            }
        }
        img
    }

    #[test]
    fn default_policy_matches_shipped_configuration() {
        let p = AugPolicy::default();
        assert_eq!(
            (
                p.zoom, p.rotation, p.translate, p.shear, p.hflip_p, p.hue, p.saturation, p.value,
                p.mixup_p, p.mosaic_p
            ),
            (0.5, 0.4, 0.1, 0.1, 0.5, 0.015, 0.7, 0.4, 0.3, 1.0)
        );
    }

    #[test]
    fn zero_policy_samples_identity_params() {
        for seed in [0u64, 1, 99, 12345] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = sample_affine(&AugPolicy::identity(), &mut rng);
            assert_eq!(params, AffineParams::identity());
        }
    }

    #[test]
    fn default_policy_scale_stays_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let params = sample_affine(&AugPolicy::default(), &mut rng);
            assert!((0.5..=1.5).contains(&params.scale));
            assert!(params.angle_deg.abs() <= 0.4);
            assert!(params.shear_x_deg.abs() <= 0.1);
            assert!(params.translate_x.abs() <= 0.1);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample_affine(&AugPolicy::default(), &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_affine(&AugPolicy::default(), &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn identity_params_give_identity_map() {
        let map = affine_to_map(&AffineParams::identity(), 64, 48).unwrap();
        assert_eq!(map.coeffs(), AffineMap::identity().coeffs());
    }

    #[test]
    fn flip_map_mirrors_x() {
        let params = AffineParams {
            flip: true,
            ..AffineParams::identity()
        };
        let map = affine_to_map(&params, 10, 10).unwrap();
        let (sx, sy) = map.apply(0.0, 3.0);
        assert!((sx - 9.0).abs() < 1e-12);
        assert!((sy - 3.0).abs() < 1e-12);
    }

    #[test]
    fn double_scale_has_half_linear_part() {
        let params = AffineParams {
            scale: 2.0,
            ..AffineParams::identity()
        };
        let map = affine_to_map(&params, 11, 11).unwrap();
        let c = map.coeffs();
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[4] - 0.5).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12 && c[3].abs() < 1e-12);
        // center is fixed
        let (sx, sy) = map.apply(5.0, 5.0);
        assert!((sx - 5.0).abs() < 1e-12 && (sy - 5.0).abs() < 1e-12);
    }

    #[test]
    fn boxes_pass_identity_unchanged() {
        let boxes = vec![NormBox::new(0, 0.4, 0.6, 0.2, 0.3)];
        let out = transform_boxes(&boxes, &AffineMap::identity(), 64, 64).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].cx - 0.4).abs() < 1e-9 && (out[0].w - 0.2).abs() < 1e-9);
    }

    #[test]
    fn flip_reflects_box_center() {
        let params = AffineParams {
            flip: true,
            ..AffineParams::identity()
        };
        let map = affine_to_map(&params, 64, 64).unwrap();
        let boxes = vec![NormBox::new(0, 0.3, 0.6, 0.2, 0.1)];
        let out = transform_boxes(&boxes, &map, 64, 64).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].cx - 0.7).abs() < 1e-9, "cx {}", out[0].cx);
        assert!((out[0].cy - 0.6).abs() < 1e-9);
        assert!((out[0].w - 0.2).abs() < 1e-9 && (out[0].h - 0.1).abs() < 1e-9);
    }

    #[test]
    fn quarter_turn_swaps_box_extents() {
        let params = AffineParams {
            angle_deg: 90.0,
            ..AffineParams::identity()
        };
        let map = affine_to_map(&params, 64, 64).unwrap();
        let out =
            transform_boxes(&[NormBox::new(0, 0.25, 0.50, 0.10, 0.20)], &map, 64, 64).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].cx - 0.50).abs() < 1e-9, "cx {}", out[0].cx);
        assert!((out[0].cy - 0.25).abs() < 1e-9, "cy {}", out[0].cy);
        assert!((out[0].w - 0.20).abs() < 1e-9);
        assert!((out[0].h - 0.10).abs() < 1e-9);
    }

    #[test]
    fn flip_is_an_involution_on_pixels_and_boxes() {
        let image = checker(32, 24);
        let boxes = vec![NormBox::new(0, 0.3, 0.4, 0.25, 0.5)];
        let params = AffineParams {
            flip: true,
            ..AffineParams::identity()
        };
        let map = affine_to_map(&params, 32, 24).unwrap();
        let once = warp_affine(&image, &map, 32, 24, FILL_RGB).unwrap();
        let twice = warp_affine(&once, &map, 32, 24, FILL_RGB).unwrap();
        assert_eq!(twice, image);
        let boxes_once = transform_boxes(&boxes, &map, 32, 24).unwrap();
        let boxes_twice = transform_boxes(&boxes_once, &map, 32, 24).unwrap();
        assert!((boxes_twice[0].cx - boxes[0].cx).abs() < 1e-9);
        assert!((boxes_twice[0].w - boxes[0].w).abs() < 1e-9);
    }

    #[test]
    fn hsv_jitter_zero_policy_is_identity() {
        let image = checker(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = hsv_jitter(&image, &mut rng, &AugPolicy::identity());
        assert_eq!(out, image);
    }

    #[test]
    fn hsv_jitter_keeps_gray_under_saturation_gain() {
        let image = RasterImage::filled(8, 8, [128, 128, 128]);
        let policy = AugPolicy {
            saturation: 0.7,
            ..AugPolicy::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = hsv_jitter(&image, &mut rng, &policy);
        for px in out.pixels().chunks_exact(3) {
            assert!((px[0] as i16 - 128).abs() <= 1);
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn value_gain_clamps_at_white() {
        // v = 200/255 under gain 1.4 exceeds 1, so the channel saturates
        let image = RasterImage::filled(2, 2, [200, 200, 200]);
        let policy = AugPolicy {
            value: 0.4,
            ..AugPolicy::identity()
        };
        // find a seed whose sampled gain is close to the top of the band
        let mut chosen = None;
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: f64 = rng.random_range(1.0 - 0.4..=1.0 + 0.4);
            if g > 1.3 {
                chosen = Some(seed);
                break;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(chosen.expect("some seed lands above 1.3"));
        let out = hsv_jitter(&image, &mut rng, &policy);
        assert_eq!(out.get(0, 0), [255, 255, 255]);
    }

    #[test]
    fn mixup_endpoint_and_midpoint() {
        let a = FrameData {
            image: RasterImage::filled(4, 4, [0, 0, 0]),
            boxes: vec![
                NormBox::new(0, 0.3, 0.3, 0.2, 0.2),
                NormBox::new(0, 0.7, 0.7, 0.2, 0.2),
            ],
        };
        let b = FrameData {
            image: RasterImage::filled(4, 4, [255, 255, 255]),
            boxes: vec![
                NormBox::new(0, 0.5, 0.5, 0.2, 0.2),
                NormBox::new(0, 0.2, 0.8, 0.2, 0.2),
                NormBox::new(0, 0.8, 0.2, 0.2, 0.2),
            ],
        };
        let full = mixup(&a, &b, 1.0).unwrap();
        assert_eq!(full.image, a.image);
        assert_eq!(full.boxes.len(), 5);

        let half = mixup(&a, &b, 0.5).unwrap();
        // 127.5 rounds away from zero
        assert_eq!(half.image.get(0, 0), [128, 128, 128]);
    }

    #[test]
    fn mixup_rejects_dimension_mismatch() {
        let a = FrameData {
            image: RasterImage::filled(4, 4, [0, 0, 0]),
            boxes: vec![],
        };
        let b = FrameData {
            image: RasterImage::filled(5, 4, [0, 0, 0]),
            boxes: vec![],
        };
        assert!(matches!(
            mixup(&a, &b, 0.5),
            Err(AugmentError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn central_pivot_places_boxes_at_quadrant_centers() {
        let tile = FrameData {
            image: checker(32, 32),
            boxes: vec![NormBox::new(0, 0.5, 0.5, 0.25, 0.25)],
        };
        let frames = [tile.clone(), tile.clone(), tile.clone(), tile.clone()];
        let out = mosaic4_with_pivot(&frames, 32, 32).unwrap();
        assert_eq!((out.image.width(), out.image.height()), (32, 32));
        assert_eq!(out.boxes.len(), 4);
        let mut centers: Vec<(f64, f64)> = out.boxes.iter().map(|b| (b.cx, b.cy)).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)];
        for ((cx, cy), (ex, ey)) in centers.iter().zip(expect) {
            assert!((cx - ex).abs() < 1e-9 && (cy - ey).abs() < 1e-9);
        }
        for b in &out.boxes {
            assert!((b.w - 0.125).abs() < 1e-9 && (b.h - 0.125).abs() < 1e-9);
        }
    }

    #[test]
    fn mosaic_output_size_and_empty_labels() {
        let blank = FrameData {
            image: checker(16, 24),
            boxes: vec![],
        };
        let frames = [blank.clone(), blank.clone(), blank.clone(), blank.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = mosaic4(&frames, &mut rng).unwrap();
        assert_eq!((out.image.width(), out.image.height()), (16, 24));
        assert!(out.boxes.is_empty());
    }

    #[test]
    fn mosaic_box_count_is_sum_of_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let mk = |n: usize| FrameData {
                image: checker(24, 24),
                boxes: (0..n)
                    .map(|i| NormBox::new(0, 0.2 + 0.15 * i as f64, 0.5, 0.1, 0.2))
                    .collect(),
            };
            let frames = [mk(1), mk(2), mk(3), mk(0)];
            let out = mosaic4(&frames, &mut rng).unwrap();
            assert!(out.boxes.len() <= 6);
        }
    }

    #[test]
    fn augment_frame_zero_policy_is_identity() {
        let frame = FrameData {
            image: checker(20, 20),
            boxes: vec![NormBox::new(0, 0.5, 0.5, 0.3, 0.3)],
        };
        let pool: Vec<FrameData> = vec![];
        let out = augment_frame(&frame, &pool, &AugPolicy::identity(), 42).unwrap();
        assert_eq!(out.image, frame.image);
        assert_eq!(out.boxes.len(), 1);
        assert!((out.boxes[0].cx - 0.5).abs() < 1e-9);
    }

    #[test]
    fn augment_frame_is_seed_deterministic() {
        let frame = FrameData {
            image: checker(24, 24),
            boxes: vec![NormBox::new(0, 0.4, 0.5, 0.25, 0.3)],
        };
        let pool: Vec<FrameData> = (0..5)
            .map(|i| FrameData {
                image: checker(24, 24),
                boxes: vec![NormBox::new(0, 0.3 + 0.1 * i as f64, 0.5, 0.15, 0.2)],
            })
            .collect();
        let a = augment_frame(&frame, &pool, &AugPolicy::default(), 9).unwrap();
        let b = augment_frame(&frame, &pool, &AugPolicy::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = augment_frame(&frame, &pool, &AugPolicy::default(), 10).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn default_policy_always_takes_the_mosaic_branch() {
        // With mosaic_p = 1 and an undersized pool the mosaic draw must fail.
        let frame = FrameData {
            image: checker(16, 16),
            boxes: vec![],
        };
        let pool: Vec<FrameData> = vec![frame.clone(), frame.clone()];
        for seed in 0..20u64 {
            let result = augment_frame(&frame, &pool, &AugPolicy::default(), seed);
            assert!(matches!(
                result,
                Err(AugmentError::PoolExhausted {
                    needed: 3,
                    available: 2
                })
            ));
        }
    }

    #[test]
    fn mixup_branch_needs_a_nonempty_pool() {
        let frame = FrameData {
            image: checker(12, 12),
            boxes: vec![],
        };
        let pool: Vec<FrameData> = vec![];
        let policy = AugPolicy {
            mixup_p: 1.0,
            ..AugPolicy::identity()
        };
        assert!(matches!(
            augment_frame(&frame, &pool, &policy, 4),
            Err(AugmentError::PoolExhausted {
                needed: 1,
                available: 0
            })
        ));
    }

    #[test]
    fn derive_seed_separates_stages_and_replicas() {
        let a = derive_seed(1, "augment", "frame1", 1);
        assert_eq!(a, derive_seed(1, "augment", "frame1", 1));
        assert_ne!(a, derive_seed(1, "synth", "frame1", 1));
        assert_ne!(a, derive_seed(1, "augment", "frame2", 1));
        assert_ne!(a, derive_seed(1, "augment", "frame1", 2));
        assert_ne!(a, derive_seed(2, "augment", "frame1", 1));
    }

    #[test]
    fn policy_validation_catches_bad_values() {
        let bad = [
            AugPolicy {
                mosaic_p: 1.5,
                ..AugPolicy::default()
            },
            AugPolicy {
                zoom: 1.0,
                ..AugPolicy::default()
            },
            AugPolicy {
                rotation: -0.1,
                ..AugPolicy::default()
            },
            AugPolicy {
                shear: 90.0,
                ..AugPolicy::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?} should not validate");
        }
        assert!(AugPolicy::default().validate().is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn transformed_boxes_always_satisfy_invariants(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = sample_affine(&AugPolicy::default(), &mut rng);
            let map = affine_to_map(&params, 64, 64).unwrap();
            let boxes: Vec<NormBox> = (0..4)
                .map(|_| {
                    let cx: f64 = rng.random_range(0.15..0.85);
                    let cy: f64 = rng.random_range(0.15..0.85);
                    let w = rng.random_range(0.05..0.3f64).min(2.0 * cx.min(1.0 - cx));
                    let h = rng.random_range(0.05..0.3f64).min(2.0 * cy.min(1.0 - cy));
                    NormBox::new(0, cx, cy, w, h)
                })
                .collect();
            for b in transform_boxes(&boxes, &map, 64, 64).unwrap() {
                prop_assert!(b.validate().is_ok(), "invalid box {:?}", b);
            }
        }

        #[test]
        fn mosaic_never_duplicates_and_respects_invariants(seed in 0u64..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |rng: &mut ChaCha8Rng| {
                let n = rng.random_range(0..3usize);
                FrameData {
                    image: checker(20, 20),
                    boxes: (0..n).map(|_| {
                        let cx = rng.random_range(0.2..0.8);
                        let cy = rng.random_range(0.2..0.8);
                        let cx: f64 = cx;
                        let cy: f64 = cy;
                        NormBox::new(0, cx, cy, (2.0 * cx.min(1.0 - cx)).min(0.2), (2.0 * cy.min(1.0 - cy)).min(0.2))
                    }).collect(),
                }
            };
            let frames = [mk(&mut rng), mk(&mut rng), mk(&mut rng), mk(&mut rng)];
            let input_count: usize = frames.iter().map(|f| f.boxes.len()).sum();
            let out = mosaic4(&frames, &mut rng).unwrap();
            prop_assert!(out.boxes.len() <= input_count);
            for b in &out.boxes {
                prop_assert!(b.validate().is_ok());
            }
        }
    }
}
