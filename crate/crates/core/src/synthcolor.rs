//! Structure-preserving synthetic color augmentation.
//!
//! Appearance is moved between frames by matching per-channel statistics in
//! a decorrelated log-opponent color space: channels are log-transformed and
//! rotated by a fixed orthonormal opponent basis, so independent per-channel
//! scaling approximates a perceptually plausible recoloring while pixel
//! geometry (and therefore every box annotation) stays untouched.
//!
//! The module also implements the generator-style preprocessing pipeline
//! (RGB, aspect-preserving resize, normalization to `[-1, 1]`) with an exact
//! restore path, and ingestion of externally generated synthetic images
//! following the `<stem>_gan[N]` naming convention.

use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::datasetops::{synth_source_stem, DatasetManifest};
use crate::imagery::{resize, restore, ImageError, RasterImage, ResizeInfo};
use crate::labels::{LabeledFrame, Modality};

const INV_SQRT3: f64 = 0.5773502691896258;
const INV_SQRT6: f64 = 0.4082482904638631;
const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard deviations below this are treated as a constant channel.
const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("empty color statistics pool")]
    EmptyPool,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Per-channel mean and standard deviation in the decorrelated space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Provenance record of one synthesized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub source_stem: String,
    pub target: ColorStats,
    pub output_stem: String,
}

#[inline]
fn rgb_to_decorrelated(r: u8, g: u8, b: u8) -> [f64; 3] {
    // +1 keeps the log finite at zero
    let lr = (r as f64 + 1.0).ln();
    let lg = (g as f64 + 1.0).ln();
    let lb = (b as f64 + 1.0).ln();
    [
        (lr + lg + lb) * INV_SQRT3,
        (lr + lg - 2.0 * lb) * INV_SQRT6,
        (lr - lg) * INV_SQRT2,
    ]
}

#[inline]
fn decorrelated_to_rgb(v: [f64; 3]) -> [u8; 3] {
    // the basis is orthonormal, so the inverse rotation is the transpose
    let lr = v[0] * INV_SQRT3 + v[1] * INV_SQRT6 + v[2] * INV_SQRT2;
    let lg = v[0] * INV_SQRT3 + v[1] * INV_SQRT6 - v[2] * INV_SQRT2;
    let lb = v[0] * INV_SQRT3 - 2.0 * v[1] * INV_SQRT6;
    let back = |l: f64| (l.exp() - 1.0).round().clamp(0.0, 255.0) as u8;
    [back(lr), back(lg), back(lb)]
}

/// Per-channel mean and population standard deviation of the image in the
/// decorrelated space.
pub fn channel_stats(image: &RasterImage) -> ColorStats {
    let n = (image.width() as usize * image.height() as usize) as f64;
    let mut sum = [0.0f64; 3];
    for px in image.pixels().chunks_exact(3) {
        let v = rgb_to_decorrelated(px[0], px[1], px[2]);
        for c in 0..3 {
            sum[c] += v[c];
        }
    }
    let mean = [sum[0] / n, sum[1] / n, sum[2] / n];
    let mut sq = [0.0f64; 3];
    for px in image.pixels().chunks_exact(3) {
        let v = rgb_to_decorrelated(px[0], px[1], px[2]);
        for c in 0..3 {
            let d = v[c] - mean[c];
            sq[c] += d * d;
        }
    }
    let snap = |s: f64| if s <= SIGMA_FLOOR { 0.0 } else { s };
    ColorStats {
        mean,
        std: [
            snap((sq[0] / n).sqrt()),
            snap((sq[1] / n).sqrt()),
            snap((sq[2] / n).sqrt()),
        ],
    }
}

/// Moves the image's channel statistics onto `target` in the decorrelated
/// space: `x' = (x - mean_src) * (std_tgt / std_src) + mean_tgt`, with
/// constant source channels shifted by the mean difference instead. Pixel
/// geometry is untouched.
pub fn color_transfer(src: &RasterImage, target: &ColorStats) -> RasterImage {
    let stats = channel_stats(src);
    let constant = [
        stats.std[0] <= SIGMA_FLOOR,
        stats.std[1] <= SIGMA_FLOOR,
        stats.std[2] <= SIGMA_FLOOR,
    ];
    let mut pixels = Vec::with_capacity(src.pixels().len());
    for px in src.pixels().chunks_exact(3) {
        let v = rgb_to_decorrelated(px[0], px[1], px[2]);
        let mut out = [0.0f64; 3];
        for c in 0..3 {
            out[c] = if constant[c] {
                v[c] + (target.mean[c] - stats.mean[c])
            } else {
                (v[c] - stats.mean[c]) * (target.std[c] / stats.std[c]) + target.mean[c]
            };
        }
        pixels.extend_from_slice(&decorrelated_to_rgb(out));
    }
    RasterImage::new(src.width(), src.height(), pixels).expect("same dimensions")
}

/// A synthesized frame: recolored pixels, inherited labels, and the record
/// of which statistics produced it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub image: RasterImage,
    pub frame: LabeledFrame,
    pub record: SynthRecord,
}

/// Synthesizes a color variant of `frame`.
///
/// Draws target statistics from the pool, perturbs mean and std per channel
/// by a multiplicative factor from `[1-jitter, 1+jitter]` (three mean
/// factors then three std factors), and applies [`color_transfer`]. Labels
/// are copied verbatim; the output frame is `<stem>_gan` with modality
/// SYNTH. Paths are left empty until the caller materializes the frame.
///
/// Panics when `frame` is itself synthetic: synthesis chains are not a
/// thing this pipeline produces.
pub fn synthesize(
    frame: &LabeledFrame,
    image: &RasterImage,
    stat_pool: &[ColorStats],
    rng: &mut impl Rng,
    jitter: f64,
) -> Result<SynthOutput, SynthError> {
    assert!(
        frame.modality != Modality::Synth,
        "synthesize source must not be synthetic"
    );
    if stat_pool.is_empty() {
        return Err(SynthError::EmptyPool);
    }
    let base = stat_pool[rng.random_range(0..stat_pool.len())];
    let mut target = base;
    if jitter > 0.0 {
        for c in 0..3 {
            target.mean[c] *= rng.random_range(1.0 - jitter..=1.0 + jitter);
        }
        for c in 0..3 {
            target.std[c] *= rng.random_range(1.0 - jitter..=1.0 + jitter);
        }
    }
    let out_image = color_transfer(image, &target);
    let output_stem = format!("{}_gan", frame.stem);
    let out_frame = LabeledFrame {
        stem: output_stem.clone(),
        image_path: PathBuf::new(),
        label_path: PathBuf::new(),
        boxes: frame.boxes.clone(),
        patient_id: frame.patient_id.clone(),
        modality: Modality::Synth,
        source_stem: Some(frame.stem.clone()),
    };
    Ok(SynthOutput {
        image: out_image,
        frame: out_frame,
        record: SynthRecord {
            source_stem: frame.stem.clone(),
            target,
            output_stem,
        },
    })
}

/// [`synthesize`] with a fresh generator seeded from `seed`, for callers
/// that key synthesis by derived per-frame seeds.
pub fn synthesize_seeded(
    frame: &LabeledFrame,
    image: &RasterImage,
    stat_pool: &[ColorStats],
    seed: u64,
    jitter: f64,
) -> Result<SynthOutput, SynthError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    synthesize(frame, image, stat_pool, &mut rng, jitter)
}

/// Image normalized to `[-1, 1]` channels, the generator-facing form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB, each channel in `[-1, 1]`.
    pub data: Vec<f32>,
}

/// Metadata to undo [`generator_preprocess`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorMeta {
    pub resize: ResizeInfo,
}

/// Letterboxes the image into a `side` x `side` square and scales channels
/// to `[-1, 1]` (0 maps to -1, 255 to +1).
pub fn generator_preprocess(image: &RasterImage, side: u32) -> (NormalizedImage, GeneratorMeta) {
    let (resized, info) = resize(image, side, side, true);
    let data = resized
        .pixels()
        .iter()
        .map(|&c| c as f32 / 127.5 - 1.0)
        .collect();
    (
        NormalizedImage {
            width: side,
            height: side,
            data,
        },
        GeneratorMeta { resize: info },
    )
}

/// Inverts [`generator_preprocess`]: denormalizes channels and restores the
/// original dimensions exactly.
pub fn generator_restore(processed: &NormalizedImage, meta: &GeneratorMeta) -> RasterImage {
    let pixels: Vec<u8> = processed
        .data
        .iter()
        .map(|&v| ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect();
    let square = RasterImage::new(processed.width, processed.height, pixels)
        .expect("normalized buffer matches its dimensions");
    restore(&square, &meta.resize)
}

/// Result of scanning a directory of externally generated synthetic images.
#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub frames: Vec<LabeledFrame>,
    /// One message per skipped file (orphans and non-images).
    pub skipped: Vec<String>,
}

/// Registers externally generated synthetic images.
///
/// Files named `<stem>_gan[N].ppm` (or `.png`) whose `<stem>` matches a
/// source frame are registered with modality SYNTH and the source frame's
/// labels; orphans are reported and skipped.
pub fn ingest_synthetic(
    dir: &Path,
    sources: &DatasetManifest,
) -> Result<IngestOutcome, SynthError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| SynthError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();

    let mut outcome = IngestOutcome::default();
    for path in entries {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("ppm") | Some("png")) {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_string(),
            None => continue,
        };
        let Some(source_stem) = synth_source_stem(&stem) else {
            outcome.skipped.push(format!(
                "{}: no `_gan` suffix, not a synthetic image",
                path.display()
            ));
            continue;
        };
        let Some(source) = sources.get(&source_stem) else {
            outcome.skipped.push(format!(
                "{}: orphan synthetic image, no source frame '{}'",
                path.display(),
                source_stem
            ));
            continue;
        };
        outcome.frames.push(LabeledFrame {
            stem,
            image_path: path.clone(),
            label_path: source.label_path.clone(),
            boxes: source.boxes.clone(),
            patient_id: source.patient_id.clone(),
            modality: Modality::Synth,
            source_stem: Some(source_stem),
        });
    }
    Ok(outcome)
}

/// Thresholded gradient-magnitude map used by the structure-preservation
/// checks: central differences of the channel-mean luma, edge where the
/// magnitude is at least `threshold`.
pub fn gradient_edge_map(image: &RasterImage, threshold: f64) -> Vec<bool> {
    let w = image.width() as i64;
    let h = image.height() as i64;
    let luma = |x: i64, y: i64| -> f64 {
        let px = image.get(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32);
        (px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0
    };
    let mut map = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let gx = (luma(x + 1, y) - luma(x - 1, y)) / 2.0;
            let gy = (luma(x, y + 1) - luma(x, y - 1)) / 2.0;
            map.push((gx * gx + gy * gy).sqrt() >= threshold);
        }
    }
    map
}
