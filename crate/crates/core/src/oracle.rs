//! Naive reference implementations for the test suites (feature `oracle`).
//!
//! Everything here recomputes its result by direct enumeration with its own
//! arithmetic, sharing only the public data types with the main paths it
//! checks. Keep it slow and obvious; never call into the modules under test.
#![allow(clippy::needless_range_loop)]

use crate::labels::NormBox;
use crate::metrics::ImageEval;

/// Report computed by brute force: precision, recall, mAP50, mAP50-95, mean
/// matched IoU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveReport {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub mean_iou: f64,
}

fn naive_iou(a: &NormBox, b: &NormBox) -> f64 {
    let ax0 = a.cx - a.w / 2.0;
    let ax1 = a.cx + a.w / 2.0;
    let ay0 = a.cy - a.h / 2.0;
    let ay1 = a.cy + a.h / 2.0;
    let bx0 = b.cx - b.w / 2.0;
    let bx1 = b.cx + b.w / 2.0;
    let by0 = b.cy - b.h / 2.0;
    let by1 = b.cy + b.h / 2.0;

    let ix0 = if ax0 > bx0 { ax0 } else { bx0 };
    let ix1 = if ax1 < bx1 { ax1 } else { bx1 };
    let iy0 = if ay0 > by0 { ay0 } else { by0 };
    let iy1 = if ay1 < by1 { ay1 } else { by1 };
    if ix1 <= ix0 || iy1 <= iy0 {
        return 0.0;
    }
    let inter = (ix1 - ix0) * (iy1 - iy0);
    let area_a = (ax1 - ax0) * (ay1 - ay0);
    let area_b = (bx1 - bx0) * (by1 - by0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Per-image matching written longhand: walk detections in descending
/// confidence (input order on ties), give each the best free same-class
/// ground truth at or above the threshold.
/// Returns (tp_flag, matched_iou) per detection in ranked order, plus the
/// false negative count.
fn naive_match(image: &ImageEval, thr: f64) -> (Vec<(f64, bool, f64)>, usize) {
    let n = image.detections.len();
    let mut ranked: Vec<usize> = Vec::new();
    let mut used = vec![false; n];
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if used[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(j) => {
                    if image.detections[i].confidence > image.detections[j].confidence {
                        best = Some(i);
                    }
                }
            }
        }
        let pick = best.expect("one detection remains");
        used[pick] = true;
        ranked.push(pick);
    }

    let mut taken = vec![false; image.ground_truth.len()];
    let mut rows = Vec::new();
    for &di in &ranked {
        let det = &image.detections[di];
        let mut best_gt: Option<usize> = None;
        let mut best_iou = 0.0;
        for (gi, gt) in image.ground_truth.iter().enumerate() {
            if taken[gi] || gt.class_id != det.bbox.class_id {
                continue;
            }
            let overlap = naive_iou(&det.bbox, gt);
            if overlap >= thr && overlap > best_iou {
                best_iou = overlap;
                best_gt = Some(gi);
            }
        }
        match best_gt {
            Some(gi) => {
                taken[gi] = true;
                rows.push((det.confidence, true, best_iou));
            }
            None => rows.push((det.confidence, false, 0.0)),
        }
    }
    let fn_count = taken.iter().filter(|t| !**t).count();
    (rows, fn_count)
}

/// AP at one threshold by direct grid enumeration: pool every detection,
/// rank by confidence, and for each of the 101 recall levels take the best
/// precision among cut points whose recall reaches the level.
fn naive_ap(images: &[ImageEval], thr: f64) -> f64 {
    let mut total_gt = 0usize;
    for image in images {
        total_gt += image.ground_truth.len();
    }
    if total_gt == 0 {
        return 0.0;
    }

    let mut pooled: Vec<(f64, bool)> = Vec::new();
    for image in images {
        let (rows, _) = naive_match(image, thr);
        for (conf, tp, _) in rows {
            pooled.push((conf, tp));
        }
    }
    // selection sort by confidence, stable in pooled order
    let mut sorted: Vec<(f64, bool)> = Vec::new();
    let mut used = vec![false; pooled.len()];
    for _ in 0..pooled.len() {
        let mut best: Option<usize> = None;
        for i in 0..pooled.len() {
            if used[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(j) => {
                    if pooled[i].0 > pooled[j].0 {
                        best = Some(i);
                    }
                }
            }
        }
        let pick = best.unwrap();
        used[pick] = true;
        sorted.push(pooled[pick]);
    }

    let mut cut_recall = Vec::new();
    let mut cut_precision = Vec::new();
    let mut tp = 0usize;
    for (k, (_, is_tp)) in sorted.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        cut_recall.push(tp as f64 / total_gt as f64);
        cut_precision.push(tp as f64 / (k + 1) as f64);
    }

    let mut sum = 0.0;
    for i in 0..101usize {
        let level = i as f64 / 100.0;
        let mut best = 0.0f64;
        for k in 0..cut_recall.len() {
            if cut_recall[k] >= level && cut_precision[k] > best {
                best = cut_precision[k];
            }
        }
        sum += best;
    }
    sum / 101.0
}

/// Brute-force counterpart of the full evaluation report.
pub fn evaluate_naive(images: &[ImageEval]) -> NaiveReport {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut iou_sum = 0.0;
    let mut iou_n = 0usize;
    for image in images {
        let (rows, misses) = naive_match(image, 0.5);
        fn_ += misses;
        for (_, is_tp, overlap) in rows {
            if is_tp {
                tp += 1;
                iou_sum += overlap;
                iou_n += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let mean_iou = if iou_n == 0 { 0.0 } else { iou_sum / iou_n as f64 };

    let map50 = naive_ap(images, 0.5);
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut t = 0.50;
    while t < 0.951 {
        sum += naive_ap(images, t);
        count += 1;
        t += 0.05;
    }
    NaiveReport {
        precision,
        recall,
        map50,
        map50_95: sum / count as f64,
        mean_iou,
    }
}

/// Bounding rectangle of a warped box mask, in normalized units.
///
/// The box is rasterized onto a `w` x `h` grid (a pixel is inside when the
/// box covers its center) and warped by nearest-neighbor lookup through
/// `coeffs` (an output-to-source 2x3 map, same layout as `AffineMap`). The
/// warped mask is a piecewise-constant region over continuous output
/// coordinates; its bounding rectangle is measured by probing
/// `probes_per_pixel` sample points per output pixel per axis, so the
/// rectangle is accurate to `1 / probes_per_pixel` pixels while the mask
/// itself stays at `w` x `h`. Returns `(left, top, right, bottom)` or
/// `None` when nothing survives.
pub fn warped_box_bounds(
    bbox: &NormBox,
    coeffs: [f64; 6],
    w: u32,
    h: u32,
    probes_per_pixel: u32,
) -> Option<(f64, f64, f64, f64)> {
    let inside = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            return false;
        }
        // pixel center in normalized units
        let nx = (x as f64 + 0.5) / w as f64;
        let ny = (y as f64 + 0.5) / h as f64;
        nx >= bbox.cx - bbox.w / 2.0
            && nx <= bbox.cx + bbox.w / 2.0
            && ny >= bbox.cy - bbox.h / 2.0
            && ny <= bbox.cy + bbox.h / 2.0
    };
    let step = 1.0 / probes_per_pixel as f64;
    let probes_x = w * probes_per_pixel;
    let probes_y = h * probes_per_pixel;
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    let mut any = false;
    for py in 0..probes_y {
        // probe coordinate in continuous pixel units (pixel i spans
        // [i - 0.5, i + 0.5])
        let oy = py as f64 * step - 0.5 + step / 2.0;
        for px in 0..probes_x {
            let ox = px as f64 * step - 0.5 + step / 2.0;
            let sx = coeffs[0] * ox + coeffs[1] * oy + coeffs[2];
            let sy = coeffs[3] * ox + coeffs[4] * oy + coeffs[5];
            if inside(sx.round() as i64, sy.round() as i64) {
                any = true;
                min_x = min_x.min(ox - step / 2.0);
                min_y = min_y.min(oy - step / 2.0);
                max_x = max_x.max(ox + step / 2.0);
                max_y = max_y.max(oy + step / 2.0);
            }
        }
    }
    if !any {
        return None;
    }
    Some((
        (min_x + 0.5) / w as f64,
        (min_y + 0.5) / h as f64,
        (max_x + 0.5) / w as f64,
        (max_y + 0.5) / h as f64,
    ))
}

/// Per-pixel color transfer written longhand from the basis vectors
/// `(1,1,1)/sqrt(3)`, `(1,1,-2)/sqrt(6)`, `(1,-1,0)/sqrt(2)` over
/// `ln(channel + 1)`, with population statistics.
pub fn color_transfer_naive(
    pixels: &[u8],
    target_mean: [f64; 3],
    target_std: [f64; 3],
) -> Vec<u8> {
    let n = pixels.len() / 3;
    let basis = [
        [
            1.0 / 3.0f64.sqrt(),
            1.0 / 3.0f64.sqrt(),
            1.0 / 3.0f64.sqrt(),
        ],
        [
            1.0 / 6.0f64.sqrt(),
            1.0 / 6.0f64.sqrt(),
            -2.0 / 6.0f64.sqrt(),
        ],
        [1.0 / 2.0f64.sqrt(), -1.0 / 2.0f64.sqrt(), 0.0],
    ];
    let project = |px: &[u8]| -> [f64; 3] {
        let logs = [
            (px[0] as f64 + 1.0).ln(),
            (px[1] as f64 + 1.0).ln(),
            (px[2] as f64 + 1.0).ln(),
        ];
        let mut v = [0.0f64; 3];
        for (c, row) in basis.iter().enumerate() {
            for k in 0..3 {
                v[c] += row[k] * logs[k];
            }
        }
        v
    };

    let mut mean = [0.0f64; 3];
    for px in pixels.chunks_exact(3) {
        let v = project(px);
        for c in 0..3 {
            mean[c] += v[c] / n as f64;
        }
    }
    let mut var = [0.0f64; 3];
    for px in pixels.chunks_exact(3) {
        let v = project(px);
        for c in 0..3 {
            var[c] += (v[c] - mean[c]) * (v[c] - mean[c]) / n as f64;
        }
    }
    let std = [var[0].sqrt(), var[1].sqrt(), var[2].sqrt()];

    let mut out = Vec::with_capacity(pixels.len());
    for px in pixels.chunks_exact(3) {
        let v = project(px);
        let mut moved = [0.0f64; 3];
        for c in 0..3 {
            moved[c] = if std[c] <= 1e-12 {
                v[c] + target_mean[c] - mean[c]
            } else {
                (v[c] - mean[c]) * target_std[c] / std[c] + target_mean[c]
            };
        }
        // transpose of the basis takes the opponent values back to log-RGB
        let mut logs = [0.0f64; 3];
        for k in 0..3 {
            for (c, row) in basis.iter().enumerate() {
                logs[k] += row[k] * moved[c];
            }
        }
        for l in logs {
            let byte = (l.exp() - 1.0).round();
            out.push(byte.clamp(0.0, 255.0) as u8);
        }
    }
    out
}
