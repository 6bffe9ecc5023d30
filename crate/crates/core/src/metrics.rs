//! Detection evaluation: IoU, confidence-greedy matching, precision/recall,
//! average precision over the 101-point interpolated curve, mAP50, mAP50-95,
//! and mean matched IoU.
//!
//! Conventions, fixed once so every report is comparable:
//!
//! * a detection matches at IoU >= threshold (inclusive);
//! * precision and recall are 1.0 when their denominators are zero;
//! * AP is the mean of the monotone precision envelope sampled at the 101
//!   recall levels 0.00, 0.01, ..., 1.00, and 0 when there is no ground
//!   truth;
//! * the per-report "IoU" figure is the mean IoU over matched true-positive
//!   pairs at threshold 0.50.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::labels::{Detection, LabelError, NormBox};

/// Thresholds averaged by mAP50-95: 0.50 to 0.95 in steps of 0.05.
pub const MAP_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

const RECALL_GRID: usize = 101;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("detections reference unknown image id '{0}'")]
    UnknownImage(String),
    #[error("duplicate image id '{0}'")]
    DuplicateImage(String),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("line {line}: expected 6 fields, found {found}")]
    PredictionFieldCount { line: usize, found: usize },
    #[error("line {line}: invalid confidence '{token}'")]
    InvalidConfidence { line: usize, token: String },
}

/// Ground truth and detections for one image.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub id: String,
    pub ground_truth: Vec<NormBox>,
    pub detections: Vec<Detection>,
}

/// Intersection area over union area of two boxes; 0 when disjoint.
pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    // areas come from the same corner values as the intersection, so
    // identical boxes score exactly 1 and the ratio never exceeds 1
    let (al, ar, at, ab) = (a.left(), a.right(), a.top(), a.bottom());
    let (bl, br, bt, bb) = (b.left(), b.right(), b.top(), b.bottom());
    let ix = (ar.min(br) - al.max(bl)).max(0.0);
    let iy = (ab.min(bb) - at.max(bt)).max(0.0);
    let inter = ix * iy;
    let union = (ar - al) * (ab - at) + (br - bl) * (bb - bt) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One detection's fate under [`greedy_match`], in descending-confidence
/// processing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetMatch {
    /// Index into the input detection list.
    pub det_index: usize,
    pub confidence: f64,
    pub tp: bool,
    /// Claimed ground-truth index for true positives.
    pub gt_index: Option<usize>,
    /// IoU with the claimed ground truth (0 for false positives).
    pub iou: f64,
}

/// Matching result for one image.
#[derive(Debug, Clone, Default)]
pub struct MatchOutcome {
    /// Per-detection outcomes, descending confidence (input order on ties).
    pub matches: Vec<DetMatch>,
    /// Unclaimed ground truths.
    pub false_negatives: usize,
}

/// Aggregated true/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchOutcome {
    pub fn counts(&self) -> MatchCounts {
        let tp = self.matches.iter().filter(|m| m.tp).count();
        MatchCounts {
            tp,
            fp: self.matches.len() - tp,
            fn_: self.false_negatives,
        }
    }

    pub fn accumulate(outcomes: &[MatchOutcome]) -> MatchCounts {
        outcomes.iter().fold(MatchCounts::default(), |acc, o| {
            let c = o.counts();
            MatchCounts {
                tp: acc.tp + c.tp,
                fp: acc.fp + c.fp,
                fn_: acc.fn_ + c.fn_,
            }
        })
    }
}

/// Matches detections to ground truths of the same class at `thr`.
///
/// Detections are processed in descending confidence (ties keep input
/// order); each claims the still-unclaimed ground truth of its class with
/// the highest IoU at or above the threshold (lowest index on IoU ties).
pub fn greedy_match(dets: &[Detection], gts: &[NormBox], thr: f64) -> MatchOutcome {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        dets[j]
            .confidence
            .partial_cmp(&dets[i].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut claimed = vec![false; gts.len()];
    let mut matches = Vec::with_capacity(dets.len());
    for det_index in order {
        let det = &dets[det_index];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if claimed[gi] || gt.class_id != det.bbox.class_id {
                continue;
            }
            let overlap = iou(&det.bbox, gt);
            if overlap >= thr && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, overlap)) => {
                claimed[gi] = true;
                matches.push(DetMatch {
                    det_index,
                    confidence: det.confidence,
                    tp: true,
                    gt_index: Some(gi),
                    iou: overlap,
                });
            }
            None => matches.push(DetMatch {
                det_index,
                confidence: det.confidence,
                tp: false,
                gt_index: None,
                iou: 0.0,
            }),
        }
    }
    MatchOutcome {
        matches,
        false_negatives: claimed.iter().filter(|c| !*c).count(),
    }
}

/// Precision and recall from aggregated counts, 1.0 on empty denominators.
pub fn precision_recall(counts: MatchCounts) -> (f64, f64) {
    let precision = if counts.tp + counts.fp == 0 {
        1.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    };
    let recall = if counts.tp + counts.fn_ == 0 {
        1.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fn_) as f64
    };
    (precision, recall)
}

/// A point of the confidence-ranked precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall curve with non-decreasing recall.
#[derive(Debug, Clone, Default)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Builds the pooled curve at `thr`: detections from every image are
    /// matched per image, pooled, ranked by descending confidence, and
    /// accumulated.
    pub fn from_images(images: &[ImageEval], thr: f64) -> PrCurve {
        let total_gt: usize = images.iter().map(|im| im.ground_truth.len()).sum();
        let mut pooled: Vec<(f64, bool)> = Vec::new();
        for image in images {
            let outcome = greedy_match(&image.detections, &image.ground_truth, thr);
            pooled.extend(outcome.matches.iter().map(|m| (m.confidence, m.tp)));
        }
        pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

        let mut points = Vec::with_capacity(pooled.len());
        let mut tp_cum = 0usize;
        for (rank, (_, tp)) in pooled.iter().enumerate() {
            if *tp {
                tp_cum += 1;
            }
            points.push(PrPoint {
                recall: if total_gt == 0 {
                    0.0
                } else {
                    tp_cum as f64 / total_gt as f64
                },
                precision: tp_cum as f64 / (rank + 1) as f64,
            });
        }
        PrCurve { points }
    }
}

/// Average precision at `thr`: the monotone precision envelope of the pooled
/// curve, sampled at 101 evenly spaced recall levels. 0 when there is no
/// ground truth.
pub fn average_precision(images: &[ImageEval], thr: f64) -> f64 {
    let total_gt: usize = images.iter().map(|im| im.ground_truth.len()).sum();
    if total_gt == 0 {
        return 0.0;
    }
    let curve = PrCurve::from_images(images, thr);
    ap_from_curve(&curve)
}

/// The 101-point interpolation itself, shared by [`average_precision`] and
/// property tests that drive it with synthetic curves.
pub fn ap_from_curve(curve: &PrCurve) -> f64 {
    let n = curve.points.len();
    // running max from the right: envelope[k] = max precision at rank >= k
    let mut envelope = vec![0.0f64; n];
    let mut running = 0.0f64;
    for k in (0..n).rev() {
        running = running.max(curve.points[k].precision);
        envelope[k] = running;
    }
    let mut sum = 0.0;
    let mut k = 0usize;
    for i in 0..RECALL_GRID {
        let level = i as f64 / (RECALL_GRID - 1) as f64;
        while k < n && curve.points[k].recall < level {
            k += 1;
        }
        if k < n {
            sum += envelope[k];
        }
    }
    sum / RECALL_GRID as f64
}

/// Full evaluation report; mirrors the row shape of the result tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub mean_iou: f64,
}

/// Evaluates detections against ground truth over a set of images.
///
/// Precision, recall, and mean matched IoU use greedy matching at 0.50 with
/// all detections; mAP50 is AP at 0.50 and mAP50-95 averages AP over
/// [`MAP_THRESHOLDS`].
pub fn evaluate(images: &[ImageEval]) -> EvalReport {
    let outcomes: Vec<MatchOutcome> = images
        .iter()
        .map(|im| greedy_match(&im.detections, &im.ground_truth, 0.5))
        .collect();
    let counts = MatchOutcome::accumulate(&outcomes);
    let mut iou_sum = 0.0;
    let mut iou_n = 0usize;
    for m in outcomes.iter().flat_map(|o| &o.matches).filter(|m| m.tp) {
        iou_sum += m.iou;
        iou_n += 1;
    }
    let (precision, recall) = precision_recall(counts);
    let mean_iou = if iou_n == 0 { 0.0 } else { iou_sum / iou_n as f64 };

    let map50 = average_precision(images, 0.5);
    let map50_95 = MAP_THRESHOLDS
        .iter()
        .map(|&t| average_precision(images, t))
        .sum::<f64>()
        / MAP_THRESHOLDS.len() as f64;

    EvalReport {
        precision,
        recall,
        map50,
        map50_95,
        mean_iou,
    }
}

/// Pairs per-image ground truth with per-image detections.
///
/// Every detection id must name a ground-truth image; ground-truth images
/// without detections evaluate against an empty list.
pub fn join_detections(
    ground_truth: Vec<(String, Vec<NormBox>)>,
    detections: Vec<(String, Vec<Detection>)>,
) -> Result<Vec<ImageEval>, MetricsError> {
    let mut ids = BTreeSet::new();
    for (id, _) in &ground_truth {
        if !ids.insert(id.clone()) {
            return Err(MetricsError::DuplicateImage(id.clone()));
        }
    }
    let mut by_id: std::collections::BTreeMap<String, Vec<Detection>> =
        std::collections::BTreeMap::new();
    for (id, dets) in detections {
        if !ids.contains(&id) {
            return Err(MetricsError::UnknownImage(id));
        }
        by_id.entry(id).or_default().extend(dets);
    }
    Ok(ground_truth
        .into_iter()
        .map(|(id, gts)| {
            let dets = by_id.remove(&id).unwrap_or_default();
            ImageEval {
                id,
                ground_truth: gts,
                detections: dets,
            }
        })
        .collect())
}

/// Parses a prediction file: label grammar with one appended confidence.
pub fn parse_prediction_file(text: &str) -> Result<Vec<Detection>, MetricsError> {
    let mut dets = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 6 {
            return Err(MetricsError::PredictionFieldCount {
                line,
                found: tokens.len(),
            });
        }
        let boxes = crate::labels::parse_label_file(&tokens[..5].join(" "))
            .map_err(|e| relabel_line(e, line))?;
        let confidence = tokens[5]
            .parse::<f64>()
            .map_err(|_| MetricsError::InvalidConfidence {
                line,
                token: tokens[5].to_string(),
            })?;
        let det = Detection {
            bbox: boxes[0],
            confidence,
        };
        // the box part already parsed clean, so a failure here is the score
        det.validate().map_err(|_| MetricsError::InvalidConfidence {
            line,
            token: tokens[5].to_string(),
        })?;
        dets.push(det);
    }
    Ok(dets)
}

fn relabel_line(err: LabelError, line: usize) -> MetricsError {
    // the per-line sub-parse always reports line 1; restore the real line
    let err = match err {
        LabelError::FieldCount { found, .. } => LabelError::FieldCount { line, found },
        LabelError::InvalidToken { field, token, .. } => LabelError::InvalidToken {
            line,
            field,
            token,
        },
        LabelError::OutOfRange { detail, .. } => LabelError::OutOfRange { line, detail },
        other => other,
    };
    MetricsError::Label(err)
}
