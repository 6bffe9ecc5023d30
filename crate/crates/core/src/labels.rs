//! Annotation parsing, validation, and serialization.
//!
//! A label file holds one box per non-empty line, five whitespace-separated
//! fields: integer class id, then normalized center x, center y, width, and
//! height. Files pair with images by stem: `images/<stem>.<ext>` goes with
//! `labels/<stem>.txt`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

/// Slack allowed on the unit-square box invariants.
pub const BOX_EDGE_TOL: f64 = 1e-6;

/// Boxes thinner than 2 pixels at 640x640 scale are dropped by [`clip_box`].
pub const MIN_BOX_NORM: f64 = 2.0 / 640.0;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("line {line}: expected 5 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: invalid {field} '{token}'")]
    InvalidToken {
        line: usize,
        field: &'static str,
        token: String,
    },
    #[error("line {line}: {detail}")]
    OutOfRange { line: usize, detail: String },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("unknown modality '{0}' (expected WL, NIR, or SYNTH)")]
    UnknownModality(String),
}

/// Class id plus normalized center/size bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            class_id,
            cx,
            cy,
            w,
            h,
        }
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Checks the unit-square invariants: positive size and every edge within
    /// `[0, 1]` up to [`BOX_EDGE_TOL`].
    pub fn validate(&self) -> Result<(), LabelError> {
        for (name, v) in [
            ("cx", self.cx),
            ("cy", self.cy),
            ("w", self.w),
            ("h", self.h),
        ] {
            if !v.is_finite() {
                return Err(LabelError::InvalidBox(format!("{name} is not finite")));
            }
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(LabelError::InvalidBox(format!(
                "non-positive size {}x{}",
                self.w, self.h
            )));
        }
        for (name, v) in [
            ("left", self.left()),
            ("right", self.right()),
            ("top", self.top()),
            ("bottom", self.bottom()),
        ] {
            if !(-BOX_EDGE_TOL..=1.0 + BOX_EDGE_TOL).contains(&v) {
                return Err(LabelError::InvalidBox(format!(
                    "{name} edge {v} outside the unit square"
                )));
            }
        }
        Ok(())
    }
}

/// Detection output: a box plus its confidence score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: NormBox,
    pub confidence: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<(), LabelError> {
        self.bbox.validate()?;
        if !self.confidence.is_finite() || !(0.0..=1.0).contains(&self.confidence) {
            return Err(LabelError::InvalidBox(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Imaging modality of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Wl,
    Nir,
    Synth,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Wl => "WL",
            Modality::Nir => "NIR",
            Modality::Synth => "SYNTH",
        })
    }
}

impl FromStr for Modality {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "WL" => Ok(Modality::Wl),
            "NIR" => Ok(Modality::Nir),
            "SYNTH" => Ok(Modality::Synth),
            other => Err(LabelError::UnknownModality(other.to_string())),
        }
    }
}

/// The dataset atom: an annotated frame with its patient and modality.
///
/// `source_stem` links a SYNTH frame back to the frame it was generated from.
/// Paths may be empty until the frame is materialized on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub stem: String,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    pub boxes: Vec<NormBox>,
    pub patient_id: String,
    pub modality: Modality,
    pub source_stem: Option<String>,
}

/// Parses a label file: one box per non-empty line.
pub fn parse_label_file(text: &str) -> Result<Vec<NormBox>, LabelError> {
    let mut boxes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(LabelError::FieldCount {
                line,
                found: tokens.len(),
            });
        }
        let class_id = tokens[0]
            .parse::<u32>()
            .map_err(|_| LabelError::InvalidToken {
                line,
                field: "class id",
                token: tokens[0].to_string(),
            })?;
        let mut coords = [0.0f64; 4];
        for (slot, (field, token)) in coords.iter_mut().zip(
            ["center x", "center y", "width", "height"]
                .iter()
                .zip(&tokens[1..]),
        ) {
            let value = token.parse::<f64>().map_err(|_| LabelError::InvalidToken {
                line,
                field,
                token: token.to_string(),
            })?;
            if !value.is_finite() {
                return Err(LabelError::InvalidToken {
                    line,
                    field,
                    token: token.to_string(),
                });
            }
            *slot = value;
        }
        let bbox = NormBox::new(class_id, coords[0], coords[1], coords[2], coords[3]);
        bbox.validate().map_err(|e| LabelError::OutOfRange {
            line,
            detail: e.to_string(),
        })?;
        boxes.push(bbox);
    }
    Ok(boxes)
}

/// Serializes boxes, one line each, coordinates at exactly 6 decimal places.
pub fn serialize_label_file(boxes: &[NormBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            b.class_id, b.cx, b.cy, b.w, b.h
        ));
    }
    out
}

/// Intersects a possibly out-of-range box with the unit square.
///
/// Returns `None` when the clipped width or height falls below
/// [`MIN_BOX_NORM`] (2 pixels at 640x640 scale).
pub fn clip_box(b: &NormBox) -> Option<NormBox> {
    // an axis already inside the unit square is kept verbatim
    let clip_axis = |center: f64, size: f64| {
        let lo = center - size / 2.0;
        let hi = center + size / 2.0;
        if lo >= 0.0 && hi <= 1.0 {
            (center, size)
        } else {
            let lo = lo.max(0.0);
            let hi = hi.min(1.0);
            ((lo + hi) / 2.0, hi - lo)
        }
    };
    let (cx, w) = clip_axis(b.cx, b.w);
    let (cy, h) = clip_axis(b.cy, b.h);
    if w < MIN_BOX_NORM || h < MIN_BOX_NORM {
        return None;
    }
    Some(NormBox::new(b.class_id, cx, cy, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_line() {
        let boxes = parse_label_file("0 0.5 0.5 0.25 0.25").unwrap();
        assert_eq!(boxes, vec![NormBox::new(0, 0.5, 0.5, 0.25, 0.25)]);
    }

    #[test]
    fn empty_text_gives_empty_list() {
        assert!(parse_label_file("").unwrap().is_empty());
        assert!(parse_label_file("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn out_of_range_center_reports_line() {
        let err = parse_label_file("0 1.5 0.5 0.2 0.2").unwrap_err();
        match err {
            LabelError::OutOfRange { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let err = parse_label_file("0 0.5 0.5 0.25 0.25\n1 0.5 0.5").unwrap_err();
        match err {
            LabelError::FieldCount { line, found } => {
                assert_eq!((line, found), (2, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_is_rejected() {
        assert!(matches!(
            parse_label_file("0 abc 0.5 0.2 0.2"),
            Err(LabelError::InvalidToken { field: "center x", .. })
        ));
        assert!(matches!(
            parse_label_file("x 0.5 0.5 0.2 0.2"),
            Err(LabelError::InvalidToken { field: "class id", .. })
        ));
        assert!(matches!(
            parse_label_file("0 inf 0.5 0.2 0.2"),
            Err(LabelError::InvalidToken { .. })
        ));
    }

    #[test]
    fn decimal_comma_is_not_a_number() {
        assert!(matches!(
            parse_label_file("0 0,5 0.5 0.2 0.2"),
            Err(LabelError::InvalidToken { .. })
        ));
    }

    #[test]
    fn serializes_fixed_precision() {
        let text = serialize_label_file(&[NormBox::new(0, 0.5, 0.5, 0.25, 0.25)]);
        assert_eq!(text, "0 0.500000 0.500000 0.250000 0.250000\n");
        assert_eq!(serialize_label_file(&[]), "");
    }

    #[test]
    fn clip_recovers_half_offscreen_box() {
        let clipped = clip_box(&NormBox::new(0, 0.0, 0.5, 0.2, 0.4)).unwrap();
        assert!((clipped.cx - 0.05).abs() < 1e-12);
        assert!((clipped.w - 0.1).abs() < 1e-12);
        assert_eq!((clipped.cy, clipped.h), (0.5, 0.4));
    }

    #[test]
    fn clip_keeps_interior_box_unchanged() {
        let b = NormBox::new(1, 0.4, 0.6, 0.2, 0.2);
        assert_eq!(clip_box(&b), Some(b));
    }

    #[test]
    fn clip_drops_outside_and_sliver_boxes() {
        assert_eq!(clip_box(&NormBox::new(0, 1.6, 0.5, 0.2, 0.2)), None);
        // clipped width 1/640 is below the 2/640 floor
        assert_eq!(clip_box(&NormBox::new(0, 0.0, 0.5, 2.0 / 640.0, 0.2)), None);
    }

    fn arb_box() -> impl Strategy<Value = NormBox> {
        // sizes and centers quantized to 6 decimals so serialization is exact
        (0u32..3, 1u32..=500_000, 1u32..=500_000).prop_flat_map(|(class, wq, hq)| {
            let w = wq as f64 / 1_000_000.0;
            let h = hq as f64 / 1_000_000.0;
            let cx_lo = (w / 2.0 * 1_000_000.0).ceil() as u32;
            let cx_hi = 1_000_000 - cx_lo;
            let cy_lo = (h / 2.0 * 1_000_000.0).ceil() as u32;
            let cy_hi = 1_000_000 - cy_lo;
            (cx_lo..=cx_hi, cy_lo..=cy_hi).prop_map(move |(cxq, cyq)| {
                NormBox::new(
                    class,
                    cxq as f64 / 1_000_000.0,
                    cyq as f64 / 1_000_000.0,
                    w,
                    h,
                )
            })
        })
    }

    proptest! {
        #[test]
        fn parse_serialize_roundtrip(boxes in proptest::collection::vec(arb_box(), 0..12)) {
            let text = serialize_label_file(&boxes);
            let parsed = parse_label_file(&text).unwrap();
            // identity at 6-decimal precision: re-serialization is a fixpoint
            prop_assert_eq!(serialize_label_file(&parsed), text);
        }

        #[test]
        fn clip_output_is_always_valid(
            cx in -0.5f64..1.5,
            cy in -0.5f64..1.5,
            w in 0.001f64..1.2,
            h in 0.001f64..1.2,
        ) {
            if let Some(clipped) = clip_box(&NormBox::new(0, cx, cy, w, h)) {
                prop_assert!(clipped.validate().is_ok());
            }
        }
    }
}
