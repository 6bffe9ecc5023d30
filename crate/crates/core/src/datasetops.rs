//! Dataset manifest, frame subsampling, variant construction, and
//! patient-aware splitting with a fully held-out patient.
//!
//! The manifest file is line-oriented text, one frame per line with five
//! tab-separated fields:
//!
//! ```text
//! stem<TAB>patient_id<TAB>modality<TAB>image_path<TAB>label_path
//! ```
//!
//! Relative paths are resolved against the manifest file's directory at load
//! time. Labels are read and validated eagerly, so a loaded manifest always
//! carries its boxes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::labels::{parse_label_file, LabelError, LabeledFrame, Modality};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate frame stem '{0}'")]
    DuplicateStem(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("{path}: {source}")]
    Labels {
        path: PathBuf,
        #[source]
        source: LabelError,
    },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("holdout patient '{0}' is not in the manifest")]
    HoldoutMissing(String),
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("variant '{0}' selected no frames")]
    EmptyVariant(String),
}

/// Ordered collection of labeled frames with unique stems.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    frames: Vec<LabeledFrame>,
}

impl DatasetManifest {
    pub fn new(frames: Vec<LabeledFrame>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for frame in &frames {
            if !seen.insert(frame.stem.clone()) {
                return Err(DatasetError::DuplicateStem(frame.stem.clone()));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[LabeledFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, stem: &str) -> Option<&LabeledFrame> {
        self.frames.iter().find(|f| f.stem == stem)
    }

    /// Patients present, sorted.
    pub fn patients(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.frames.iter().map(|f| f.patient_id.clone()).collect();
        set.into_iter().collect()
    }

    /// Loads a manifest, resolving relative paths against the manifest's
    /// directory. Every referenced image must exist and every label file
    /// must parse. Stored paths are absolute, so manifests derived from
    /// this one stay valid wherever they are written.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = std::path::absolute(path.parent().unwrap_or_else(|| Path::new(".")))
            .map_err(|source| DatasetError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let mut frames = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 5 {
                return Err(DatasetError::ManifestParse {
                    path: path.to_path_buf(),
                    line,
                    detail: format!("expected 5 tab-separated fields, found {}", fields.len()),
                });
            }
            let stem = fields[0].trim().to_string();
            if stem.is_empty() {
                return Err(DatasetError::ManifestParse {
                    path: path.to_path_buf(),
                    line,
                    detail: "empty stem".into(),
                });
            }
            let modality: Modality =
                fields[2]
                    .trim()
                    .parse()
                    .map_err(|e: LabelError| DatasetError::ManifestParse {
                        path: path.to_path_buf(),
                        line,
                        detail: e.to_string(),
                    })?;
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let image_path = resolve(fields[3].trim());
            let label_path = resolve(fields[4].trim());
            if !image_path.is_file() {
                return Err(DatasetError::MissingFile(image_path));
            }
            let label_text =
                std::fs::read_to_string(&label_path).map_err(|source| DatasetError::Io {
                    path: label_path.clone(),
                    source,
                })?;
            let boxes = parse_label_file(&label_text).map_err(|source| DatasetError::Labels {
                path: label_path.clone(),
                source,
            })?;
            let source_stem = (modality == Modality::Synth)
                .then(|| synth_source_stem(&stem))
                .flatten();
            frames.push(LabeledFrame {
                stem,
                image_path,
                label_path,
                boxes,
                patient_id: fields[1].trim().to_string(),
                modality,
                source_stem,
            });
        }
        Self::new(frames)
    }

    /// Writes the five-column manifest. `base` paths are written as stored.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut out = String::new();
        for f in &self.frames {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                f.stem,
                f.patient_id,
                f.modality,
                f.image_path.display(),
                f.label_path.display()
            ));
        }
        std::fs::write(path, out).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Source stem implied by the `<stem>_gan[N]` naming convention.
pub fn synth_source_stem(stem: &str) -> Option<String> {
    let pos = stem.rfind("_gan")?;
    let suffix = &stem[pos + 4..];
    if suffix.chars().all(|c| c.is_ascii_digit()) {
        Some(stem[..pos].to_string())
    } else {
        None
    }
}

/// Keeps every `stride`-th element starting at index 0.
pub fn subsample<T: Clone>(frames: &[T], stride: usize) -> Vec<T> {
    assert!(stride >= 1, "stride must be >= 1");
    frames.iter().step_by(stride).cloned().collect()
}

/// A named recipe for selecting frames from the full manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub name: String,
    /// Fraction of WL frames kept, stratified by patient.
    pub wl_fraction: f64,
    pub include_synth: bool,
}

impl VariantSpec {
    pub fn wl() -> Self {
        Self {
            name: "WL".into(),
            wl_fraction: 1.0,
            include_synth: false,
        }
    }

    pub fn wl_gan() -> Self {
        Self {
            name: "WL+GAN".into(),
            wl_fraction: 1.0,
            include_synth: true,
        }
    }

    pub fn wl50_gan() -> Self {
        Self {
            name: "WL50+GAN".into(),
            wl_fraction: 0.5,
            include_synth: true,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "WL" => Some(Self::wl()),
            "WL+GAN" => Some(Self::wl_gan()),
            "WL50+GAN" => Some(Self::wl50_gan()),
            _ => None,
        }
    }
}

/// Builds a dataset variant. WL frames are kept (optionally downsampled to
/// `wl_fraction`, stratified by patient with a seeded draw), SYNTH frames are
/// appended when the variant asks for them, and NIR frames are always
/// excluded.
pub fn build_variant(
    manifest: &DatasetManifest,
    spec: &VariantSpec,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    if !(spec.wl_fraction > 0.0 && spec.wl_fraction <= 1.0) {
        return Err(DatasetError::InvalidSpec(format!(
            "wl_fraction {} outside (0, 1]",
            spec.wl_fraction
        )));
    }
    let wl: Vec<&LabeledFrame> = manifest
        .frames()
        .iter()
        .filter(|f| f.modality == Modality::Wl)
        .collect();

    let kept_wl: BTreeSet<String> = if spec.wl_fraction < 1.0 {
        stratified_select(&wl, spec.wl_fraction, seed)
    } else {
        wl.iter().map(|f| f.stem.clone()).collect()
    };

    let frames: Vec<LabeledFrame> = manifest
        .frames()
        .iter()
        .filter(|f| match f.modality {
            Modality::Wl => kept_wl.contains(&f.stem),
            Modality::Synth => spec.include_synth,
            Modality::Nir => false,
        })
        .cloned()
        .collect();
    if frames.is_empty() {
        return Err(DatasetError::EmptyVariant(spec.name.clone()));
    }
    DatasetManifest::new(frames)
}

/// Largest-remainder apportionment of `round(fraction * total)` across
/// patients, then a seeded draw within each patient.
fn stratified_select(wl: &[&LabeledFrame], fraction: f64, seed: u64) -> BTreeSet<String> {
    let mut by_patient: BTreeMap<String, Vec<&LabeledFrame>> = BTreeMap::new();
    for f in wl {
        by_patient.entry(f.patient_id.clone()).or_default().push(f);
    }
    let total = wl.len() as f64;
    let target = (fraction * total).round() as usize;

    let mut quotas: Vec<(String, usize, f64)> = by_patient
        .iter()
        .map(|(patient, frames)| {
            let exact = fraction * frames.len() as f64;
            (patient.clone(), exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|(_, base, _)| base).sum();
    // hand out the leftover seats by descending remainder, patient id on ties
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&i, &j| {
        quotas[j].2.partial_cmp(&quotas[i].2).unwrap().then_with(|| quotas[i].0.cmp(&quotas[j].0))
    });
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        quotas[i].1 += 1;
    }

    let mut kept = BTreeSet::new();
    for (patient, quota, _) in &quotas {
        let mut stems: Vec<String> = by_patient[patient].iter().map(|f| f.stem.clone()).collect();
        stems.sort();
        let mut rng =
            ChaCha8Rng::seed_from_u64(crate::augment::derive_seed(seed, "variant", patient, 0));
        stems.shuffle(&mut rng);
        kept.extend(stems.into_iter().take((*quota).min(by_patient[patient].len())));
    }
    kept
}

/// Split parameters: a fully held-out patient plus a seeded frame-wise draw
/// from the other patients up to the target fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub holdout_patient: String,
    pub test_fraction: f64,
    pub seed: u64,
    pub test_modality: Modality,
    /// When set, non-holdout test frames are added whole patients at a time
    /// so no patient spans both sets.
    pub strict_patient: bool,
}

impl SplitSpec {
    pub fn new(holdout_patient: impl Into<String>, test_fraction: f64, seed: u64) -> Self {
        Self {
            holdout_patient: holdout_patient.into(),
            test_fraction,
            seed,
            test_modality: Modality::Wl,
            strict_patient: false,
        }
    }
}

/// Per-patient frame counts of a finished split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatientCounts {
    pub train_val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SplitSummary {
    /// `round(test_fraction * total)`.
    pub target_test: usize,
    pub per_patient: BTreeMap<String, PatientCounts>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train_val: DatasetManifest,
    pub test: DatasetManifest,
    pub summary: SplitSummary,
}

/// Splits a variant into train+val and test sets.
///
/// The test set holds every eligible frame of the holdout patient plus a
/// seeded draw of non-holdout frames of the test modality until it reaches
/// `round(test_fraction * total)`. Holdout-patient frames of other
/// modalities are excluded from both sets, so nothing derived from the
/// holdout patient can reach training.
pub fn split(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<SplitOutcome, DatasetError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(DatasetError::InvalidSpec(format!(
            "test_fraction {} outside (0, 1)",
            spec.test_fraction
        )));
    }
    if spec.test_modality == Modality::Synth {
        return Err(DatasetError::InvalidSpec(
            "test modality SYNTH is not allowed: synthetic frames never enter a test set".into(),
        ));
    }
    if !manifest
        .frames()
        .iter()
        .any(|f| f.patient_id == spec.holdout_patient)
    {
        return Err(DatasetError::HoldoutMissing(spec.holdout_patient.clone()));
    }

    let mut warnings = Vec::new();
    let target = (spec.test_fraction * manifest.len() as f64).round() as usize;

    let eligible = |f: &LabeledFrame| f.modality == spec.test_modality;
    let mut test_stems: BTreeSet<String> = manifest
        .frames()
        .iter()
        .filter(|f| f.patient_id == spec.holdout_patient && eligible(f))
        .map(|f| f.stem.clone())
        .collect();
    let excluded: BTreeSet<String> = manifest
        .frames()
        .iter()
        .filter(|f| f.patient_id == spec.holdout_patient && !eligible(f))
        .map(|f| f.stem.clone())
        .collect();
    if !excluded.is_empty() {
        warnings.push(format!(
            "{} holdout-patient frame(s) of other modalities excluded from both sets",
            excluded.len()
        ));
    }

    if test_stems.len() >= target {
        if test_stems.len() > target {
            warnings.push(format!(
                "holdout patient alone ({} frames) exceeds the target test size {target}",
                test_stems.len()
            ));
        }
    } else {
        let mut pool: Vec<&LabeledFrame> = manifest
            .frames()
            .iter()
            .filter(|f| f.patient_id != spec.holdout_patient && eligible(f))
            .collect();
        pool.sort_by(|a, b| a.stem.cmp(&b.stem));
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        if spec.strict_patient {
            let mut patients: Vec<String> = pool
                .iter()
                .map(|f| f.patient_id.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            patients.shuffle(&mut rng);
            for patient in patients {
                if test_stems.len() >= target {
                    break;
                }
                test_stems.extend(
                    pool.iter()
                        .filter(|f| f.patient_id == patient)
                        .map(|f| f.stem.clone()),
                );
            }
            if test_stems.len() > target {
                warnings.push(format!(
                    "strict patient mode overshot the target test size: {} > {target}",
                    test_stems.len()
                ));
            }
        } else {
            pool.shuffle(&mut rng);
            let need = target - test_stems.len();
            test_stems.extend(pool.iter().take(need).map(|f| f.stem.clone()));
        }
    }

    let mut train_val = Vec::new();
    let mut test = Vec::new();
    let mut per_patient: BTreeMap<String, PatientCounts> = BTreeMap::new();
    for frame in manifest.frames() {
        let entry = per_patient.entry(frame.patient_id.clone()).or_default();
        if test_stems.contains(&frame.stem) {
            entry.test += 1;
            test.push(frame.clone());
        } else if !excluded.contains(&frame.stem) {
            entry.train_val += 1;
            train_val.push(frame.clone());
        }
    }

    Ok(SplitOutcome {
        train_val: DatasetManifest::new(train_val)?,
        test: DatasetManifest::new(test)?,
        summary: SplitSummary {
            target_test: target,
            per_patient,
            warnings,
        },
    })
}
