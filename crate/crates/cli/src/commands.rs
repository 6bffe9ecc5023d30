//! The five pipeline commands: augment, synth, split, eval, export-trainer.
//!
//! Frame-level work runs on a scoped worker pool; each task derives its own
//! seed from (global seed, stage, stem, replica), so results are identical
//! for any worker count and any scheduling. Output files created by a
//! command are referenced with paths relative to the manifest that lists
//! them, which keeps output trees byte-identical across locations.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use detkit_core::augment::{augment_frame, derive_seed, AugmentError, FrameData, FramePool};
use detkit_core::datasetops::{build_variant, split, DatasetManifest, SplitSpec};
use detkit_core::imagery::{read_image, write_image};
use detkit_core::labels::{serialize_label_file, LabeledFrame, Modality};
use detkit_core::metrics::{evaluate, join_detections, parse_prediction_file, EvalReport};
use detkit_core::synthcolor::{channel_stats, synthesize_seeded, ColorStats};

use crate::config::{PipelineConfig, TrainerExport};
use crate::CliError;

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Data(format!("failed to start worker pool: {e}")))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(path).map_err(|e| CliError::Data(e.to_string()))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Pool that decodes frames from disk on demand.
struct DiskPool<'a> {
    frames: &'a [LabeledFrame],
}

impl FramePool for DiskPool<'_> {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn fetch(&self, index: usize) -> Result<FrameData, AugmentError> {
        let frame = &self.frames[index];
        let image = read_image(&frame.image_path).map_err(|e| AugmentError::PoolFetch {
            index,
            detail: e.to_string(),
        })?;
        Ok(FrameData {
            image,
            boxes: frame.boxes.clone(),
        })
    }
}

#[derive(Debug)]
pub struct AugmentOutcome {
    pub written: usize,
    pub skipped: Vec<String>,
    pub manifest_path: PathBuf,
    pub log_path: PathBuf,
}

/// Materializes augmented image/label pairs for the configured variant.
///
/// Writes `images/<stem>_augN.ppm` + `labels/<stem>_augN.txt`, a manifest of
/// the new frames, and a tab-separated log of (input stem, seed, output
/// stem). Unreadable frames are reported and skipped; the command fails only
/// when every frame fails.
pub fn cmd_augment(cfg: &PipelineConfig) -> Result<AugmentOutcome, CliError> {
    cfg.policy
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let manifest = load_manifest(cfg.require_manifest()?)?;
    let out_dir = cfg.require_out_dir()?;
    let variant = build_variant(&manifest, &cfg.variant, cfg.seed)
        .map_err(|e| CliError::Data(e.to_string()))?;

    ensure_dir(&out_dir.join("images"))?;
    ensure_dir(&out_dir.join("labels"))?;

    let pool = DiskPool {
        frames: variant.frames(),
    };
    let tasks: Vec<(usize, u32)> = (0..variant.len())
        .flat_map(|i| (1..=cfg.augment_multiplicity).map(move |r| (i, r)))
        .collect();

    struct Row {
        input_stem: String,
        seed: u64,
        out_stem: String,
        result: Result<LabeledFrame, String>,
    }

    let workers = worker_pool(cfg.workers)?;
    let rows: Vec<Row> = workers.install(|| {
        tasks
            .par_iter()
            .map(|&(idx, replica)| {
                let frame = &variant.frames()[idx];
                let seed = derive_seed(cfg.seed, "augment", &frame.stem, replica);
                let out_stem = format!("{}_aug{}", frame.stem, replica);
                let result = (|| -> Result<LabeledFrame, String> {
                    let image = read_image(&frame.image_path).map_err(|e| e.to_string())?;
                    let data = FrameData {
                        image,
                        boxes: frame.boxes.clone(),
                    };
                    let out = augment_frame(&data, &pool, &cfg.policy, seed)
                        .map_err(|e| e.to_string())?;
                    let image_rel = PathBuf::from(format!("images/{out_stem}.ppm"));
                    let label_rel = PathBuf::from(format!("labels/{out_stem}.txt"));
                    write_image(&out.image, &out_dir.join(&image_rel))
                        .map_err(|e| e.to_string())?;
                    std::fs::write(
                        out_dir.join(&label_rel),
                        serialize_label_file(&out.boxes),
                    )
                    .map_err(|e| e.to_string())?;
                    Ok(LabeledFrame {
                        stem: out_stem.clone(),
                        image_path: image_rel,
                        label_path: label_rel,
                        boxes: out.boxes,
                        patient_id: frame.patient_id.clone(),
                        modality: frame.modality,
                        source_stem: Some(frame.stem.clone()),
                    })
                })();
                Row {
                    input_stem: frame.stem.clone(),
                    seed,
                    out_stem,
                    result,
                }
            })
            .collect()
    });

    let mut rows = rows;
    rows.sort_by(|a, b| a.out_stem.cmp(&b.out_stem));

    let mut log = String::from("input\tseed\toutput\n");
    let mut frames = Vec::new();
    let mut skipped = Vec::new();
    for row in rows {
        match row.result {
            Ok(frame) => {
                log.push_str(&format!("{}\t{}\t{}\n", row.input_stem, row.seed, row.out_stem));
                frames.push(frame);
            }
            Err(detail) => skipped.push(format!("{}: {detail}", row.input_stem)),
        }
    }
    for s in &skipped {
        eprintln!("warning: skipped {s}");
    }
    if frames.is_empty() && !tasks.is_empty() {
        return Err(CliError::Data(format!(
            "all {} augmentation tasks failed; first failure: {}",
            tasks.len(),
            skipped.first().map(String::as_str).unwrap_or("unknown")
        )));
    }

    let written = frames.len();
    let out_manifest = DatasetManifest::new(frames).map_err(|e| CliError::Data(e.to_string()))?;
    let manifest_path = out_dir.join("manifest.tsv");
    out_manifest
        .save(&manifest_path)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let log_path = out_dir.join("augment_log.tsv");
    write_text(&log_path, &log)?;

    Ok(AugmentOutcome {
        written,
        skipped,
        manifest_path,
        log_path,
    })
}

#[derive(Debug)]
pub struct SynthOutcome {
    pub written: usize,
    pub skipped: Vec<String>,
    /// Combined manifest: source frames plus the new synthetic frames.
    pub manifest_path: PathBuf,
    pub log_path: PathBuf,
}

/// Synthesizes color variants of every WL frame.
///
/// The donor pool holds the color statistics of all readable WL frames; each
/// output draws a donor, jitters it, and writes `images/<stem>_gan[N].ppm`
/// plus the inherited labels. The emitted manifest contains the source
/// frames followed by the synthetic frames, ready for variant building.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthOutcome, CliError> {
    let manifest = load_manifest(cfg.require_manifest()?)?;
    let out_dir = cfg.require_out_dir()?;
    ensure_dir(&out_dir.join("images"))?;
    ensure_dir(&out_dir.join("labels"))?;

    let mut wl: Vec<&LabeledFrame> = manifest
        .frames()
        .iter()
        .filter(|f| f.modality == Modality::Wl)
        .collect();
    wl.sort_by(|a, b| a.stem.cmp(&b.stem));

    let workers = worker_pool(cfg.workers)?;
    let stats: Vec<(String, Result<ColorStats, String>)> = workers.install(|| {
        wl.par_iter()
            .map(|frame| {
                let result = read_image(&frame.image_path)
                    .map(|img| channel_stats(&img))
                    .map_err(|e| e.to_string());
                (frame.stem.clone(), result)
            })
            .collect()
    });

    let mut skipped: Vec<String> = Vec::new();
    let mut pool: Vec<ColorStats> = Vec::new();
    let mut readable: std::collections::BTreeSet<String> = Default::default();
    for (stem, result) in stats {
        match result {
            Ok(s) => {
                pool.push(s);
                readable.insert(stem);
            }
            Err(detail) => skipped.push(format!("{stem}: {detail}")),
        }
    }
    if pool.is_empty() {
        return Err(CliError::Data(
            "empty color statistics pool: no readable WL frames".into(),
        ));
    }

    let multiplicity = |patient: &str| -> u32 {
        cfg.synth_multiplicity_per_patient
            .get(patient)
            .copied()
            .unwrap_or(cfg.synth_multiplicity)
    };
    let tasks: Vec<(usize, u32)> = wl
        .iter()
        .enumerate()
        .filter(|(_, f)| readable.contains(&f.stem))
        .flat_map(|(i, f)| (1..=multiplicity(&f.patient_id)).map(move |r| (i, r)))
        .collect();

    struct Row {
        out_stem: String,
        source_stem: String,
        target: ColorStats,
        result: Result<LabeledFrame, String>,
    }

    let pool_ref = &pool;
    let rows: Vec<Row> = workers.install(|| {
        tasks
            .par_iter()
            .map(|&(idx, replica)| {
                let frame = wl[idx];
                let seed = derive_seed(cfg.seed, "synth", &frame.stem, replica);
                let out_stem = if replica == 1 {
                    format!("{}_gan", frame.stem)
                } else {
                    format!("{}_gan{}", frame.stem, replica)
                };
                let result = (|| -> Result<(LabeledFrame, ColorStats), String> {
                    let image = read_image(&frame.image_path).map_err(|e| e.to_string())?;
                    let mut out =
                        synthesize_seeded(frame, &image, pool_ref, seed, cfg.synth_jitter)
                            .map_err(|e| e.to_string())?;
                    out.frame.stem = out_stem.clone();
                    let image_rel = PathBuf::from(format!("images/{out_stem}.ppm"));
                    let label_rel = PathBuf::from(format!("labels/{out_stem}.txt"));
                    write_image(&out.image, &out_dir.join(&image_rel))
                        .map_err(|e| e.to_string())?;
                    std::fs::write(
                        out_dir.join(&label_rel),
                        serialize_label_file(&out.frame.boxes),
                    )
                    .map_err(|e| e.to_string())?;
                    out.frame.image_path = image_rel;
                    out.frame.label_path = label_rel;
                    Ok((out.frame, out.record.target))
                })();
                match result {
                    Ok((frame_out, target)) => Row {
                        out_stem,
                        source_stem: frame.stem.clone(),
                        target,
                        result: Ok(frame_out),
                    },
                    Err(detail) => Row {
                        out_stem,
                        source_stem: frame.stem.clone(),
                        target: ColorStats {
                            mean: [0.0; 3],
                            std: [0.0; 3],
                        },
                        result: Err(detail),
                    },
                }
            })
            .collect()
    });

    let mut rows = rows;
    rows.sort_by(|a, b| a.out_stem.cmp(&b.out_stem));

    let mut log = String::from("output\tsource\ttarget_mean\ttarget_std\n");
    let mut synth_frames = Vec::new();
    for row in rows {
        match row.result {
            Ok(frame) => {
                log.push_str(&format!(
                    "{}\t{}\t{:?},{:?},{:?}\t{:?},{:?},{:?}\n",
                    row.out_stem,
                    row.source_stem,
                    row.target.mean[0],
                    row.target.mean[1],
                    row.target.mean[2],
                    row.target.std[0],
                    row.target.std[1],
                    row.target.std[2],
                ));
                synth_frames.push(frame);
            }
            Err(detail) => skipped.push(format!("{}: {detail}", row.out_stem)),
        }
    }
    for s in &skipped {
        eprintln!("warning: skipped {s}");
    }
    if synth_frames.is_empty() {
        return Err(CliError::Data("no synthetic frames were produced".into()));
    }

    let written = synth_frames.len();
    let mut combined = manifest.frames().to_vec();
    combined.extend(synth_frames);
    let out_manifest =
        DatasetManifest::new(combined).map_err(|e| CliError::Data(e.to_string()))?;
    let manifest_path = out_dir.join("manifest.tsv");
    out_manifest
        .save(&manifest_path)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let log_path = out_dir.join("synth_log.tsv");
    write_text(&log_path, &log)?;

    Ok(SynthOutcome {
        written,
        skipped,
        manifest_path,
        log_path,
    })
}

#[derive(Debug)]
pub struct SplitOutcomePaths {
    pub train_val_path: PathBuf,
    pub test_path: PathBuf,
    pub summary_path: PathBuf,
    pub train_val: usize,
    pub test: usize,
}

/// Builds the configured variant and splits it into train+val and test
/// manifests plus a per-patient summary. Verifies the split invariants
/// before writing; a violation is an internal error.
pub fn cmd_split(cfg: &PipelineConfig) -> Result<SplitOutcomePaths, CliError> {
    let manifest = load_manifest(cfg.require_manifest()?)?;
    let out_dir = cfg.require_out_dir()?;
    ensure_dir(out_dir)?;

    let variant = build_variant(&manifest, &cfg.variant, cfg.seed)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let spec = SplitSpec {
        holdout_patient: cfg.split_holdout.clone(),
        test_fraction: cfg.split_fraction,
        seed: cfg.split_seed.unwrap_or(cfg.seed),
        test_modality: cfg.split_modality,
        strict_patient: cfg.split_strict,
    };
    let outcome = split(&variant, &spec).map_err(|e| CliError::Data(e.to_string()))?;

    verify_split(&outcome, &spec)?;

    let train_val_path = out_dir.join("train_val.tsv");
    let test_path = out_dir.join("test.tsv");
    outcome
        .train_val
        .save(&train_val_path)
        .map_err(|e| CliError::Data(e.to_string()))?;
    outcome
        .test
        .save(&test_path)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut summary = String::new();
    summary.push_str(&format!("variant: {}\n", cfg.variant.name));
    summary.push_str(&format!("total: {}\n", variant.len()));
    summary.push_str(&format!("target_test: {}\n", outcome.summary.target_test));
    summary.push_str(&format!("train_val: {}\n", outcome.train_val.len()));
    summary.push_str(&format!("test: {}\n", outcome.test.len()));
    summary.push_str("patient\ttrain_val\ttest\n");
    for (patient, counts) in &outcome.summary.per_patient {
        summary.push_str(&format!(
            "{patient}\t{}\t{}\n",
            counts.train_val, counts.test
        ));
    }
    for warning in &outcome.summary.warnings {
        summary.push_str(&format!("warning: {warning}\n"));
        eprintln!("warning: {warning}");
    }
    let summary_path = out_dir.join("split_summary.txt");
    write_text(&summary_path, &summary)?;

    Ok(SplitOutcomePaths {
        train_val_path,
        test_path,
        summary_path,
        train_val: outcome.train_val.len(),
        test: outcome.test.len(),
    })
}

fn verify_split(
    outcome: &detkit_core::datasetops::SplitOutcome,
    spec: &SplitSpec,
) -> Result<(), CliError> {
    let internal = |msg: String| CliError::Data(format!("internal error: {msg}"));
    let test_stems: std::collections::BTreeSet<&str> = outcome
        .test
        .frames()
        .iter()
        .map(|f| f.stem.as_str())
        .collect();
    for f in outcome.train_val.frames() {
        if test_stems.contains(f.stem.as_str()) {
            return Err(internal(format!("frame '{}' is in both sets", f.stem)));
        }
        if f.patient_id == spec.holdout_patient {
            return Err(internal(format!(
                "holdout frame '{}' leaked into train+val",
                f.stem
            )));
        }
    }
    for f in outcome.test.frames() {
        if f.modality != spec.test_modality {
            return Err(internal(format!(
                "test frame '{}' has modality {}",
                f.stem, f.modality
            )));
        }
        if f.modality == Modality::Synth {
            return Err(internal(format!("synthetic frame '{}' in test", f.stem)));
        }
    }
    Ok(())
}

/// One (name, ground truth, predictions) row of an evaluation run.
#[derive(Debug, Clone)]
pub struct EvalPhase {
    pub name: String,
    pub gt_manifest: PathBuf,
    pub pred_dir: PathBuf,
}

/// Evaluates prediction files against ground-truth manifests.
///
/// Every test image must have `<stem>.pred.txt` in the prediction directory
/// unless `allow_missing` is set, in which case missing files count as zero
/// detections (reported per stem). Prediction files for unknown stems are an
/// error. Writes `report.csv` and `report.txt` with one row per phase.
pub fn cmd_eval(
    cfg: &PipelineConfig,
    phases: &[EvalPhase],
    allow_missing: bool,
) -> Result<Vec<(String, EvalReport)>, CliError> {
    if phases.is_empty() {
        return Err(CliError::Validation("no evaluation phases given".into()));
    }
    let out_dir = cfg.require_out_dir()?;
    ensure_dir(out_dir)?;

    let mut rows = Vec::new();
    for phase in phases {
        if !phase.pred_dir.is_dir() {
            return Err(CliError::Validation(format!(
                "prediction directory does not exist: {}",
                phase.pred_dir.display()
            )));
        }
        let manifest = load_manifest(&phase.gt_manifest)?;
        let gt: Vec<(String, Vec<detkit_core::labels::NormBox>)> = manifest
            .frames()
            .iter()
            .map(|f| (f.stem.clone(), f.boxes.clone()))
            .collect();

        // predictions come from the directory listing, so stems with no
        // ground truth surface as join errors
        let mut pred_files: Vec<PathBuf> = std::fs::read_dir(&phase.pred_dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", phase.pred_dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.ends_with(".pred.txt"))
            })
            .collect();
        pred_files.sort();

        let mut dets = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for path in pred_files {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let stem = name.trim_end_matches(".pred.txt").to_string();
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let parsed = parse_prediction_file(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            seen.insert(stem.clone());
            dets.push((stem, parsed));
        }

        let missing: Vec<String> = manifest
            .frames()
            .iter()
            .filter(|f| !seen.contains(&f.stem))
            .map(|f| f.stem.clone())
            .collect();
        if !missing.is_empty() {
            if allow_missing {
                for stem in &missing {
                    eprintln!(
                        "warning: no prediction file for '{stem}', treating as zero detections"
                    );
                }
            } else {
                return Err(CliError::Data(format!(
                    "missing prediction files for {} image(s): {} (pass --allow-missing to treat them as zero detections)",
                    missing.len(),
                    missing.join(", ")
                )));
            }
        }

        let images = join_detections(gt, dets).map_err(|e| CliError::Data(e.to_string()))?;
        rows.push((phase.name.clone(), evaluate(&images)));
    }

    write_text(&out_dir.join("report.csv"), &crate::report::render_csv(&rows))?;
    write_text(&out_dir.join("report.txt"), &crate::report::render_table(&rows))?;
    Ok(rows)
}

/// Writes the trainer hyperparameter export.
pub fn cmd_export_trainer(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let out_dir = cfg.require_out_dir()?;
    ensure_dir(out_dir)?;
    let path = out_dir.join("trainer.txt");
    write_text(&path, &TrainerExport::from_config(cfg).render())?;
    Ok(path)
}
