//! Pipeline configuration file and trainer-hyperparameter export.
//!
//! The config is a plain-text key-value file: one `key = value` pair per
//! line, dotted section keys, `#` starts a full-line comment. Unknown keys
//! are rejected. The global `seed` has no default and must be present.
//!
//! Relative paths resolve in two steps: `dataset.root` against the config
//! file's directory, everything else against `dataset.root`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use detkit_core::augment::AugPolicy;
use detkit_core::datasetops::VariantSpec;
use detkit_core::labels::Modality;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub dataset_root: PathBuf,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub variant: VariantSpec,
    pub policy: AugPolicy,
    /// Augmented replicas written per frame.
    pub augment_multiplicity: u32,
    /// Synthetic replicas written per WL frame.
    pub synth_multiplicity: u32,
    /// Per-patient overrides of `synth_multiplicity`.
    pub synth_multiplicity_per_patient: BTreeMap<String, u32>,
    /// Multiplicative jitter on drawn target statistics.
    pub synth_jitter: f64,
    pub split_holdout: String,
    pub split_fraction: f64,
    pub split_modality: Modality,
    pub split_strict: bool,
    /// Defaults to the global seed when absent.
    pub split_seed: Option<u64>,
    pub trainer_batch: u32,
    pub trainer_patience: u32,
    pub trainer_imgsz: u32,
}

impl PipelineConfig {
    /// Loads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; `base` anchors relative paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            // '#' starts a comment anywhere; values never contain it
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Validation(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if pairs.insert(key.clone(), value).is_some() {
                return Err(CliError::Validation(format!(
                    "config line {}: duplicate key '{key}'",
                    idx + 1
                )));
            }
        }
        Self::from_pairs(pairs, base)
    }

    fn from_pairs(mut pairs: BTreeMap<String, String>, base: &Path) -> Result<Self, CliError> {
        fn take_parse<T: std::str::FromStr>(
            pairs: &mut BTreeMap<String, String>,
            key: &str,
            default: T,
        ) -> Result<T, CliError> {
            match pairs.remove(key) {
                None => Ok(default),
                Some(v) => v.parse::<T>().map_err(|_| {
                    CliError::Validation(format!("config key '{key}': invalid value '{v}'"))
                }),
            }
        }

        let seed = match pairs.remove("seed") {
            None => {
                return Err(CliError::Validation(
                    "config key 'seed' is required: reproducibility needs an explicit seed".into(),
                ))
            }
            Some(v) => v.parse::<u64>().map_err(|_| {
                CliError::Validation(format!("config key 'seed': invalid value '{v}'"))
            })?,
        };

        let dataset_root = match pairs.remove("dataset.root") {
            Some(v) => {
                let p = PathBuf::from(v);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            }
            None => base.to_path_buf(),
        };
        let resolve = |p: PathBuf, root: &Path| -> PathBuf {
            if p.is_absolute() {
                p
            } else {
                root.join(p)
            }
        };
        let manifest = pairs
            .remove("dataset.manifest")
            .map(|v| resolve(PathBuf::from(v), &dataset_root));
        let out_dir = pairs
            .remove("output.dir")
            .map(|v| resolve(PathBuf::from(v), &dataset_root));

        let variant_name = pairs.remove("variant").unwrap_or_else(|| "WL".to_string());
        let mut variant = VariantSpec::by_name(&variant_name).ok_or_else(|| {
            CliError::Validation(format!(
                "config key 'variant': unknown variant '{variant_name}' (expected WL, WL+GAN, or WL50+GAN)"
            ))
        })?;
        if let Some(v) = pairs.remove("variant.wl_fraction") {
            variant.wl_fraction = v.parse().map_err(|_| {
                CliError::Validation(format!("config key 'variant.wl_fraction': invalid value '{v}'"))
            })?;
        }

        let defaults = AugPolicy::default();
        let policy = AugPolicy {
            zoom: take_parse(&mut pairs, "augment.zoom", defaults.zoom)?,
            rotation: take_parse(&mut pairs, "augment.rotation", defaults.rotation)?,
            translate: take_parse(&mut pairs, "augment.translate", defaults.translate)?,
            shear: take_parse(&mut pairs, "augment.shear", defaults.shear)?,
            hflip_p: take_parse(&mut pairs, "augment.hflip_p", defaults.hflip_p)?,
            hue: take_parse(&mut pairs, "augment.hue", defaults.hue)?,
            saturation: take_parse(&mut pairs, "augment.saturation", defaults.saturation)?,
            value: take_parse(&mut pairs, "augment.value", defaults.value)?,
            mixup_p: take_parse(&mut pairs, "augment.mixup_p", defaults.mixup_p)?,
            mosaic_p: take_parse(&mut pairs, "augment.mosaic_p", defaults.mosaic_p)?,
        };
        policy
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;

        let augment_multiplicity = take_parse(&mut pairs, "augment.multiplicity", 1u32)?;
        let synth_multiplicity = take_parse(&mut pairs, "synth.multiplicity", 1u32)?;
        let synth_jitter = take_parse(&mut pairs, "synth.jitter", 0.1f64)?;
        if !(0.0..1.0).contains(&synth_jitter) {
            return Err(CliError::Validation(format!(
                "config key 'synth.jitter': {synth_jitter} outside [0, 1)"
            )));
        }

        let mut synth_multiplicity_per_patient = BTreeMap::new();
        let override_keys: Vec<String> = pairs
            .keys()
            .filter(|k| k.starts_with("synth.multiplicity."))
            .cloned()
            .collect();
        for key in override_keys {
            let patient = key["synth.multiplicity.".len()..].to_string();
            let v = pairs.remove(&key).expect("key listed above");
            let m = v.parse::<u32>().map_err(|_| {
                CliError::Validation(format!("config key '{key}': invalid value '{v}'"))
            })?;
            synth_multiplicity_per_patient.insert(patient, m);
        }

        let split_holdout = pairs
            .remove("split.holdout_patient")
            .unwrap_or_else(|| "6".to_string());
        let split_fraction = take_parse(&mut pairs, "split.test_fraction", 0.1f64)?;
        let split_modality: Modality = match pairs.remove("split.modality") {
            None => Modality::Wl,
            Some(v) => v
                .parse()
                .map_err(|e: detkit_core::labels::LabelError| CliError::Validation(e.to_string()))?,
        };
        let split_strict = take_parse(&mut pairs, "split.strict_patient", false)?;
        let split_seed = match pairs.remove("split.seed") {
            None => None,
            Some(v) => Some(v.parse::<u64>().map_err(|_| {
                CliError::Validation(format!("config key 'split.seed': invalid value '{v}'"))
            })?),
        };

        let trainer_batch = take_parse(&mut pairs, "trainer.batch", 16u32)?;
        let trainer_patience = take_parse(&mut pairs, "trainer.patience", 100u32)?;
        let trainer_imgsz = take_parse(&mut pairs, "trainer.imgsz", 640u32)?;

        let workers = take_parse(&mut pairs, "workers", 1usize)?;
        if workers == 0 {
            return Err(CliError::Validation("config key 'workers': must be >= 1".into()));
        }

        if let Some(unknown) = pairs.keys().next() {
            return Err(CliError::Validation(format!(
                "unknown config key '{unknown}'"
            )));
        }

        Ok(Self {
            seed,
            workers,
            dataset_root,
            manifest,
            out_dir,
            variant,
            policy,
            augment_multiplicity,
            synth_multiplicity,
            synth_multiplicity_per_patient,
            synth_jitter,
            split_holdout,
            split_fraction,
            split_modality,
            split_strict,
            split_seed,
            trainer_batch,
            trainer_patience,
            trainer_imgsz,
        })
    }

    /// Manifest path, required by every command except `export-trainer`.
    pub fn require_manifest(&self) -> Result<&Path, CliError> {
        let path = self.manifest.as_deref().ok_or_else(|| {
            CliError::Validation("config key 'dataset.manifest' is required".into())
        })?;
        if !path.is_file() {
            return Err(CliError::Validation(format!(
                "manifest does not exist: {}",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn require_out_dir(&self) -> Result<&Path, CliError> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| CliError::Validation("config key 'output.dir' is required".into()))
    }
}

/// Hyperparameters handed to the external trainer, echoing the config.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerExport {
    pub batch: u32,
    pub patience: u32,
    pub imgsz: u32,
    pub policy: AugPolicy,
}

impl TrainerExport {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            batch: cfg.trainer_batch,
            patience: cfg.trainer_patience,
            imgsz: cfg.trainer_imgsz,
            policy: cfg.policy,
        }
    }

    /// Key-value text under the trainer's conventional key names.
    pub fn render(&self) -> String {
        let p = &self.policy;
        format!(
            "batch: {}\npatience: {}\nimgsz: {}\nhsv_h: {:?}\nhsv_s: {:?}\nhsv_v: {:?}\ndegrees: {:?}\ntranslate: {:?}\nscale: {:?}\nshear: {:?}\nfliplr: {:?}\nmosaic: {:?}\nmixup: {:?}\n",
            self.batch,
            self.patience,
            self.imgsz,
            p.hue,
            p.saturation,
            p.value,
            p.rotation,
            p.translate,
            p.zoom,
            p.shear,
            p.hflip_p,
            p.mosaic_p,
            p.mixup_p,
        )
    }

    /// Parses a rendered export; inverse of [`TrainerExport::render`].
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                CliError::Data(format!("trainer export: expected 'key: value', got '{line}'"))
            })?;
            map.insert(key.trim(), value.trim());
        }
        fn get<T: std::str::FromStr>(
            map: &BTreeMap<&str, &str>,
            key: &str,
        ) -> Result<T, CliError> {
            map.get(key)
                .ok_or_else(|| CliError::Data(format!("trainer export: missing key '{key}'")))?
                .parse::<T>()
                .map_err(|_| CliError::Data(format!("trainer export: invalid value for '{key}'")))
        }
        Ok(Self {
            batch: get(&map, "batch")?,
            patience: get(&map, "patience")?,
            imgsz: get(&map, "imgsz")?,
            policy: AugPolicy {
                hue: get(&map, "hsv_h")?,
                saturation: get(&map, "hsv_s")?,
                value: get(&map, "hsv_v")?,
                rotation: get(&map, "degrees")?,
                translate: get(&map, "translate")?,
                zoom: get(&map, "scale")?,
                shear: get(&map, "shear")?,
                hflip_p: get(&map, "fliplr")?,
                mosaic_p: get(&map, "mosaic")?,
                mixup_p: get(&map, "mixup")?,
            },
        })
    }
}
