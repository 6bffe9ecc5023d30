//! Shared fixtures: synthetic scene datasets (colored rectangles on textured
//! backgrounds with known boxes) materialized as image/label/manifest trees.
#![allow(dead_code)] // each test binary uses a different subset

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use detkit_core::imagery::{write_image, RasterImage};
use detkit_core::labels::{serialize_label_file, NormBox};

/// Deterministic textured background with strong-contrast rectangles drawn
/// at the returned box positions.
pub fn textured_scene(rng: &mut ChaCha8Rng, w: u32, h: u32) -> (RasterImage, Vec<NormBox>) {
    let mut image = RasterImage::filled(w, h, [0, 0, 0]);
    // scenes share similar global statistics so color transfer between any
    // pair stays mild, like frames drawn from one imaging domain; the
    // rectangle/background luma step is large enough that its central
    // -difference gradient clears the edge threshold with margin both
    // before and after a transfer
    let base: [i16; 3] = [
        rng.random_range(55..70),
        rng.random_range(45..60),
        rng.random_range(55..70),
    ];
    for y in 0..h {
        for x in 0..w {
            let grain: i16 = rng.random_range(-5..=5);
            let px = [
                (base[0] + grain).clamp(0, 255) as u8,
                (base[1] + grain).clamp(0, 255) as u8,
                (base[2] + grain).clamp(0, 255) as u8,
            ];
            image.put(x, y, px);
        }
    }

    let mut boxes = Vec::new();
    for _ in 0..2 {
        // sized so a +0.1 cx shift keeps the box valid and drops IoU below
        // the upper thresholds while staying above 0.5
        let bw = quantize(rng.random_range(0.32..0.42));
        let bh = quantize(rng.random_range(0.32..0.42));
        let cx = quantize(rng.random_range(0.25..0.65));
        let cy = quantize(rng.random_range(0.30..0.70));
        let b = NormBox::new(0, cx, cy, bw, bh);
        b.validate().expect("generated box is valid");

        let color = [
            rng.random_range(215..=235u32) as u8,
            rng.random_range(200..=220u32) as u8,
            rng.random_range(150..=180u32) as u8,
        ];
        let x0 = (b.left() * w as f64).round().max(0.0) as u32;
        let x1 = ((b.right() * w as f64).round() as u32).min(w);
        let y0 = (b.top() * h as f64).round().max(0.0) as u32;
        let y1 = ((b.bottom() * h as f64).round() as u32).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                image.put(x, y, color);
            }
        }
        boxes.push(b);
    }
    (image, boxes)
}

fn quantize(v: f64) -> f64 {
    (v * 1_000_000.0).round() / 1_000_000.0
}

/// Writes `count` scenes under `root/images` + `root/labels` and a manifest
/// at `root/manifest.tsv`. Patients are assigned round-robin weighted by
/// `patients` counts; every frame is WL.
pub fn generate_scene_dataset(
    root: &Path,
    patients: &[(&str, usize)],
    w: u32,
    h: u32,
    seed: u64,
) -> PathBuf {
    std::fs::create_dir_all(root.join("images")).unwrap();
    std::fs::create_dir_all(root.join("labels")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = String::new();
    let mut index = 0usize;
    for (patient, count) in patients {
        for _ in 0..*count {
            let stem = format!("scene{index:03}");
            let (image, boxes) = textured_scene(&mut rng, w, h);
            write_image(&image, &root.join(format!("images/{stem}.ppm"))).unwrap();
            std::fs::write(
                root.join(format!("labels/{stem}.txt")),
                serialize_label_file(&boxes),
            )
            .unwrap();
            manifest.push_str(&format!(
                "{stem}\t{patient}\tWL\timages/{stem}.ppm\tlabels/{stem}.txt\n"
            ));
            index += 1;
        }
    }
    let manifest_path = root.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).unwrap();
    manifest_path
}

/// Writes a config file and returns its path.
pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("pipeline.conf");
    std::fs::write(&path, body).unwrap();
    path
}

/// All regular files under `root` as (relative path, bytes), for
/// byte-identity comparisons between output trees.
pub fn snapshot_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Echo predictions: every ground-truth label line with confidence 1.0,
/// written as `<stem>.pred.txt` files; `shift_cx` moves centers first.
pub fn write_echo_predictions(
    manifest: &detkit_core::datasetops::DatasetManifest,
    pred_dir: &Path,
    shift_cx: f64,
) {
    std::fs::create_dir_all(pred_dir).unwrap();
    for frame in manifest.frames() {
        let mut lines = String::new();
        for b in &frame.boxes {
            let shifted = NormBox::new(b.class_id, b.cx + shift_cx, b.cy, b.w, b.h);
            lines.push_str(&format!(
                "{} {:.6} {:.6} {:.6} {:.6} 1.000000\n",
                shifted.class_id, shifted.cx, shifted.cy, shifted.w, shifted.h
            ));
        }
        std::fs::write(pred_dir.join(format!("{}.pred.txt", frame.stem)), lines).unwrap();
    }
}
