//! Dataset directory layout and round-trip I/O.
//!
//! ```text
//! <dir>/
//!   manifest.json        format tag, seed, scene ids, image size, config echo
//!   images/
//!     {scene_id:06}_rgb.pgm
//!     {scene_id:06}_ir.pgm
//!   annotations.jsonl    one record per object, scene order then object order
//! ```
//!
//! Annotation record fields: `scene_id`, `object_id`, `class_id`,
//! `rgb_box` / `ir_box` (nullable box objects `{cx, cy, w, h, theta}`), and
//! the simulator ground truth `true_deviation`
//! (`{tx, ty, sw, sh, rtheta}`), `rgb_pose`, `moving` when present.
//!
//! All writes are deterministic, so exporting an imported dataset reproduces
//! the original bytes.

use super::{PairedAnnotation, SceneConfig, SimScene};
use crate::geometry::RotatedBox;
use crate::image::{GrayImage, ImageError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const MANIFEST_NAME: &str = "manifest.json";
const FORMAT_TAG: &str = "tsra-dataset/1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A generated (or imported) dataset: config echo plus all scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub scenes: Vec<SimScene>,
}

impl Dataset {
    pub fn object_count(&self) -> usize {
        self.scenes.iter().map(|s| s.annotations.len()).sum()
    }

    pub fn all_annotations(&self) -> Vec<PairedAnnotation> {
        self.scenes
            .iter()
            .flat_map(|s| s.annotations.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    seed: u64,
    image_height: u32,
    image_width: u32,
    scene_ids: Vec<u64>,
    config: SceneConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRecord {
    scene_id: u64,
    object_id: u64,
    class_id: u32,
    rgb_box: Option<RotatedBox>,
    ir_box: Option<RotatedBox>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    true_deviation: Option<crate::deviation::Deviation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    rgb_pose: Option<RotatedBox>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    moving: Option<bool>,
}

fn image_name(scene_id: u64, modality: &str) -> String {
    format!("{scene_id:06}_{modality}.pgm")
}

pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;

    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        seed: dataset.config.seed,
        image_height: dataset.config.image_size.0,
        image_width: dataset.config.image_size.1,
        scene_ids: dataset.scenes.iter().map(|s| s.scene_id).collect(),
        config: dataset.config.clone(),
    };
    let manifest_path = dir.join(MANIFEST_NAME);
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    std::fs::write(&manifest_path, manifest_json).map_err(io_err(&manifest_path))?;

    let ann_path = dir.join("annotations.jsonl");
    let mut ann_file =
        std::io::BufWriter::new(std::fs::File::create(&ann_path).map_err(io_err(&ann_path))?);
    for scene in &dataset.scenes {
        scene
            .rgb_img
            .write_pgm(&images.join(image_name(scene.scene_id, "rgb")))?;
        scene
            .ir_img
            .write_pgm(&images.join(image_name(scene.scene_id, "ir")))?;
        for ann in &scene.annotations {
            let rec = AnnotationRecord {
                scene_id: scene.scene_id,
                object_id: ann.object_id,
                class_id: ann.class_id,
                rgb_box: ann.rgb_box,
                ir_box: ann.ir_box,
                true_deviation: ann.true_deviation,
                rgb_pose: ann.rgb_pose,
                moving: ann.moving,
            };
            serde_json::to_writer(&mut ann_file, &rec).map_err(|e| DatasetError::Io {
                path: ann_path.display().to_string(),
                source: e.into(),
            })?;
            ann_file.write_all(b"\n").map_err(io_err(&ann_path))?;
        }
    }
    Ok(())
}

pub fn import_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&manifest_text).map_err(|e| DatasetError::Parse {
            path: manifest_path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
    if manifest.format != FORMAT_TAG {
        return Err(DatasetError::Inconsistent(format!(
            "unsupported format tag {:?}",
            manifest.format
        )));
    }

    let ann_path = dir.join("annotations.jsonl");
    let file = std::fs::File::open(&ann_path).map_err(io_err(&ann_path))?;
    let mut per_scene: BTreeMap<u64, Vec<PairedAnnotation>> = BTreeMap::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&ann_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                path: ann_path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        per_scene
            .entry(rec.scene_id)
            .or_default()
            .push(PairedAnnotation {
                object_id: rec.object_id,
                class_id: rec.class_id,
                rgb_box: rec.rgb_box,
                ir_box: rec.ir_box,
                true_deviation: rec.true_deviation,
                rgb_pose: rec.rgb_pose,
                moving: rec.moving,
            });
    }

    let images = dir.join("images");
    let mut scenes = Vec::with_capacity(manifest.scene_ids.len());
    for &scene_id in &manifest.scene_ids {
        let rgb_img = GrayImage::read_pgm(&images.join(image_name(scene_id, "rgb")))?;
        let ir_img = GrayImage::read_pgm(&images.join(image_name(scene_id, "ir")))?;
        let expect = (
            manifest.image_width as usize,
            manifest.image_height as usize,
        );
        if (rgb_img.width(), rgb_img.height()) != expect
            || (ir_img.width(), ir_img.height()) != expect
        {
            return Err(DatasetError::Inconsistent(format!(
                "scene {scene_id} images do not match the manifest size"
            )));
        }
        scenes.push(SimScene {
            scene_id,
            height: manifest.image_height,
            width: manifest.image_width,
            rgb_img,
            ir_img,
            annotations: per_scene.remove(&scene_id).unwrap_or_default(),
        });
    }
    if let Some((orphan, _)) = per_scene.into_iter().next() {
        return Err(DatasetError::Inconsistent(format!(
            "annotations reference unknown scene {orphan}"
        )));
    }
    Ok(Dataset {
        config: manifest.config,
        scenes,
    })
}
