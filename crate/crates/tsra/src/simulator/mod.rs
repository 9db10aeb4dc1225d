//! Synthetic paired-scene generator with known ground-truth deviations.
//!
//! Every object has a true pose. The infrared annotation and rendering sit
//! exactly on that pose. The visible (RGB) side is displaced by two
//! independent error channels:
//!
//! - hardware error: a global shift and scale (sensor registration
//!   residual), plus a per-object along-heading displacement for objects
//!   flagged as moving (capture-time skew between the two sensors);
//! - annotation error: with some probability, Gaussian noise on the RGB
//!   *box* only — the rendered object stays at the hardware-displaced pose,
//!   so a noisy annotation visibly disagrees with its own image.
//!
//! `true_deviation` records `encode(ir_box, rgb_box)` for every object, and
//! `rgb_pose` keeps the hardware-displaced render pose so feature maps can
//! be regenerated from an exported dataset.
//!
//! Objects are placed without overlap (their 1.8x extended footprints are
//! disjoint), which keeps the modality-selection crops single-object.

mod io;

pub use io::{export_dataset, import_dataset, Dataset, DatasetError, MANIFEST_NAME};

use crate::deviation::{encode, Deviation, RotationMode};
use crate::geometry::{corners, rotated_iou, RotatedBox};
use crate::image::GrayImage;
use crate::modality::extend_box;
use crate::pooling::FeatureMap;
use crate::rng::{derive_seed, SplitMix64};
use serde::{Deserialize, Serialize};

/// Multiplier applied to the intensity of dark-illumination RGB renders.
const DIM_FACTOR: f64 = 0.03;
/// Extended-footprint factor used by the non-overlap placement rule.
const SEPARATION_FACTOR: f64 = 1.8;

/// Per-scene rng stream indices (`derive_seed(seed, scene_id * 8 + K)`).
const STREAM_PLACE: u64 = 0;
const STREAM_RENDER_RGB: u64 = 1;
const STREAM_RENDER_IR: u64 = 2;
const STREAM_FEATURES: u64 = 3;
/// Reserved for the training pipeline's negative proposals.
pub(crate) const STREAM_NEGATIVES: u64 = 4;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HardwareErrorConfig {
    /// Global RGB shift in pixels, applied to every object.
    pub global_shift: (f64, f64),
    /// Global RGB scale about the image center.
    pub global_scale: f64,
    /// Maximum along-heading displacement for moving objects, pixels.
    pub motion_skew: f64,
    /// Probability that an object is flagged as moving.
    pub moving_prob: f64,
}

impl Default for HardwareErrorConfig {
    fn default() -> Self {
        Self {
            global_shift: (2.0, 1.0),
            global_scale: 1.0,
            motion_skew: 4.0,
            moving_prob: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotationErrorConfig {
    /// Probability that an RGB annotation is perturbed.
    pub prob: f64,
    /// Center noise, pixels.
    pub pos_sigma: f64,
    /// Extent noise, pixels (additive, clamped so extents stay >= 2 px).
    pub size_sigma: f64,
    /// Angle noise, radians.
    pub angle_sigma: f64,
}

impl Default for AnnotationErrorConfig {
    fn default() -> Self {
        Self {
            prob: 0.35,
            pos_sigma: 2.5,
            size_sigma: 2.5,
            angle_sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IlluminationConfig {
    /// Probability that a scene's RGB render is dimmed to near-black.
    pub dark_prob: f64,
}

impl Default for IlluminationConfig {
    fn default() -> Self {
        Self { dark_prob: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// (height, width) in pixels.
    pub image_size: (u32, u32),
    /// Inclusive range of objects per scene (placement may fall short when
    /// the non-overlap rule runs out of room).
    pub objects_per_image: (u32, u32),
    pub class_count: u32,
    /// Sampled object width range, pixels.
    pub object_width: (f64, f64),
    /// Height is width times a ratio from this range.
    pub aspect_ratio: (f64, f64),
    pub hardware: HardwareErrorConfig,
    pub annotation: AnnotationErrorConfig,
    pub illumination: IlluminationConfig,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: (256, 256),
            objects_per_image: (6, 12),
            class_count: 5,
            object_width: (18.0, 44.0),
            aspect_ratio: (0.4, 0.7),
            hardware: HardwareErrorConfig::default(),
            annotation: AnnotationErrorConfig::default(),
            illumination: IlluminationConfig::default(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub channels: usize,
    pub noise_sigma: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            channels: 4,
            noise_sigma: 0.02,
        }
    }
}

/// One object's paired annotation. For real data only the boxes exist; the
/// simulator also records its ground truth (`true_deviation`, `rgb_pose`,
/// `moving`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedAnnotation {
    pub object_id: u64,
    pub class_id: u32,
    pub rgb_box: Option<RotatedBox>,
    pub ir_box: Option<RotatedBox>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub true_deviation: Option<Deviation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rgb_pose: Option<RotatedBox>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub moving: Option<bool>,
}

impl PairedAnnotation {
    /// Plain pair without simulator ground truth.
    pub fn paired(object_id: u64, class_id: u32, rgb_box: RotatedBox, ir_box: RotatedBox) -> Self {
        Self {
            object_id,
            class_id,
            rgb_box: Some(rgb_box),
            ir_box: Some(ir_box),
            true_deviation: None,
            rgb_pose: None,
            moving: None,
        }
    }
}

/// One generated scene: both renders plus the annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScene {
    pub scene_id: u64,
    pub height: u32,
    pub width: u32,
    pub rgb_img: GrayImage,
    pub ir_img: GrayImage,
    pub annotations: Vec<PairedAnnotation>,
}

fn scene_rng(seed: u64, scene_id: u64, stream: u64) -> SplitMix64 {
    SplitMix64::new(derive_seed(seed, scene_id * 8 + stream))
}

/// Applies the hardware error channel to a true pose.
fn hardware_pose(
    truth: &RotatedBox,
    cfg: &SceneConfig,
    moving: bool,
    skew_amount: f64,
) -> RotatedBox {
    let (h, w) = cfg.image_size;
    let (icx, icy) = (w as f64 * 0.5, h as f64 * 0.5);
    let s = cfg.hardware.global_scale;
    // Keep scale 1 bit-exact so a zero-error config reproduces the truth.
    let (mut cx, mut cy) = if s == 1.0 {
        (truth.cx(), truth.cy())
    } else {
        (icx + s * (truth.cx() - icx), icy + s * (truth.cy() - icy))
    };
    cx += cfg.hardware.global_shift.0;
    cy += cfg.hardware.global_shift.1;
    if moving {
        let (sin_t, cos_t) = truth.theta().sin_cos();
        cx += skew_amount * cos_t;
        cy += skew_amount * sin_t;
    }
    RotatedBox::new(cx, cy, truth.w() * s, truth.h() * s, truth.theta())
        .expect("hardware transform keeps boxes valid")
}

fn render(
    width: u32,
    height: u32,
    poses: &[RotatedBox],
    rng: &mut SplitMix64,
    dim: bool,
) -> GrayImage {
    let mut img = GrayImage::new(width as usize, height as usize);
    // Textured dark background.
    for p in img.pixels_mut() {
        *p = 8 + rng.below(41) as u8;
    }
    // Bright rectangles; membership by pixel-center point-in-polygon, the
    // same rule the modality scorer uses.
    for pose in poses {
        let poly = corners(pose);
        let (x0, y0, x1, y1) = poly.bounds();
        let xs = x0.floor().max(0.0) as usize;
        let ys = y0.floor().max(0.0) as usize;
        let xe = (x1.ceil() as i64).clamp(0, width as i64) as usize;
        let ye = (y1.ceil() as i64).clamp(0, height as i64) as usize;
        for y in ys..ye {
            for x in xs..xe {
                if poly.contains([x as f64 + 0.5, y as f64 + 0.5]) {
                    img.set(x, y, 200 + rng.below(41) as u8);
                }
            }
        }
    }
    if dim {
        for p in img.pixels_mut() {
            *p = (*p as f64 * DIM_FACTOR).round() as u8;
        }
    }
    img
}

/// Generates one scene deterministically from `cfg.seed` and `scene_id`.
pub fn generate_scene(cfg: &SceneConfig, scene_id: u64) -> SimScene {
    let (height, width) = cfg.image_size;
    let mut place = scene_rng(cfg.seed, scene_id, STREAM_PLACE);
    let dark = place.chance(cfg.illumination.dark_prob);
    let (lo, hi) = cfg.objects_per_image;
    let want = lo + place.below((hi - lo + 1) as u64) as u32;

    let mut truths: Vec<RotatedBox> = Vec::new();
    let mut annotations = Vec::new();
    let mut rgb_poses = Vec::new();
    for idx in 0..want {
        let mut placed = None;
        for _attempt in 0..40 {
            let w = place.uniform(cfg.object_width.0, cfg.object_width.1);
            let h = w * place.uniform(cfg.aspect_ratio.0, cfg.aspect_ratio.1);
            let margin = 0.5 * (w * w + h * h).sqrt() + 2.0;
            if 2.0 * margin >= width as f64 || 2.0 * margin >= height as f64 {
                continue;
            }
            let cx = place.uniform(margin, width as f64 - margin);
            let cy = place.uniform(margin, height as f64 - margin);
            let theta = place.uniform(0.0, std::f64::consts::TAU);
            let candidate = RotatedBox::new(cx, cy, w, h, theta).unwrap();
            let sep = extend_box(&candidate, SEPARATION_FACTOR);
            if truths
                .iter()
                .all(|t| rotated_iou(&sep, &extend_box(t, SEPARATION_FACTOR)) == 0.0)
            {
                placed = Some(candidate);
                break;
            }
        }
        let Some(truth) = placed else {
            continue; // no room left; scene simply holds fewer objects
        };
        let class_id = place.below(cfg.class_count as u64) as u32;
        let moving = place.chance(cfg.hardware.moving_prob);
        let skew_amount = if moving {
            place.uniform(0.0, cfg.hardware.motion_skew)
        } else {
            0.0
        };
        let rgb_pose = hardware_pose(&truth, cfg, moving, skew_amount);
        let rgb_box = if place.chance(cfg.annotation.prob) {
            let a = &cfg.annotation;
            RotatedBox::new(
                rgb_pose.cx() + place.normal_scaled(a.pos_sigma),
                rgb_pose.cy() + place.normal_scaled(a.pos_sigma),
                (rgb_pose.w() + place.normal_scaled(a.size_sigma)).max(2.0),
                (rgb_pose.h() + place.normal_scaled(a.size_sigma)).max(2.0),
                rgb_pose.theta() + place.normal_scaled(a.angle_sigma),
            )
            .unwrap()
        } else {
            rgb_pose
        };
        let ir_box = truth;
        let true_deviation = encode(&ir_box, &rgb_box, RotationMode::Standard).unwrap();
        annotations.push(PairedAnnotation {
            object_id: idx as u64,
            class_id,
            rgb_box: Some(rgb_box),
            ir_box: Some(ir_box),
            true_deviation: Some(true_deviation),
            rgb_pose: Some(rgb_pose),
            moving: Some(moving),
        });
        rgb_poses.push(rgb_pose);
        truths.push(truth);
    }

    let mut rng_rgb = scene_rng(cfg.seed, scene_id, STREAM_RENDER_RGB);
    let rgb_img = render(width, height, &rgb_poses, &mut rng_rgb, dark);
    let mut rng_ir = scene_rng(cfg.seed, scene_id, STREAM_RENDER_IR);
    let ir_img = render(width, height, &truths, &mut rng_ir, false);

    SimScene {
        scene_id,
        height,
        width,
        rgb_img,
        ir_img,
        annotations,
    }
}

pub fn generate_dataset(cfg: &SceneConfig, scenes: u64) -> Dataset {
    Dataset {
        config: cfg.clone(),
        scenes: (0..scenes).map(|id| generate_scene(cfg, id)).collect(),
    }
}

/// Per-channel blob amplitude; varies smoothly with channel and class so the
/// feature maps are not degenerate across channels.
fn blob_amplitude(channel: usize, class_id: u32) -> f64 {
    0.55 + 0.45 * (1.7 * channel as f64 + 0.9 * class_id as f64 + 0.4).sin()
}

fn imprint_blob(fm: &mut FeatureMap, pose: &RotatedBox, class_id: u32) {
    let (sin_t, cos_t) = pose.theta().sin_cos();
    let sigma_u = pose.w() / 4.0;
    let sigma_v = pose.h() / 4.0;
    let support = extend_box(pose, 2.0);
    let (x0, y0, x1, y1) = corners(&support).bounds();
    let xs = x0.floor().max(0.0) as usize;
    let ys = y0.floor().max(0.0) as usize;
    let xe = (x1.ceil() as i64).clamp(0, fm.width() as i64) as usize;
    let ye = (y1.ceil() as i64).clamp(0, fm.height() as i64) as usize;
    for c in 0..fm.channels() {
        let amp = blob_amplitude(c, class_id);
        for y in ys..ye {
            for x in xs..xe {
                let px = x as f64 + 0.5 - pose.cx();
                let py = y as f64 + 0.5 - pose.cy();
                let u = px * cos_t + py * sin_t;
                let v = -px * sin_t + py * cos_t;
                let g = (-0.5 * (u * u / (sigma_u * sigma_u) + v * v / (sigma_v * sigma_v))).exp();
                fm.add(c, x, y, amp * g);
            }
        }
    }
}

/// Synthesizes the two backbone-feature stand-ins for a scene: every object
/// imprints a smooth oriented blob at its modality-specific pose (RGB at the
/// hardware-displaced pose, IR at the true pose), over seeded Gaussian
/// noise. The RGB/IR difference therefore carries exactly the geometric
/// deviation signal.
pub fn synth_features(
    scene: &SimScene,
    fcfg: &FeatureConfig,
    dataset_seed: u64,
) -> (FeatureMap, FeatureMap) {
    let mut rng = scene_rng(dataset_seed, scene.scene_id, STREAM_FEATURES);
    let h = scene.height as usize;
    let w = scene.width as usize;
    let mut fm_rgb = FeatureMap::new(fcfg.channels, h, w);
    let mut fm_ir = FeatureMap::new(fcfg.channels, h, w);
    if fcfg.noise_sigma > 0.0 {
        for c in 0..fcfg.channels {
            for y in 0..h {
                for x in 0..w {
                    fm_rgb.set(c, x, y, rng.normal_scaled(fcfg.noise_sigma));
                }
            }
        }
        for c in 0..fcfg.channels {
            for y in 0..h {
                for x in 0..w {
                    fm_ir.set(c, x, y, rng.normal_scaled(fcfg.noise_sigma));
                }
            }
        }
    }
    for ann in &scene.annotations {
        if let Some(pose) = &ann.rgb_pose {
            imprint_blob(&mut fm_rgb, pose, ann.class_id);
        }
        if let Some(pose) = &ann.ir_box {
            imprint_blob(&mut fm_ir, pose, ann.class_id);
        }
    }
    (fm_rgb, fm_ir)
}

/// Mean intensity over the pixels whose centers fall inside the box; 0 when
/// the box misses the image.
fn crop_mean(img: &GrayImage, bbox: &RotatedBox) -> f64 {
    let poly = corners(bbox);
    let (x0, y0, x1, y1) = poly.bounds();
    let xs = x0.floor().max(0.0) as usize;
    let ys = y0.floor().max(0.0) as usize;
    let xe = (x1.ceil() as i64).clamp(0, img.width() as i64) as usize;
    let ye = (y1.ceil() as i64).clamp(0, img.height() as i64) as usize;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in ys..ye {
        for x in xs..xe {
            if poly.contains([x as f64 + 0.5, y as f64 + 0.5]) {
                sum += img.get(x, y) as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Annotation harmonization:
/// 1. objects annotated in only one modality get the same box copied into
///    the other;
/// 2. pairs whose RGB crop mean intensity is below `dark_threshold`
///    (8-bit scale) are dropped from both modalities;
/// 3. the output is sorted by object id so paired objects share indices.
pub fn harmonize(
    annotations: &[PairedAnnotation],
    rgb_img: &GrayImage,
    _ir_img: &GrayImage,
    dark_threshold: f64,
) -> Vec<PairedAnnotation> {
    let mut out: Vec<PairedAnnotation> = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let mut ann = ann.clone();
        match (&ann.rgb_box, &ann.ir_box) {
            (None, None) => continue,
            (None, Some(ir)) => ann.rgb_box = Some(*ir),
            (Some(rgb), None) => ann.ir_box = Some(*rgb),
            (Some(_), Some(_)) => {}
        }
        let rgb = ann.rgb_box.as_ref().unwrap();
        if crop_mean(rgb_img, rgb) < dark_threshold {
            continue;
        }
        out.push(ann);
    }
    out.sort_by_key(|a| a.object_id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deviation::RotationMode;
    use crate::evaluation::{deviation_stats, DeviationThresholds};
    use crate::pooling::{rotated_roi_align, subtract};

    fn zero_error_config(seed: u64) -> SceneConfig {
        SceneConfig {
            hardware: HardwareErrorConfig {
                global_shift: (0.0, 0.0),
                global_scale: 1.0,
                motion_skew: 0.0,
                moving_prob: 0.0,
            },
            annotation: AnnotationErrorConfig {
                prob: 0.0,
                ..Default::default()
            },
            illumination: IlluminationConfig { dark_prob: 0.0 },
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_errors_give_identical_boxes_and_zero_deviation() {
        let scene = generate_scene(&zero_error_config(3), 0);
        assert!(!scene.annotations.is_empty());
        for ann in &scene.annotations {
            assert_eq!(ann.rgb_box, ann.ir_box);
            let d = ann.true_deviation.unwrap();
            for v in d.components() {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn pure_global_shift_moves_every_center() {
        let mut cfg = zero_error_config(4);
        cfg.hardware.global_shift = (5.0, 0.0);
        let scene = generate_scene(&cfg, 0);
        for ann in &scene.annotations {
            let rgb = ann.rgb_box.unwrap();
            let ir = ann.ir_box.unwrap();
            assert!((rgb.cx() - ir.cx() - 5.0).abs() < 1e-9);
            assert!((rgb.cy() - ir.cy()).abs() < 1e-9);
        }
    }

    #[test]
    fn annotation_probability_concentrates() {
        let mut cfg = zero_error_config(5);
        cfg.annotation = AnnotationErrorConfig {
            prob: 0.2,
            pos_sigma: 2.0,
            size_sigma: 0.0,
            angle_sigma: 0.0,
        };
        let mut total = 0usize;
        let mut deviant = 0usize;
        let mut id = 0u64;
        while total < 10_000 {
            let scene = generate_scene(&cfg, id);
            id += 1;
            for ann in &scene.annotations {
                total += 1;
                let rgb = ann.rgb_box.unwrap();
                let ir = ann.ir_box.unwrap();
                if (rgb.cx() - ir.cx()).abs() > 1e-12 || (rgb.cy() - ir.cy()).abs() > 1e-12 {
                    deviant += 1;
                }
            }
        }
        let fraction = deviant as f64 / total as f64;
        assert!(
            (fraction - 0.2).abs() <= 0.01,
            "deviant fraction {fraction} over {total}"
        );
    }

    #[test]
    fn recorded_deviation_matches_encode() {
        let scene = generate_scene(&SceneConfig::default(), 11);
        for ann in &scene.annotations {
            let d = encode(
                &ann.ir_box.unwrap(),
                &ann.rgb_box.unwrap(),
                RotationMode::Standard,
            )
            .unwrap();
            let rec = ann.true_deviation.unwrap();
            for (a, b) in d.components().iter().zip(rec.components().iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(&cfg, 5);
        let b = generate_scene(&cfg, 5);
        assert_eq!(a, b);
        let c = generate_scene(&cfg, 6);
        assert_ne!(a.annotations, c.annotations);
    }

    #[test]
    fn features_identical_when_poses_coincide() {
        let cfg = zero_error_config(6);
        let scene = generate_scene(&cfg, 0);
        let fcfg = FeatureConfig {
            channels: 2,
            noise_sigma: 0.0,
        };
        let (fm_rgb, fm_ir) = synth_features(&scene, &fcfg, cfg.seed);
        assert_eq!(fm_rgb, fm_ir);
    }

    #[test]
    fn feature_difference_carries_shift_signal() {
        let mut cfg = zero_error_config(7);
        cfg.hardware.global_shift = (4.0, 0.0);
        cfg.objects_per_image = (1, 1);
        let scene = generate_scene(&cfg, 0);
        let fcfg = FeatureConfig {
            channels: 1,
            noise_sigma: 0.0,
        };
        let (fm_rgb, fm_ir) = synth_features(&scene, &fcfg, cfg.seed);
        let ann = &scene.annotations[0];
        let proposal = ann.ir_box.unwrap();
        let pr = rotated_roi_align(&fm_ir, &proposal, 7, 2).unwrap();
        let ps = rotated_roi_align(&fm_rgb, &proposal, 7, 2).unwrap();
        let d = subtract(&ps, &pr).unwrap();
        assert!(d.data().iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn argmax_displacement_recovers_tx() {
        // Blob peak displacement between the two feature maps approximates
        // the encoded tx for moderate shifts.
        for shift in [2.0f64, 4.0, 6.0] {
            let mut cfg = zero_error_config(8);
            cfg.hardware.global_shift = (shift, 0.0);
            cfg.objects_per_image = (1, 1);
            cfg.object_width = (32.0, 32.0);
            cfg.aspect_ratio = (0.5, 0.5);
            let scene = generate_scene(&cfg, 0);
            let ann = &scene.annotations[0];
            let ir = ann.ir_box.unwrap();
            let fcfg = FeatureConfig {
                channels: 1,
                noise_sigma: 0.0,
            };
            let (fm_rgb, fm_ir) = synth_features(&scene, &fcfg, cfg.seed);
            let peak = |fm: &FeatureMap| {
                let mut best = (0usize, 0usize, f64::NEG_INFINITY);
                for y in 0..fm.height() {
                    for x in 0..fm.width() {
                        let v = fm.get(0, x, y);
                        if v > best.2 {
                            best = (x, y, v);
                        }
                    }
                }
                (best.0 as f64 + 0.5, best.1 as f64 + 0.5)
            };
            let (rx, ry) = peak(&fm_rgb);
            let (ix, iy) = peak(&fm_ir);
            let (dx, dy) = (rx - ix, ry - iy);
            let (sin_t, cos_t) = ir.theta().sin_cos();
            let tx_est = (dx * cos_t + dy * sin_t) / ir.w();
            let true_tx = ann.true_deviation.unwrap().tx;
            assert!(
                (tx_est - true_tx).abs() < 0.1,
                "shift {shift}: est {tx_est} vs true {true_tx}"
            );
        }
    }

    #[test]
    fn harmonize_fills_missing_and_sorts() {
        let b1 = RotatedBox::new(20.0, 20.0, 10.0, 6.0, 0.2).unwrap();
        let b2 = RotatedBox::new(40.0, 40.0, 10.0, 6.0, 1.0).unwrap();
        let bright = {
            let mut img = GrayImage::new(64, 64);
            img.pixels_mut().iter_mut().for_each(|p| *p = 180);
            img
        };
        let anns = vec![
            PairedAnnotation {
                object_id: 2,
                class_id: 0,
                rgb_box: None,
                ir_box: Some(b2),
                true_deviation: None,
                rgb_pose: None,
                moving: None,
            },
            PairedAnnotation {
                object_id: 1,
                class_id: 0,
                rgb_box: Some(b1),
                ir_box: None,
                true_deviation: None,
                rgb_pose: None,
                moving: None,
            },
        ];
        let out = harmonize(&anns, &bright, &bright, 10.0);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].object_id, 1);
        assert_eq!(out[0].ir_box, Some(b1));
        assert_eq!(out[1].rgb_box, Some(b2));
    }

    #[test]
    fn harmonize_drops_dark_rgb_pairs() {
        let b = RotatedBox::new(20.0, 20.0, 10.0, 6.0, 0.0).unwrap();
        let mut dark = GrayImage::new(64, 64);
        dark.pixels_mut().iter_mut().for_each(|p| *p = 3);
        let out = harmonize(&[PairedAnnotation::paired(0, 0, b, b)], &dark, &dark, 10.0);
        assert!(out.is_empty());
    }

    #[test]
    fn dark_scenes_are_dim_and_survive_ms_scoring() {
        let mut cfg = zero_error_config(9);
        cfg.illumination.dark_prob = 1.0;
        let scene = generate_scene(&cfg, 0);
        let ann = &scene.annotations[0];
        let rgb_box = ann.rgb_box.unwrap();
        assert!(crop_mean(&scene.rgb_img, &rgb_box) < 10.0);
        // Otsu still separates the dim object from the dim background.
        let s = crate::modality::ms_score(&scene.rgb_img, &rgb_box, 1.25).unwrap();
        assert_eq!(s.score, 1.0);
    }

    #[test]
    fn clean_annotations_score_one_in_both_modalities() {
        let cfg = zero_error_config(10);
        let scene = generate_scene(&cfg, 0);
        for ann in &scene.annotations {
            let s_rgb = crate::modality::ms_score(&scene.rgb_img, &ann.rgb_box.unwrap(), 1.25)
                .unwrap();
            let s_ir =
                crate::modality::ms_score(&scene.ir_img, &ann.ir_box.unwrap(), 1.25).unwrap();
            assert_eq!(s_rgb.score, 1.0);
            assert_eq!(s_ir.score, 1.0);
        }
    }

    #[test]
    fn below_threshold_errors_produce_no_deviants() {
        let mut cfg = zero_error_config(12);
        cfg.hardware.global_shift = (1.0, 0.5);
        let dataset = generate_dataset(&cfg, 5);
        let pairs: Vec<PairedAnnotation> = dataset
            .scenes
            .iter()
            .flat_map(|s| s.annotations.clone())
            .collect();
        let stats = deviation_stats(&pairs, DeviationThresholds::default());
        assert!(stats.overall.total > 0);
        assert_eq!(stats.overall.any_dev, 0);
    }

    #[test]
    fn default_config_exceeds_twenty_percent_deviants() {
        let dataset = generate_dataset(&SceneConfig::default(), 20);
        let pairs: Vec<PairedAnnotation> = dataset
            .scenes
            .iter()
            .flat_map(|s| s.annotations.clone())
            .collect();
        let stats = deviation_stats(&pairs, DeviationThresholds::default());
        assert!(
            stats.deviant_fraction() > 0.2,
            "deviant fraction {} of {}",
            stats.deviant_fraction(),
            stats.overall.total
        );
    }

    #[test]
    fn objects_do_not_overlap() {
        let dataset = generate_dataset(&SceneConfig::default(), 5);
        for scene in &dataset.scenes {
            let boxes: Vec<RotatedBox> =
                scene.annotations.iter().map(|a| a.ir_box.unwrap()).collect();
            for i in 0..boxes.len() {
                for j in 0..i {
                    assert_eq!(rotated_iou(&boxes[i], &boxes[j]), 0.0);
                }
            }
        }
    }
}
