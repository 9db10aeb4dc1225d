//! Glue between the simulator and the alignment head: draft proposals from
//! annotations (modality selection decides which side is the reference),
//! pool features into training samples, split scenes into train/holdout,
//! and measure before/after alignment quality.
//!
//! The proposal for each object is its reference box — the simulator stands
//! in for a region proposal network, so ground-truth matches are free.

use crate::align::{predicted_to_codec, AlignError, AlignHeadParams, ProposalSample};
use crate::deviation::{decode, encode, Deviation, RotationMode};
use crate::evaluation::{mean_ap, Detection, GroundTruth};
use crate::geometry::{angle_difference, rotated_iou, RotatedBox};
use crate::jitter::{jitter_dataset, JitterConfig};
use crate::modality::{select_reference, ReferenceChoice};
use crate::pooling::rotated_roi_align;
use crate::rng::{derive_seed, SplitMix64};
use crate::simulator::{
    harmonize, synth_features, Dataset, FeatureConfig, SimScene, STREAM_NEGATIVES,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    pub out_size: usize,
    pub sampling_ratio: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            out_size: 7,
            sampling_ratio: 2,
        }
    }
}

/// How the reference modality is chosen per object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MsMode {
    /// Pixel-count score of both annotations, higher wins (ties go IR).
    #[default]
    Select,
    /// Ablation: infrared is always the reference.
    AlwaysIr,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub pool: PoolConfig,
    pub features: FeatureConfig,
    pub ms: MsMode,
    /// Box extension factor for modality-selection crops.
    pub extend_factor: f64,
    /// Negative (background) proposals added per positive.
    pub negative_fraction: f64,
    /// Harmonization drop threshold on the RGB crop mean, 8-bit scale.
    pub dark_threshold: f64,
    /// Fraction of scenes held out for evaluation (taken from the end).
    pub holdout_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pool: PoolConfig::default(),
            features: FeatureConfig::default(),
            ms: MsMode::Select,
            extend_factor: 1.25,
            negative_fraction: 0.25,
            dark_threshold: 10.0,
            holdout_fraction: 0.2,
        }
    }
}

/// A proposal before pooling: boxes only. The encode reference for the
/// target is the proposal box itself.
#[derive(Debug, Clone)]
pub struct ProposalDraft {
    pub scene_index: usize,
    pub object_id: u64,
    pub class_id: u32,
    pub proposal: RotatedBox,
    pub true_sensed: Option<RotatedBox>,
    pub target: Option<Deviation>,
    /// Which feature map is the reference side (`phi_r`).
    pub reference_is_rgb: bool,
}

impl ProposalDraft {
    pub fn positive(&self) -> bool {
        self.target.is_some()
    }
}

/// Builds drafts for one scene: harmonize, pick the reference modality per
/// object, encode targets, and add seeded negative proposals.
pub fn scene_drafts(
    dataset: &Dataset,
    scene_index: usize,
    cfg: &PipelineConfig,
) -> Vec<ProposalDraft> {
    let scene: &SimScene = &dataset.scenes[scene_index];
    let pairs = harmonize(
        &scene.annotations,
        &scene.rgb_img,
        &scene.ir_img,
        cfg.dark_threshold,
    );
    let mut drafts = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let rgb = pair.rgb_box.expect("harmonized pair has both boxes");
        let ir = pair.ir_box.expect("harmonized pair has both boxes");
        let reference_is_rgb = match cfg.ms {
            MsMode::AlwaysIr => false,
            MsMode::Select => {
                match select_reference(
                    &scene.rgb_img,
                    &scene.ir_img,
                    &rgb,
                    &ir,
                    cfg.extend_factor,
                ) {
                    Ok((ReferenceChoice::Rgb, _, _)) => true,
                    Ok((ReferenceChoice::Ir, _, _)) => false,
                    // A crop fully outside the image cannot be scored;
                    // fall back to the infrared default.
                    Err(_) => false,
                }
            }
        };
        let (proposal, sensed) = if reference_is_rgb { (rgb, ir) } else { (ir, rgb) };
        let target = encode(&proposal, &sensed, RotationMode::Standard)
            .expect("valid boxes always encode in standard mode");
        drafts.push(ProposalDraft {
            scene_index,
            object_id: pair.object_id,
            class_id: pair.class_id,
            proposal,
            true_sensed: Some(sensed),
            target: Some(target),
            reference_is_rgb,
        });
    }
    // Background proposals: no object, no target.
    let negatives = (drafts.len() as f64 * cfg.negative_fraction).round() as usize;
    let mut rng = SplitMix64::new(derive_seed(
        dataset.config.seed,
        scene.scene_id * 8 + STREAM_NEGATIVES,
    ));
    for k in 0..negatives {
        let w = rng.uniform(dataset.config.object_width.0, dataset.config.object_width.1);
        let h = w * rng.uniform(dataset.config.aspect_ratio.0, dataset.config.aspect_ratio.1);
        let margin = 0.5 * (w * w + h * h).sqrt() + 1.0;
        let proposal = RotatedBox::new(
            rng.uniform(margin, scene.width as f64 - margin),
            rng.uniform(margin, scene.height as f64 - margin),
            w,
            h,
            rng.uniform(0.0, std::f64::consts::TAU),
        )
        .unwrap();
        drafts.push(ProposalDraft {
            scene_index,
            object_id: 1_000_000 + k as u64,
            class_id: 0,
            proposal,
            true_sensed: None,
            target: None,
            reference_is_rgb: false,
        });
    }
    drafts
}

/// Pools one scene's drafts into training samples. Both modalities are
/// pooled at the proposal box; `phi_r` comes from the reference side.
pub fn pool_scene(
    dataset: &Dataset,
    scene_index: usize,
    drafts: &[ProposalDraft],
    cfg: &PipelineConfig,
) -> Vec<ProposalSample> {
    let scene = &dataset.scenes[scene_index];
    let (fm_rgb, fm_ir) = synth_features(scene, &cfg.features, dataset.config.seed);
    drafts
        .iter()
        .map(|d| {
            let (fm_ref, fm_sens) = if d.reference_is_rgb {
                (&fm_rgb, &fm_ir)
            } else {
                (&fm_ir, &fm_rgb)
            };
            let phi_r =
                rotated_roi_align(fm_ref, &d.proposal, cfg.pool.out_size, cfg.pool.sampling_ratio)
                    .expect("valid pool config");
            let phi_s = rotated_roi_align(
                fm_sens,
                &d.proposal,
                cfg.pool.out_size,
                cfg.pool.sampling_ratio,
            )
            .expect("valid pool config");
            ProposalSample {
                phi_r,
                phi_s,
                positive: d.positive(),
                target: d.target,
            }
        })
        .collect()
}

/// Deterministic scene split: the trailing `holdout_fraction` of scenes (at
/// least one, when any exist) are held out.
pub fn split_scenes(n_scenes: usize, holdout_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    if n_scenes == 0 {
        return (vec![], vec![]);
    }
    let holdout = ((n_scenes as f64 * holdout_fraction).round() as usize)
        .max(1)
        .min(n_scenes);
    let cut = n_scenes - holdout;
    ((0..cut).collect(), (cut..n_scenes).collect())
}

/// Builds pooled samples for the given scenes, optionally jitter-augmented
/// (feature maps are synthesized per scene and dropped immediately).
pub fn build_samples(
    dataset: &Dataset,
    scene_indices: &[usize],
    cfg: &PipelineConfig,
    jitter: Option<(&JitterConfig, usize)>,
) -> Vec<ProposalSample> {
    let mut samples = Vec::new();
    for &scene_index in scene_indices {
        let mut drafts = scene_drafts(dataset, scene_index, cfg);
        if let Some((jcfg, copies)) = jitter {
            // Per-scene jitter stream so augmentation is order-independent.
            let scene_cfg = JitterConfig {
                seed: derive_seed(jcfg.seed, dataset.scenes[scene_index].scene_id),
                ..*jcfg
            };
            drafts = jitter_dataset(&drafts, &scene_cfg, copies);
        }
        samples.extend(pool_scene(dataset, scene_index, &drafts, cfg));
    }
    samples
}

/// How aligned boxes are produced during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Head(&'a AlignHeadParams),
    /// Ground-truth deviations plumbed straight through decode.
    Oracle,
}

/// Mean before/after alignment quality over the selected scenes.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    pub objects: usize,
    pub center_before: f64,
    pub center_after: f64,
    pub size_before: f64,
    pub size_after: f64,
    pub angle_before_deg: f64,
    pub angle_after_deg: f64,
    pub iou_before: f64,
    pub iou_after: f64,
    pub map_before: f64,
    pub map_after: f64,
    /// Aligned boxes as detections (confidence 1.0) against the true sensed
    /// boxes, for export.
    pub aligned: Vec<Detection>,
    pub truths: Vec<GroundTruth>,
}

impl AlignmentReport {
    /// CSV rows `metric,before,after`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,before,after\n");
        out.push_str(&format!(
            "center_error_px,{},{}\n",
            self.center_before, self.center_after
        ));
        out.push_str(&format!(
            "size_error_px,{},{}\n",
            self.size_before, self.size_after
        ));
        out.push_str(&format!(
            "angle_error_deg,{},{}\n",
            self.angle_before_deg, self.angle_after_deg
        ));
        out.push_str(&format!("mean_iou,{},{}\n", self.iou_before, self.iou_after));
        out.push_str(&format!("map,{},{}\n", self.map_before, self.map_after));
        out
    }
}

/// Runs alignment over the selected scenes and reports mean center/size/
/// angle errors, IoU and rotated mAP at `iou_thresh` (0.5 is the usual
/// protocol), before vs after.
pub fn evaluate_alignment(
    dataset: &Dataset,
    scene_indices: &[usize],
    predictor: Predictor<'_>,
    cfg: &PipelineConfig,
    iou_thresh: f64,
) -> Result<AlignmentReport, AlignError> {
    let mut objects = 0usize;
    let mut sums = [0.0f64; 8]; // center b/a, size b/a, angle b/a, iou b/a
    let mut before_dets = Vec::new();
    let mut aligned = Vec::new();
    let mut truths = Vec::new();
    for &scene_index in scene_indices {
        let scene = &dataset.scenes[scene_index];
        let drafts = scene_drafts(dataset, scene_index, cfg);
        let samples = pool_scene(dataset, scene_index, &drafts, cfg);
        for (draft, sample) in drafts.iter().zip(samples.iter()) {
            let Some(true_sensed) = draft.true_sensed else {
                continue;
            };
            let aligned_box = match predictor {
                Predictor::Oracle => decode(
                    &draft.proposal,
                    draft.target.as_ref().expect("positive draft"),
                    RotationMode::Standard,
                )?,
                Predictor::Head(params) => {
                    let pred = params.forward(&sample.phi_r, &sample.phi_s)?;
                    decode(
                        &draft.proposal,
                        &predicted_to_codec(&pred),
                        RotationMode::Standard,
                    )?
                }
            };
            let center = |a: &RotatedBox, b: &RotatedBox| {
                ((a.cx() - b.cx()).powi(2) + (a.cy() - b.cy()).powi(2)).sqrt()
            };
            let size = |a: &RotatedBox, b: &RotatedBox| {
                0.5 * ((a.w() - b.w()).abs() + (a.h() - b.h()).abs())
            };
            let angle = |a: &RotatedBox, b: &RotatedBox| {
                angle_difference(a.theta(), b.theta()).to_degrees()
            };
            sums[0] += center(&draft.proposal, &true_sensed);
            sums[1] += center(&aligned_box, &true_sensed);
            sums[2] += size(&draft.proposal, &true_sensed);
            sums[3] += size(&aligned_box, &true_sensed);
            sums[4] += angle(&draft.proposal, &true_sensed);
            sums[5] += angle(&aligned_box, &true_sensed);
            sums[6] += rotated_iou(&draft.proposal, &true_sensed);
            sums[7] += rotated_iou(&aligned_box, &true_sensed);
            objects += 1;
            before_dets.push(Detection {
                image_id: scene.scene_id,
                class_id: draft.class_id,
                bbox: draft.proposal,
                confidence: 1.0,
            });
            aligned.push(Detection {
                image_id: scene.scene_id,
                class_id: draft.class_id,
                bbox: aligned_box,
                confidence: 1.0,
            });
            truths.push(GroundTruth {
                image_id: scene.scene_id,
                class_id: draft.class_id,
                bbox: true_sensed,
            });
        }
    }
    let n = objects.max(1) as f64;
    let mut classes: Vec<u32> = truths.iter().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let (map_before, _) = if classes.is_empty() {
        (0.0, vec![])
    } else {
        mean_ap(&before_dets, &truths, &classes, iou_thresh)
    };
    let (map_after, _) = if classes.is_empty() {
        (0.0, vec![])
    } else {
        mean_ap(&aligned, &truths, &classes, iou_thresh)
    };
    Ok(AlignmentReport {
        objects,
        center_before: sums[0] / n,
        center_after: sums[1] / n,
        size_before: sums[2] / n,
        size_after: sums[3] / n,
        angle_before_deg: sums[4] / n,
        angle_after_deg: sums[5] / n,
        iou_before: sums[6] / n,
        iou_after: sums[7] / n,
        map_before,
        map_after,
        aligned,
        truths,
    })
}
