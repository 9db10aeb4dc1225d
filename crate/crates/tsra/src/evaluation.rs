//! Rotated-detection evaluation: per-class average precision at a rotated
//! IoU threshold, mean AP across classes, and the paired-annotation
//! deviation statistics tool.
//!
//! AP uses all-point interpolation: the precision envelope
//! `p(r) = max precision at recall >= r`, integrated over the recall steps.
//! Matching is greedy in confidence order (stable ties), each detection
//! taking the unmatched ground truth with the highest IoU at or above the
//! threshold within its image and class.
//!
//! Detections and ground truth travel as JSON-lines records:
//! `{"image_id":..,"class":..,"cx":..,"cy":..,"w":..,"h":..,"theta_rad":..,
//! "confidence":..}` (ground truth omits `confidence`).

use crate::geometry::{angle_difference, rotated_iou, RotatedBox};
use crate::simulator::PairedAnnotation;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
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
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: RotatedBox,
    /// In `[0, 1]`.
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: RotatedBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    image_id: u64,
    class: u32,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta_rad: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

/// Greedy one-to-one matching: detections in descending confidence order
/// (stable on ties) against unmatched ground truth of the same image and
/// class, picking the highest-IoU candidate at or above `iou_thresh`.
/// Returns a TP flag per detection, in the sorted order, plus that order.
fn match_greedy(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    iou_thresh: f64,
) -> (Vec<bool>, Vec<usize>) {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut gt_used = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for (rank, &di) in order.iter().enumerate() {
        let d = dets[di];
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if gt_used[gi] || g.image_id != d.image_id || g.class_id != d.class_id {
                continue;
            }
            let iou = rotated_iou(&d.bbox, &g.bbox);
            if iou >= iou_thresh && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            gt_used[gi] = true;
            tp[rank] = true;
        }
    }
    (tp, order)
}

/// All-point interpolated AP from TP flags (already in confidence order) and
/// the ground-truth count.
fn ap_from_flags(tp: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 || tp.is_empty() {
        return 0.0;
    }
    let mut cum_tp = 0usize;
    let mut points = Vec::with_capacity(tp.len());
    for (k, &hit) in tp.iter().enumerate() {
        if hit {
            cum_tp += 1;
        }
        let precision = cum_tp as f64 / (k + 1) as f64;
        let recall = cum_tp as f64 / gt_count as f64;
        points.push((recall, precision));
    }
    // Precision envelope from the right.
    let mut envelope = points.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(r, p) in &envelope {
        if r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

/// Average precision for one class. With no ground truth for the class the
/// AP is defined as 0 and a warning goes to stderr ([`ClassAp::gt_count`]
/// carries the count for programmatic checks).
pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    class_id: u32,
    iou_thresh: f64,
) -> f64 {
    assert!(iou_thresh > 0.0 && iou_thresh < 1.0);
    let class_dets: Vec<&Detection> = dets.iter().filter(|d| d.class_id == class_id).collect();
    let class_gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class_id == class_id).collect();
    if class_gts.is_empty() {
        eprintln!("warning: no ground truth for class {class_id}; AP defined as 0");
        return 0.0;
    }
    let (tp, _) = match_greedy(&class_dets, &class_gts, iou_thresh);
    ap_from_flags(&tp, class_gts.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class_id: u32,
    pub ap: f64,
    pub gt_count: usize,
    pub det_count: usize,
}

/// Unweighted mean of per-class AP over the given class list.
pub fn mean_ap(
    dets: &[Detection],
    gts: &[GroundTruth],
    classes: &[u32],
    iou_thresh: f64,
) -> (f64, Vec<ClassAp>) {
    assert!(!classes.is_empty(), "class list must be nonempty");
    let per_class: Vec<ClassAp> = classes
        .iter()
        .map(|&class_id| ClassAp {
            class_id,
            ap: average_precision(dets, gts, class_id, iou_thresh),
            gt_count: gts.iter().filter(|g| g.class_id == class_id).count(),
            det_count: dets.iter().filter(|d| d.class_id == class_id).count(),
        })
        .collect();
    let map = per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64;
    (map, per_class)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DeviationThresholds {
    pub pos_px: f64,
    pub size_px: f64,
    pub angle_deg: f64,
}

impl Default for DeviationThresholds {
    fn default() -> Self {
        Self {
            pos_px: 3.0,
            size_px: 3.0,
            angle_deg: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeviationCounts {
    pub total: usize,
    pub position_dev: usize,
    pub size_dev: usize,
    pub angle_dev: usize,
    /// Pairs exceeding at least one threshold.
    pub any_dev: usize,
}

impl DeviationCounts {
    fn absorb(&mut self, pos: bool, size: bool, angle: bool) {
        self.total += 1;
        self.position_dev += pos as usize;
        self.size_dev += size as usize;
        self.angle_dev += angle as usize;
        self.any_dev += (pos || size || angle) as usize;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationStats {
    pub thresholds: DeviationThresholds,
    /// Sorted by class id.
    pub per_class: Vec<(u32, DeviationCounts)>,
    pub overall: DeviationCounts,
}

impl DeviationStats {
    pub fn deviant_fraction(&self) -> f64 {
        if self.overall.total == 0 {
            0.0
        } else {
            self.overall.any_dev as f64 / self.overall.total as f64
        }
    }

    /// CSV rows `class,total,pos_dev,size_dev,angle_dev` plus an `overall`
    /// row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,total,pos_dev,size_dev,angle_dev\n");
        for (class_id, c) in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                class_id, c.total, c.position_dev, c.size_dev, c.angle_dev
            ));
        }
        let o = &self.overall;
        out.push_str(&format!(
            "overall,{},{},{},{}\n",
            o.total, o.position_dev, o.size_dev, o.angle_dev
        ));
        out
    }
}

/// Counts pairs whose two boxes differ by more than the thresholds in center
/// distance, either extent, or wrapped angle (folded to `[0, π]`). Pairs
/// missing either box are skipped.
pub fn deviation_stats(
    pairs: &[PairedAnnotation],
    thresholds: DeviationThresholds,
) -> DeviationStats {
    let mut per_class: BTreeMap<u32, DeviationCounts> = BTreeMap::new();
    let mut overall = DeviationCounts::default();
    let angle_rad = thresholds.angle_deg.to_radians();
    for pair in pairs {
        let (Some(rgb), Some(ir)) = (&pair.rgb_box, &pair.ir_box) else {
            continue;
        };
        let dist = ((rgb.cx() - ir.cx()).powi(2) + (rgb.cy() - ir.cy()).powi(2)).sqrt();
        let pos = dist > thresholds.pos_px;
        let size = (rgb.w() - ir.w()).abs() > thresholds.size_px
            || (rgb.h() - ir.h()).abs() > thresholds.size_px;
        let angle = angle_difference(rgb.theta(), ir.theta()) > angle_rad;
        per_class
            .entry(pair.class_id)
            .or_default()
            .absorb(pos, size, angle);
        overall.absorb(pos, size, angle);
    }
    DeviationStats {
        thresholds,
        per_class: per_class.into_iter().collect(),
        overall,
    }
}

fn record_to_box(rec: &BoxRecord) -> Result<RotatedBox, String> {
    RotatedBox::new(rec.cx, rec.cy, rec.w, rec.h, rec.theta_rad).map_err(|e| e.to_string())
}

pub fn write_detections_jsonl(path: &Path, dets: &[Detection]) -> Result<(), EvalError> {
    let io_err = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for d in dets {
        let rec = BoxRecord {
            image_id: d.image_id,
            class: d.class_id,
            cx: d.bbox.cx(),
            cy: d.bbox.cy(),
            w: d.bbox.w(),
            h: d.bbox.h(),
            theta_rad: d.bbox.theta(),
            confidence: Some(d.confidence),
        };
        serde_json::to_writer(&mut file, &rec).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        file.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

pub fn write_ground_truth_jsonl(path: &Path, gts: &[GroundTruth]) -> Result<(), EvalError> {
    let io_err = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for g in gts {
        let rec = BoxRecord {
            image_id: g.image_id,
            class: g.class_id,
            cx: g.bbox.cx(),
            cy: g.bbox.cy(),
            w: g.bbox.w(),
            h: g.bbox.h(),
            theta_rad: g.bbox.theta(),
            confidence: None,
        };
        serde_json::to_writer(&mut file, &rec).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        file.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<(usize, BoxRecord)>, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BoxRecord = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, rec));
    }
    Ok(out)
}

pub fn read_detections_jsonl(path: &Path) -> Result<Vec<Detection>, EvalError> {
    read_records(path)?
        .into_iter()
        .map(|(line, rec)| {
            let parse = |message: String| EvalError::Parse {
                path: path.display().to_string(),
                line,
                message,
            };
            let confidence = rec
                .confidence
                .ok_or_else(|| parse("detection record missing confidence".into()))?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(parse(format!("confidence {confidence} outside [0, 1]")));
            }
            Ok(Detection {
                image_id: rec.image_id,
                class_id: rec.class,
                bbox: record_to_box(&rec).map_err(parse)?,
                confidence,
            })
        })
        .collect()
}

pub fn read_ground_truth_jsonl(path: &Path) -> Result<Vec<GroundTruth>, EvalError> {
    read_records(path)?
        .into_iter()
        .map(|(line, rec)| {
            let parse = |message: String| EvalError::Parse {
                path: path.display().to_string(),
                line,
                message,
            };
            Ok(GroundTruth {
                image_id: rec.image_id,
                class_id: rec.class,
                bbox: record_to_box(&rec).map_err(parse)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> RotatedBox {
        RotatedBox::new(cx, cy, w, h, theta).unwrap()
    }

    fn det(image_id: u64, class_id: u32, bbox: RotatedBox, confidence: f64) -> Detection {
        Detection {
            image_id,
            class_id,
            bbox,
            confidence,
        }
    }

    fn gt(image_id: u64, class_id: u32, bbox: RotatedBox) -> GroundTruth {
        GroundTruth {
            image_id,
            class_id,
            bbox,
        }
    }

    /// Exhaustive matching oracle: enumerates every injective detection→GT
    /// assignment respecting the IoU threshold and picks the one with the
    /// most TPs (ties broken toward earlier-in-confidence TPs), then scores
    /// AP from the resulting flags.
    fn exhaustive_ap(dets: &[Detection], gts: &[GroundTruth], class_id: u32, thresh: f64) -> f64 {
        let class_dets: Vec<&Detection> = dets.iter().filter(|d| d.class_id == class_id).collect();
        let class_gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class_id == class_id).collect();
        let mut order: Vec<usize> = (0..class_dets.len()).collect();
        order.sort_by(|&a, &b| {
            class_dets[b]
                .confidence
                .total_cmp(&class_dets[a].confidence)
        });
        let feasible: Vec<Vec<usize>> = order
            .iter()
            .map(|&di| {
                class_gts
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| {
                        g.image_id == class_dets[di].image_id
                            && rotated_iou(&class_dets[di].bbox, &g.bbox) >= thresh
                    })
                    .map(|(gi, _)| gi)
                    .collect()
            })
            .collect();
        let mut best_flags: Option<Vec<bool>> = None;
        let n = order.len();
        fn search(
            k: usize,
            n: usize,
            feasible: &[Vec<usize>],
            used: &mut Vec<bool>,
            flags: &mut Vec<bool>,
            best: &mut Option<Vec<bool>>,
        ) {
            if k == n {
                let count = flags.iter().filter(|f| **f).count();
                let better = match best {
                    None => true,
                    Some(b) => {
                        let bc = b.iter().filter(|f| **f).count();
                        count > bc || (count == bc && flags > b)
                    }
                };
                if better {
                    *best = Some(flags.clone());
                }
                return;
            }
            // Option: leave detection k unmatched.
            flags.push(false);
            search(k + 1, n, feasible, used, flags, best);
            flags.pop();
            for &gi in &feasible[k] {
                if !used[gi] {
                    used[gi] = true;
                    flags.push(true);
                    search(k + 1, n, feasible, used, flags, best);
                    flags.pop();
                    used[gi] = false;
                }
            }
        }
        let mut used = vec![false; class_gts.len()];
        let mut flags = Vec::new();
        search(0, n, &feasible, &mut used, &mut flags, &mut best_flags);
        ap_from_flags(&best_flags.unwrap_or_default(), class_gts.len())
    }

    #[test]
    fn single_perfect_detection() {
        let b = bx(5.0, 5.0, 4.0, 2.0, 0.3);
        let dets = [det(0, 0, b, 0.9)];
        let gts = [gt(0, 0, b)];
        assert_eq!(average_precision(&dets, &gts, 0, 0.5), 1.0);
    }

    #[test]
    fn single_disjoint_detection() {
        let dets = [det(0, 0, bx(50.0, 50.0, 4.0, 2.0, 0.0), 0.9)];
        let gts = [gt(0, 0, bx(5.0, 5.0, 4.0, 2.0, 0.0))];
        assert_eq!(average_precision(&dets, &gts, 0, 0.5), 0.0);
    }

    #[test]
    fn three_detections_two_truths_fixture() {
        // confs 0.9 hit, 0.8 miss, 0.7 hit -> all-point AP = 0.5 + 0.5 * 2/3.
        let g1 = bx(5.0, 5.0, 4.0, 2.0, 0.0);
        let g2 = bx(20.0, 5.0, 4.0, 2.0, 0.0);
        let dets = [
            det(0, 0, g1, 0.9),
            det(0, 0, bx(40.0, 40.0, 4.0, 2.0, 0.0), 0.8),
            det(0, 0, g2, 0.7),
        ];
        let gts = [gt(0, 0, g1), gt(0, 0, g2)];
        let ap = average_precision(&dets, &gts, 0, 0.5);
        assert!((ap - 5.0 / 6.0).abs() < 1e-6, "ap {ap}");
    }

    #[test]
    fn no_ground_truth_gives_zero_ap() {
        let dets = [det(0, 3, bx(5.0, 5.0, 4.0, 2.0, 0.0), 0.9)];
        assert_eq!(average_precision(&dets, &[], 3, 0.5), 0.0);
    }

    #[test]
    fn mean_ap_over_classes() {
        let b0 = bx(5.0, 5.0, 4.0, 2.0, 0.1);
        let b1 = bx(15.0, 5.0, 4.0, 2.0, 0.4);
        let dets = [det(0, 0, b0, 0.9), det(0, 1, b1, 0.8)];
        let gts = [gt(0, 0, b0), gt(0, 1, b1)];
        let (map, per_class) = mean_ap(&dets, &gts, &[0, 1], 0.5);
        assert_eq!(map, 1.0);
        assert_eq!(per_class.len(), 2);
        // One class perfect, one empty-handed.
        let (map2, _) = mean_ap(&dets[..1], &gts, &[0, 1], 0.5);
        assert!((map2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn greedy_matches_exhaustive_on_small_fixtures() {
        // A handful of fixtures with overlapping candidates, <= 5 detections.
        let fixtures: Vec<(Vec<Detection>, Vec<GroundTruth>)> = vec![
            // Two detections competing for one GT.
            (
                vec![
                    det(0, 0, bx(5.0, 5.0, 4.0, 4.0, 0.0), 0.9),
                    det(0, 0, bx(5.5, 5.0, 4.0, 4.0, 0.0), 0.8),
                ],
                vec![gt(0, 0, bx(5.2, 5.0, 4.0, 4.0, 0.0))],
            ),
            // Crossed preferences across two GTs.
            (
                vec![
                    det(0, 0, bx(5.0, 5.0, 4.0, 4.0, 0.0), 0.9),
                    det(0, 0, bx(7.0, 5.0, 4.0, 4.0, 0.0), 0.85),
                    det(0, 0, bx(30.0, 30.0, 4.0, 4.0, 0.0), 0.8),
                ],
                vec![
                    gt(0, 0, bx(5.5, 5.0, 4.0, 4.0, 0.0)),
                    gt(0, 0, bx(6.5, 5.0, 4.0, 4.0, 0.0)),
                ],
            ),
            // Five detections, three GTs, mixed images.
            (
                vec![
                    det(0, 0, bx(5.0, 5.0, 4.0, 4.0, 0.1), 0.95),
                    det(0, 0, bx(5.4, 5.2, 4.0, 4.0, 0.1), 0.9),
                    det(1, 0, bx(5.0, 5.0, 4.0, 4.0, 0.0), 0.85),
                    det(0, 0, bx(12.0, 5.0, 4.0, 4.0, 0.0), 0.8),
                    det(1, 0, bx(40.0, 40.0, 4.0, 4.0, 0.0), 0.75),
                ],
                vec![
                    gt(0, 0, bx(5.2, 5.1, 4.0, 4.0, 0.1)),
                    gt(0, 0, bx(12.2, 5.0, 4.0, 4.0, 0.0)),
                    gt(1, 0, bx(5.1, 5.0, 4.0, 4.0, 0.0)),
                ],
            ),
        ];
        for (i, (dets, gts)) in fixtures.iter().enumerate() {
            let greedy = average_precision(dets, gts, 0, 0.5);
            let oracle = exhaustive_ap(dets, gts, 0, 0.5);
            assert!(
                (greedy - oracle).abs() < 1e-12,
                "fixture {i}: greedy {greedy} vs exhaustive {oracle}"
            );
        }
    }

    #[test]
    fn five_class_fixture_matches_hand_value() {
        // Classes 0..=2 detected perfectly, class 3 missed entirely, class 4
        // has one hit and one far false positive at higher confidence:
        // per-class AP = [1, 1, 1, 0, 0.5], mAP = 0.7.
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        for class_id in 0..3u32 {
            let b = bx(10.0 + 12.0 * class_id as f64, 5.0, 4.0, 2.0, 0.2);
            dets.push(det(0, class_id, b, 0.9));
            gts.push(gt(0, class_id, b));
        }
        gts.push(gt(0, 3, bx(10.0, 20.0, 4.0, 2.0, 0.0)));
        let b4 = bx(30.0, 20.0, 4.0, 2.0, 1.0);
        dets.push(det(0, 4, bx(50.0, 50.0, 4.0, 2.0, 0.0), 0.95));
        dets.push(det(0, 4, b4, 0.9));
        gts.push(gt(0, 4, b4));
        let (map, per_class) = mean_ap(&dets, &gts, &[0, 1, 2, 3, 4], 0.5);
        let expect = [1.0, 1.0, 1.0, 0.0, 0.5];
        for (c, want) in per_class.iter().zip(expect.iter()) {
            assert!((c.ap - want).abs() < 1e-12, "class {}: {}", c.class_id, c.ap);
        }
        assert!((map - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ap_invariant_under_monotone_confidence_transform() {
        let g1 = bx(5.0, 5.0, 4.0, 2.0, 0.0);
        let g2 = bx(20.0, 5.0, 4.0, 2.0, 0.0);
        let dets = vec![
            det(0, 0, g1, 0.9),
            det(0, 0, bx(40.0, 40.0, 4.0, 2.0, 0.0), 0.8),
            det(0, 0, g2, 0.7),
        ];
        let gts = [gt(0, 0, g1), gt(0, 0, g2)];
        let base = average_precision(&dets, &gts, 0, 0.5);
        let squashed: Vec<Detection> = dets
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.confidence = d.confidence.powi(3) * 0.5; // strictly monotone
                d
            })
            .collect();
        assert_eq!(base, average_precision(&squashed, &gts, 0, 0.5));
    }

    #[test]
    fn duplicating_detections_never_raises_ap() {
        let g1 = bx(5.0, 5.0, 4.0, 2.0, 0.0);
        let g2 = bx(20.0, 5.0, 4.0, 2.0, 0.3);
        let dets = vec![
            det(0, 0, g1, 0.9),
            det(0, 0, bx(40.0, 40.0, 4.0, 2.0, 0.0), 0.8),
            det(0, 0, g2, 0.7),
        ];
        let gts = [gt(0, 0, g1), gt(0, 0, g2)];
        let base = average_precision(&dets, &gts, 0, 0.5);
        let mut doubled = dets.clone();
        doubled.extend(dets.iter().cloned());
        let dup = average_precision(&doubled, &gts, 0, 0.5);
        assert!(dup <= base + 1e-12, "{dup} > {base}");
    }

    #[test]
    fn stats_identical_pairs_have_no_deviants() {
        let b = bx(10.0, 10.0, 8.0, 4.0, 0.5);
        let pairs = vec![PairedAnnotation::paired(1, 0, b, b)];
        let stats = deviation_stats(&pairs, DeviationThresholds::default());
        assert_eq!(stats.overall.any_dev, 0);
        assert_eq!(stats.overall.total, 1);
    }

    #[test]
    fn stats_counts_threshold_crossings() {
        let ir = bx(10.0, 10.0, 8.0, 4.0, 0.0);
        let rgb_pos = bx(14.0, 10.0, 8.0, 4.0, 0.0); // 4 px center offset
        let rgb_size = bx(10.0, 10.0, 12.0, 4.0, 0.0); // 4 px width offset
        let rgb_angle = bx(10.0, 10.0, 8.0, 4.0, 0.2); // ~11.5 degrees
        let pairs = vec![
            PairedAnnotation::paired(1, 0, rgb_pos, ir),
            PairedAnnotation::paired(2, 0, rgb_size, ir),
            PairedAnnotation::paired(3, 1, rgb_angle, ir),
            PairedAnnotation::paired(4, 1, ir, ir),
        ];
        let stats = deviation_stats(&pairs, DeviationThresholds::default());
        assert_eq!(stats.overall.total, 4);
        assert_eq!(stats.overall.position_dev, 1);
        assert_eq!(stats.overall.size_dev, 1);
        assert_eq!(stats.overall.angle_dev, 1);
        assert_eq!(stats.overall.any_dev, 3);
        assert_eq!(stats.per_class.len(), 2);
        let csv = stats.to_csv();
        assert!(csv.starts_with("class,total,pos_dev,size_dev,angle_dev\n"));
        assert!(csv.contains("overall,4,1,1,1\n"));
    }

    #[test]
    fn stats_angle_folded_to_half_circle() {
        // 2π - 0.01 apart is really 0.01 rad: not deviant at 3 degrees.
        let ir = bx(10.0, 10.0, 8.0, 4.0, 0.005);
        let rgb = bx(10.0, 10.0, 8.0, 4.0, std::f64::consts::TAU - 0.005);
        let pairs = vec![PairedAnnotation::paired(1, 0, rgb, ir)];
        let stats = deviation_stats(&pairs, DeviationThresholds::default());
        assert_eq!(stats.overall.angle_dev, 0);
    }

    #[test]
    fn jsonl_roundtrip_and_line_numbered_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dets.jsonl");
        let dets = vec![
            det(0, 2, bx(5.0, 5.0, 4.0, 2.0, 0.25), 0.9),
            det(1, 0, bx(8.0, 3.0, 5.0, 2.5, 1.5), 0.4),
        ];
        write_detections_jsonl(&path, &dets).unwrap();
        let back = read_detections_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].class_id, 2);
        assert!((back[1].confidence - 0.4).abs() < 1e-15);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"image_id\":0,\"class\":0,\"cx\":1.0,\"cy\":1.0,\"w\":2.0,\"h\":1.0,\"theta_rad\":0.0,\"confidence\":0.5}\nnot json\n",
        )
        .unwrap();
        match read_detections_jsonl(&bad) {
            Err(EvalError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
