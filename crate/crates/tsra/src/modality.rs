//! Modality selection: score each modality's annotation quality by counting
//! binarized pixels, then take the higher-scoring annotation as the
//! reference box for alignment.
//!
//! For one annotation the pipeline is: extend the box (to include the full
//! object), crop that region, Otsu-binarize the crop, and score
//!
//! ```text
//! S = 0.5 * n / N_object + 0.5 * n / N_bbox
//! ```
//!
//! with `n` the white pixels inside the original box, `N_object` the white
//! pixels in the whole crop and `N_bbox` the pixel footprint of the original
//! box. A perfectly tight annotation around a bright object scores 1.
//!
//! Pixel membership uses the point-in-polygon test at pixel centers
//! `(x + 0.5, y + 0.5)` — the same convention the rest of the crate uses.

pub use crate::image::GrayImage;

use crate::geometry::{corners, Polygon, RotatedBox};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModalityError {
    #[error("extended box does not intersect the image")]
    EmptyCrop,
}

/// Whether objects are expected to binarize white (bright) or black (dark).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Polarity {
    #[default]
    Bright,
    Dark,
}

/// Pixel counts and the resulting quality score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsScore {
    /// White pixels inside the original box.
    pub n: usize,
    /// White pixels in the whole extended crop.
    pub n_object: usize,
    /// Total pixel footprint of the original box.
    pub n_bbox: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceChoice {
    Rgb,
    Ir,
}

/// Scales both extents by `factor`, keeping center and angle.
pub fn extend_box(bbox: &RotatedBox, factor: f64) -> RotatedBox {
    debug_assert!(factor >= 1.0 && factor.is_finite());
    RotatedBox::new(
        bbox.cx(),
        bbox.cy(),
        bbox.w() * factor,
        bbox.h() * factor,
        bbox.theta(),
    )
    .expect("scaling a valid box by >= 1 keeps it valid")
}

/// Otsu threshold over a 256-bin histogram: the cut maximizing between-class
/// variance, with classes `<= t` and `> t`. Returns `None` for single-level
/// histograms.
fn otsu_threshold(hist: &[u64; 256], total: u64) -> Option<u8> {
    if total == 0 {
        return None;
    }
    let sum_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    let mut w_b = 0.0;
    let mut sum_b = 0.0;
    let mut best_var = -1.0;
    let mut best_t = None;
    for (t, &count) in hist.iter().enumerate().take(255) {
        w_b += count as f64;
        if w_b == 0.0 {
            continue;
        }
        let w_f = total as f64 - w_b;
        if w_f == 0.0 {
            break;
        }
        sum_b += t as f64 * count as f64;
        let m_b = sum_b / w_b;
        let m_f = (sum_total - sum_b) / w_f;
        let var = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if var > best_var {
            best_var = var;
            best_t = Some(t as u8);
        }
    }
    best_t
}

/// Binarizes a whole image with Otsu's threshold: pixels above the threshold
/// become 255, the rest 0. Constant images become all 0.
pub fn binarize_otsu(img: &GrayImage) -> GrayImage {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let mut out = GrayImage::new(img.width(), img.height());
    let Some(t) = otsu_threshold(&hist, img.pixels().len() as u64) else {
        return out;
    };
    for (o, &p) in out.pixels_mut().iter_mut().zip(img.pixels()) {
        *o = if p > t { 255 } else { 0 };
    }
    out
}

/// Pixel coordinates (in image bounds) whose centers lie inside the polygon.
fn pixels_inside(img: &GrayImage, poly: &Polygon) -> Vec<(usize, usize)> {
    let (x0, y0, x1, y1) = poly.bounds();
    let xs = x0.floor().max(0.0) as usize;
    let ys = y0.floor().max(0.0) as usize;
    let xe = (x1.ceil() as i64).clamp(0, img.width() as i64) as usize;
    let ye = (y1.ceil() as i64).clamp(0, img.height() as i64) as usize;
    let mut out = Vec::new();
    for y in ys..ye {
        for x in xs..xe {
            if poly.contains([x as f64 + 0.5, y as f64 + 0.5]) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Scores one annotation with the default bright-object polarity.
pub fn ms_score(
    img: &GrayImage,
    bbox: &RotatedBox,
    extend_factor: f64,
) -> Result<MsScore, ModalityError> {
    ms_score_with_polarity(img, bbox, extend_factor, Polarity::Bright)
}

pub fn ms_score_with_polarity(
    img: &GrayImage,
    bbox: &RotatedBox,
    extend_factor: f64,
    polarity: Polarity,
) -> Result<MsScore, ModalityError> {
    let crop_poly = corners(&extend_box(bbox, extend_factor));
    let crop = pixels_inside(img, &crop_poly);
    if crop.is_empty() {
        return Err(ModalityError::EmptyCrop);
    }
    let mut hist = [0u64; 256];
    let value = |x: usize, y: usize| match polarity {
        Polarity::Bright => img.get(x, y),
        Polarity::Dark => 255 - img.get(x, y),
    };
    for &(x, y) in &crop {
        hist[value(x, y) as usize] += 1;
    }
    let threshold = otsu_threshold(&hist, crop.len() as u64);
    let inner = corners(bbox);
    let mut n = 0usize;
    let mut n_object = 0usize;
    let mut n_bbox = 0usize;
    for &(x, y) in &crop {
        let white = threshold.is_some_and(|t| value(x, y) > t);
        let in_original = inner.contains([x as f64 + 0.5, y as f64 + 0.5]);
        if white {
            n_object += 1;
            if in_original {
                n += 1;
            }
        }
        if in_original {
            n_bbox += 1;
        }
    }
    let score = if n_object == 0 || n_bbox == 0 {
        0.0
    } else {
        0.5 * n as f64 / n_object as f64 + 0.5 * n as f64 / n_bbox as f64
    };
    Ok(MsScore {
        n,
        n_object,
        n_bbox,
        score,
    })
}

/// Scores both modalities and picks the reference annotation; exact ties go
/// to infrared.
pub fn select_reference(
    rgb_img: &GrayImage,
    ir_img: &GrayImage,
    b_rgb: &RotatedBox,
    b_ir: &RotatedBox,
    extend_factor: f64,
) -> Result<(ReferenceChoice, MsScore, MsScore), ModalityError> {
    let s_rgb = ms_score(rgb_img, b_rgb, extend_factor)?;
    let s_ir = ms_score(ir_img, b_ir, extend_factor)?;
    let choice = if s_rgb.score > s_ir.score {
        ReferenceChoice::Rgb
    } else {
        ReferenceChoice::Ir
    };
    Ok((choice, s_rgb, s_ir))
}
