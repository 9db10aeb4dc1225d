//! Rotated RoIAlign: bilinear sampling of a fixed grid laid out in a rotated
//! box's local frame, plus the element-wise ops used to combine pooled
//! features.
//!
//! Coordinate model: pixel `(ix, iy)` has its center at continuous
//! `(ix + 0.5, iy + 0.5)`; bilinear samples interpolate between pixel
//! centers and out-of-image neighbors contribute 0 (zero padding).

use crate::geometry::RotatedBox;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PoolingError {
    #[error("output size and sampling ratio must be positive")]
    InvalidSize,
    #[error("shape mismatch: {a} vs {b}")]
    ShapeMismatch { a: String, b: String },
}

/// Dense C×H×W feature grid, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut fm = Self::new(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    fm.data[(c * height + y) * width + x] = f(c, x, y);
                }
            }
        }
        fm
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    #[inline]
    pub fn add(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] += v;
    }

    /// Pixel value with zero padding outside the image.
    #[inline]
    fn at_padded(&self, c: usize, ix: i64, iy: i64) -> f64 {
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            0.0
        } else {
            self.data[(c * self.height + iy as usize) * self.width + ix as usize]
        }
    }

    /// Bilinear sample at continuous `(x, y)` under the pixel-center model.
    #[inline]
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> f64 {
        let gx = x - 0.5;
        let gy = y - 0.5;
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = self.at_padded(c, x0, y0);
        let v10 = self.at_padded(c, x0 + 1, y0);
        let v01 = self.at_padded(c, x0, y0 + 1);
        let v11 = self.at_padded(c, x0 + 1, y0 + 1);
        v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
    }
}

/// C×S×S pooled region feature.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    channels: usize,
    size: usize,
    data: Vec<f64>,
}

impl PooledFeature {
    pub fn new(channels: usize, size: usize) -> Self {
        Self {
            channels,
            size,
            data: vec![0.0; channels * size * size],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn size(&self) -> usize {
        self.size
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.size + row) * self.size + col]
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.size == other.size
    }

    fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.size, self.size)
    }
}

/// Pools an `out_size`² grid from `fm` over `bbox`, averaging
/// `sampling_ratio`² bilinear samples per cell.
///
/// Output cell `(row, col)` covers the local rectangle with `col` indexing
/// the box's `w` axis (the `theta` direction) and `row` its `h` axis; data
/// layout is `c * S * S + row * S + col`.
pub fn rotated_roi_align(
    fm: &FeatureMap,
    bbox: &RotatedBox,
    out_size: usize,
    sampling_ratio: usize,
) -> Result<PooledFeature, PoolingError> {
    if out_size == 0 || sampling_ratio == 0 {
        return Err(PoolingError::InvalidSize);
    }
    let s = out_size;
    let sr = sampling_ratio;
    let (sin_t, cos_t) = bbox.theta().sin_cos();
    let cell_w = bbox.w() / s as f64;
    let cell_h = bbox.h() / s as f64;
    let inv = 1.0 / (sr * sr) as f64;
    let mut out = PooledFeature::new(fm.channels(), s);
    for c in 0..fm.channels() {
        for row in 0..s {
            for col in 0..s {
                let mut acc = 0.0;
                for a in 0..sr {
                    for b in 0..sr {
                        let u = -0.5 * bbox.w() + (col as f64 + (a as f64 + 0.5) / sr as f64) * cell_w;
                        let v = -0.5 * bbox.h() + (row as f64 + (b as f64 + 0.5) / sr as f64) * cell_h;
                        let x = bbox.cx() + u * cos_t - v * sin_t;
                        let y = bbox.cy() + u * sin_t + v * cos_t;
                        acc += fm.sample_bilinear(c, x, y);
                    }
                }
                out.data[(c * s + row) * s + col] = acc * inv;
            }
        }
    }
    Ok(out)
}

/// Element-wise `a - b`.
pub fn subtract(a: &PooledFeature, b: &PooledFeature) -> Result<PooledFeature, PoolingError> {
    if !a.same_shape(b) {
        return Err(PoolingError::ShapeMismatch {
            a: a.shape_string(),
            b: b.shape_string(),
        });
    }
    let mut out = a.clone();
    for (o, v) in out.data.iter_mut().zip(b.data.iter()) {
        *o -= v;
    }
    Ok(out)
}

/// Element-wise sum of the reference feature and the re-pooled, aligned
/// sensed feature.
pub fn fuse(
    reference: &PooledFeature,
    aligned_sensed: &PooledFeature,
) -> Result<PooledFeature, PoolingError> {
    if !reference.same_shape(aligned_sensed) {
        return Err(PoolingError::ShapeMismatch {
            a: reference.shape_string(),
            b: aligned_sensed.shape_string(),
        });
    }
    let mut out = reference.clone();
    for (o, v) in out.data.iter_mut().zip(aligned_sensed.data.iter()) {
        *o += v;
    }
    Ok(out)
}
