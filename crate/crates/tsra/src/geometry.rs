//! Rotated-rectangle algebra: corners, areas, exact IoU via convex polygon
//! clipping, and a supersampled raster oracle used to cross-check the exact
//! path in tests.
//!
//! Angle convention: `theta` is measured counter-clockwise from the +x axis
//! and `w` is the extent along the `theta` direction. Angles are stored
//! normalized to `[0, 2π)`.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::TAU;
use thiserror::Error;

/// Extents below this are rejected at construction; they would make the
/// polygon clipper operate on (near-)degenerate quads.
pub const MIN_EXTENT: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box extents must be finite and > {MIN_EXTENT} (got w={w}, h={h})")]
    DegenerateExtent { w: f64, h: f64 },
    #[error("box center/angle must be finite (cx={cx}, cy={cy}, theta={theta})")]
    NonFinite { cx: f64, cy: f64, theta: f64 },
}

/// Normalizes an angle to `[0, 2π)`. Idempotent.
#[inline]
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Absolute angular difference folded to `[0, π]`.
#[inline]
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct BoxFields {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

/// Oriented rectangle: center `(cx, cy)`, extents `(w, h)`, rotation `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxFields", into = "BoxFields")]
pub struct RotatedBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl TryFrom<BoxFields> for RotatedBox {
    type Error = GeometryError;
    fn try_from(f: BoxFields) -> Result<Self, Self::Error> {
        RotatedBox::new(f.cx, f.cy, f.w, f.h, f.theta)
    }
}

impl From<RotatedBox> for BoxFields {
    fn from(b: RotatedBox) -> Self {
        BoxFields {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            theta: b.theta,
        }
    }
}

impl RotatedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self, GeometryError> {
        if !(w.is_finite() && h.is_finite()) || w <= MIN_EXTENT || h <= MIN_EXTENT {
            return Err(GeometryError::DegenerateExtent { w, h });
        }
        if !(cx.is_finite() && cy.is_finite() && theta.is_finite()) {
            return Err(GeometryError::NonFinite { cx, cy, theta });
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::new(self.cx + dx, self.cy + dy, self.w, self.h, self.theta)
    }

    /// Rotates the box rigidly by `phi` about the pivot `(px, py)`.
    pub fn rotated_about(&self, px: f64, py: f64, phi: f64) -> Result<Self, GeometryError> {
        let (s, c) = phi.sin_cos();
        let dx = self.cx - px;
        let dy = self.cy - py;
        Self::new(
            px + dx * c - dy * s,
            py + dx * s + dy * c,
            self.w,
            self.h,
            self.theta + phi,
        )
    }
}

/// Convex polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    /// Builds a polygon, reversing the vertex order if needed so the signed
    /// area is non-negative.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Self {
        if shoelace(&vertices) < 0.0 {
            vertices.reverse();
        }
        Self { vertices }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Point containment for a convex CCW polygon; boundary points count as
    /// inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if cross(a, b, p) < 0.0 {
                return false;
            }
        }
        true
    }

    /// Axis-aligned bounding box as `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo[0], lo[1], hi[0], hi[1])
    }
}

fn shoelace(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

/// 2-D cross product of (b - a) and (p - a).
#[inline]
fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// The four corners in counter-clockwise order. Vertex 0 is the local
/// `(+w/2, +h/2)` corner rotated by `theta` about the center.
pub fn corners(b: &RotatedBox) -> Polygon {
    let (s, c) = b.theta.sin_cos();
    let hw = 0.5 * b.w;
    let hh = 0.5 * b.h;
    let local = [[hw, hh], [-hw, hh], [-hw, -hh], [hw, -hh]];
    let vertices = local
        .iter()
        .map(|[u, v]| [b.cx + u * c - v * s, b.cy + u * s + v * c])
        .collect();
    // Local order is already CCW and rotation preserves orientation.
    Polygon { vertices }
}

/// Clips `subject` to the interior of convex CCW polygon `clip`
/// (Sutherland–Hodgman, one half-plane pass per clip edge).
pub fn clip_convex(subject: &Polygon, clip: &Polygon) -> Polygon {
    let mut out = subject.vertices.clone();
    let cv = &clip.vertices;
    let n = cv.len();
    for i in 0..n {
        if out.len() < 3 {
            return Polygon { vertices: vec![] };
        }
        let a = cv[i];
        let b = cv[(i + 1) % n];
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let s = input[j];
            let e = input[(j + 1) % m];
            let sc = cross(a, b, s);
            let ec = cross(a, b, e);
            let s_in = sc >= 0.0;
            let e_in = ec >= 0.0;
            match (s_in, e_in) {
                (true, true) => out.push(e),
                (true, false) => {
                    push_intersection(&mut out, s, e, sc, ec);
                }
                (false, true) => {
                    push_intersection(&mut out, s, e, sc, ec);
                    out.push(e);
                }
                (false, false) => {}
            }
        }
    }
    Polygon { vertices: out }
}

fn push_intersection(out: &mut Vec<[f64; 2]>, s: [f64; 2], e: [f64; 2], sc: f64, ec: f64) {
    let denom = sc - ec;
    if denom.abs() > 1e-300 {
        let t = sc / denom;
        out.push([s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]);
    }
}

fn box_order(a: &RotatedBox, b: &RotatedBox) -> Ordering {
    [a.cx, a.cy, a.w, a.h, a.theta]
        .iter()
        .zip([b.cx, b.cy, b.w, b.h, b.theta].iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Exact intersection-over-union of two rotated boxes via convex clipping.
///
/// The argument pair is put in a canonical order first, so
/// `rotated_iou(a, b)` and `rotated_iou(b, a)` are bit-identical.
pub fn rotated_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let (p, q) = match box_order(a, b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let inter = clip_convex(&corners(p), &corners(q)).area();
    if inter <= 0.0 {
        return 0.0;
    }
    let union = p.area() + q.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// The x-interval cut by the horizontal line `y` on a convex polygon, or
/// `None` when the line misses it. Half-open vertex rule avoids counting a
/// vertex crossing twice.
fn row_span(poly: &Polygon, y: f64) -> Option<(f64, f64)> {
    let v = &poly.vertices;
    let n = v.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut hits = 0usize;
    for i in 0..n {
        let p = v[i];
        let q = v[(i + 1) % n];
        if (p[1] <= y) != (q[1] <= y) {
            let t = (y - p[1]) / (q[1] - p[1]);
            let x = p[0] + t * (q[0] - p[0]);
            lo = lo.min(x);
            hi = hi.max(x);
            hits += 1;
        }
    }
    if hits >= 2 {
        Some((lo, hi))
    } else {
        None
    }
}

/// Number of cell centers `x0 + (k + 0.5) dx`, `k in [0, grid)`, that fall in
/// `[lo, hi]`.
fn cells_in_span(lo: f64, hi: f64, x0: f64, dx: f64, grid: usize) -> usize {
    if hi < lo {
        return 0;
    }
    let kmin = ((lo - x0) / dx - 0.5).ceil().max(0.0) as usize;
    let kmax = ((hi - x0) / dx - 0.5).floor();
    if kmax < 0.0 {
        return 0;
    }
    let kmax = (kmax as usize).min(grid - 1);
    if kmin > kmax {
        0
    } else {
        kmax - kmin + 1
    }
}

/// Supersampled point-in-polygon IoU estimate over the pair's joint bounding
/// box. Evaluates a `grid x grid` lattice of cell centers (row spans make
/// this O(grid) per box, the count equals the brute-force point test) and
/// converges to [`rotated_iou`] as `grid` grows. Test oracle; requires
/// `grid >= 256`.
pub fn iou_raster_oracle(a: &RotatedBox, b: &RotatedBox, grid: usize) -> f64 {
    assert!(grid >= 256, "oracle resolution must be at least 256");
    let pa = corners(a);
    let pb = corners(b);
    let (ax0, ay0, ax1, ay1) = pa.bounds();
    let (bx0, by0, bx1, by1) = pb.bounds();
    let (x0, y0) = (ax0.min(bx0), ay0.min(by0));
    let (x1, y1) = (ax1.max(bx1), ay1.max(by1));
    let dx = (x1 - x0) / grid as f64;
    let dy = (y1 - y0) / grid as f64;
    let (mut na, mut nb, mut nboth) = (0usize, 0usize, 0usize);
    for row in 0..grid {
        let y = y0 + (row as f64 + 0.5) * dy;
        let sa = row_span(&pa, y);
        let sb = row_span(&pb, y);
        if let Some((lo, hi)) = sa {
            na += cells_in_span(lo, hi, x0, dx, grid);
        }
        if let Some((lo, hi)) = sb {
            nb += cells_in_span(lo, hi, x0, dx, grid);
        }
        if let (Some((la, ha)), Some((lb, hb))) = (sa, sb) {
            nboth += cells_in_span(la.max(lb), ha.min(hb), x0, dx, grid);
        }
    }
    let union = na + nb - nboth;
    if union == 0 {
        return 0.0;
    }
    nboth as f64 / union as f64
}
