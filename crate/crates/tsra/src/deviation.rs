//! The five-component deviation codec between a reference and a sensed
//! rotated box, plus the smooth-L1 penalty its regression loss is built on.
//!
//! The encoding is: translation in the reference box frame normalized by the
//! reference extents, natural-log size ratios, and the angle difference in
//! turns (`[0, 1)`):
//!
//! ```text
//! tx = ((xs - xr) cos θr + (ys - yr) sin θr) / wr
//! ty = ((ys - yr) cos θr - (xs - xr) sin θr) / hr      (Standard mode)
//! sw = ln(ws / wr),  sh = ln(hs / hr)
//! rθ = ((θs - θr) mod 2π) / 2π
//! ```
//!
//! `Symmetric` mode replaces the `ty` row with
//! `((ys - yr) cos θr + (xs - xr) sin θr) / hr` — a non-orthogonal map that
//! is singular where |cos θr| = |sin θr|, which is why `Standard` is the
//! default and the singular band raises [`DeviationError::SingularEncoding`].

use crate::geometry::{normalize_angle, GeometryError, RotatedBox};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};
use thiserror::Error;

/// Half-width of the rejected band around `θr = π/4 + kπ/2` in Symmetric
/// mode.
pub const SINGULARITY_GUARD: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DeviationError {
    #[error("symmetric-mode encoding is singular near theta_r = pi/4 + k*pi/2 (theta_r = {theta_r})")]
    SingularEncoding { theta_r: f64 },
    #[error("deviation component {component} is not finite")]
    NonFinite { component: &'static str },
    #[error("decoded box is degenerate: {0}")]
    Degenerate(#[from] GeometryError),
}

/// Which translation rows to use in [`encode`]/[`decode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RotationMode {
    /// Orthogonal rotation of the center offset into the reference frame.
    #[default]
    Standard,
    /// The symmetric-matrix variant with `+sin` in both rows; invertible
    /// only away from the singular band. Kept for comparison experiments.
    Symmetric,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct DeviationFields {
    tx: f64,
    ty: f64,
    sw: f64,
    sh: f64,
    rtheta: f64,
}

/// Reference→sensed offset: normalized translation, log size ratios, angle
/// in turns. `rtheta` is kept in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DeviationFields", into = "DeviationFields")]
pub struct Deviation {
    pub tx: f64,
    pub ty: f64,
    pub sw: f64,
    pub sh: f64,
    rtheta: f64,
}

impl TryFrom<DeviationFields> for Deviation {
    type Error = DeviationError;
    fn try_from(f: DeviationFields) -> Result<Self, Self::Error> {
        Deviation::new(f.tx, f.ty, f.sw, f.sh, f.rtheta)
    }
}

impl From<Deviation> for DeviationFields {
    fn from(d: Deviation) -> Self {
        DeviationFields {
            tx: d.tx,
            ty: d.ty,
            sw: d.sw,
            sh: d.sh,
            rtheta: d.rtheta,
        }
    }
}

impl Deviation {
    /// Builds a deviation, wrapping `rtheta` into `[0, 1)`.
    pub fn new(tx: f64, ty: f64, sw: f64, sh: f64, rtheta: f64) -> Result<Self, DeviationError> {
        for (v, name) in [
            (tx, "tx"),
            (ty, "ty"),
            (sw, "sw"),
            (sh, "sh"),
            (rtheta, "rtheta"),
        ] {
            if !v.is_finite() {
                return Err(DeviationError::NonFinite { component: name });
            }
        }
        Ok(Self {
            tx,
            ty,
            sw,
            sh,
            rtheta: wrap_turns(rtheta),
        })
    }

    pub fn zero() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            sw: 0.0,
            sh: 0.0,
            rtheta: 0.0,
        }
    }

    pub fn rtheta(&self) -> f64 {
        self.rtheta
    }

    /// Angle channel recentred to `(-0.5, 0.5]` turns; a zero rotation maps
    /// to 0 rather than sitting at the 0/1 wraparound.
    pub fn rtheta_centered(&self) -> f64 {
        if self.rtheta > 0.5 {
            self.rtheta - 1.0
        } else {
            self.rtheta
        }
    }

    pub fn components(&self) -> [f64; 5] {
        [self.tx, self.ty, self.sw, self.sh, self.rtheta]
    }
}

/// Wraps turns into `[0, 1)`.
#[inline]
pub fn wrap_turns(r: f64) -> f64 {
    let w = r.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn near_symmetric_singularity(theta_r: f64) -> bool {
    let m = (theta_r - FRAC_PI_4).rem_euclid(FRAC_PI_2);
    m.min(FRAC_PI_2 - m) < SINGULARITY_GUARD
}

fn guard_mode(mode: RotationMode, theta_r: f64) -> Result<(), DeviationError> {
    if mode == RotationMode::Symmetric && near_symmetric_singularity(theta_r) {
        return Err(DeviationError::SingularEncoding { theta_r });
    }
    Ok(())
}

/// Encodes the reference→sensed offset as a [`Deviation`].
pub fn encode(
    reference: &RotatedBox,
    sensed: &RotatedBox,
    mode: RotationMode,
) -> Result<Deviation, DeviationError> {
    guard_mode(mode, reference.theta())?;
    let (s, c) = reference.theta().sin_cos();
    let dx = sensed.cx() - reference.cx();
    let dy = sensed.cy() - reference.cy();
    let tx = (dx * c + dy * s) / reference.w();
    let ty = match mode {
        RotationMode::Standard => (dy * c - dx * s) / reference.h(),
        RotationMode::Symmetric => (dy * c + dx * s) / reference.h(),
    };
    let sw = (sensed.w() / reference.w()).ln();
    let sh = (sensed.h() / reference.h()).ln();
    let rtheta = normalize_angle(sensed.theta() - reference.theta()) / TAU;
    Deviation::new(tx, ty, sw, sh, rtheta)
}

/// Applies a deviation to the reference box; exact inverse of [`encode`].
pub fn decode(
    reference: &RotatedBox,
    dev: &Deviation,
    mode: RotationMode,
) -> Result<RotatedBox, DeviationError> {
    guard_mode(mode, reference.theta())?;
    let (s, c) = reference.theta().sin_cos();
    let u = dev.tx * reference.w();
    let v = dev.ty * reference.h();
    let (dx, dy) = match mode {
        RotationMode::Standard => (u * c - v * s, u * s + v * c),
        RotationMode::Symmetric => {
            let det = c * c - s * s;
            ((u * c - v * s) / det, (v * c - u * s) / det)
        }
    };
    Ok(RotatedBox::new(
        reference.cx() + dx,
        reference.cy() + dy,
        reference.w() * dev.sw.exp(),
        reference.h() * dev.sh.exp(),
        reference.theta() + dev.rtheta * TAU,
    )?)
}

/// Smooth-L1 penalty: `0.5 x^2 / beta` for `|x| < beta`, else `|x| - beta/2`.
#[inline]
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1`] with respect to `x`.
#[inline]
pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}
