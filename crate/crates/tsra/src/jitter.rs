//! Gaussian jitter on sensed proposals: translation as a fraction of the
//! extents, multiplicative log-normal size noise, additive angle noise.
//!
//! Jittering a proposal changes where features are pooled *and* what the
//! encoded target is, so [`jitter_dataset`] re-encodes each variant's target
//! against the jittered proposal — decoding that target still lands on the
//! original true sensed box.
//!
//! Draw order per box: x, y, w, h, theta (one Box–Muller normal each), so a
//! jitter stream can be reproduced from the seed alone.

use crate::deviation::{encode, RotationMode};
use crate::geometry::RotatedBox;
use crate::pipeline::ProposalDraft;
use crate::rng::{derive_seed, SplitMix64};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct JitterConfig {
    /// Center noise as a fraction of `w` / `h`.
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Log-scale size noise: `w *= exp(N(0, sigma_w^2))`.
    pub sigma_w: f64,
    pub sigma_h: f64,
    /// Angle noise in radians.
    pub sigma_theta: f64,
    pub seed: u64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            sigma_x: 0.05,
            sigma_y: 0.05,
            sigma_w: 0.05,
            sigma_h: 0.05,
            sigma_theta: 0.05,
            seed: 0,
        }
    }
}

/// One jittered copy of a box. Multiplicative size noise keeps `w, h > 0`
/// structurally.
pub fn jitter_box(bbox: &RotatedBox, cfg: &JitterConfig, rng: &mut SplitMix64) -> RotatedBox {
    let cx = bbox.cx() + rng.normal_scaled(cfg.sigma_x) * bbox.w();
    let cy = bbox.cy() + rng.normal_scaled(cfg.sigma_y) * bbox.h();
    let w = bbox.w() * rng.normal_scaled(cfg.sigma_w).exp();
    let h = bbox.h() * rng.normal_scaled(cfg.sigma_h).exp();
    let theta = bbox.theta() + rng.normal_scaled(cfg.sigma_theta);
    RotatedBox::new(cx, cy, w, h, theta).expect("jittered box stays valid")
}

/// Expands each positive draft into `copies` jittered variants (negatives
/// pass through unchanged). Targets are re-encoded against the jittered
/// proposal. Per-draft rng streams are derived from `cfg.seed` and the draft
/// index, so augmentation order never changes the output.
pub fn jitter_dataset(
    drafts: &[ProposalDraft],
    cfg: &JitterConfig,
    copies: usize,
) -> Vec<ProposalDraft> {
    assert!(copies >= 1, "copies must be at least 1");
    let mut out = Vec::with_capacity(drafts.len() * copies);
    for (idx, draft) in drafts.iter().enumerate() {
        if !draft.positive() {
            out.push(draft.clone());
            continue;
        }
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, idx as u64));
        for _ in 0..copies {
            let proposal = jitter_box(&draft.proposal, cfg, &mut rng);
            let true_sensed = draft.true_sensed.expect("positive draft has a sensed box");
            let target = encode(&proposal, &true_sensed, RotationMode::Standard)
                .expect("jittered proposal encodes");
            let mut v = draft.clone();
            v.proposal = proposal;
            v.target = Some(target);
            out.push(v);
        }
    }
    out
}
