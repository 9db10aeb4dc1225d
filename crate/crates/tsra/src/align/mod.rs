//! The alignment head: from the subtracted region feature, three separate
//! fully connected branches predict the position, size and angle deviation
//! of the sensed box relative to the reference proposal.
//!
//! Each branch is `flatten(C*S*S) -> [64, relu] -> [64, relu] -> linear`,
//! with output widths 2 (position), 2 (size) and 1 (angle). The angle output
//! is squashed by a sigmoid into `(0, 1)` turns.
//!
//! Angle channel convention: a sigmoid cannot emit 0, so the head treats
//! `0.5` as "no rotation". Training targets use the encoded angle recentred
//! to `(-0.5, 0.5]` turns and shifted by `+0.5` (see `loss`), and
//! [`align_proposal`] shifts the prediction back by `-0.5` turn before
//! decoding. An all-zero network therefore predicts the identity deviation.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use loss::{backward, deviation_loss, predicted_to_codec, target_to_head_space};
pub use train::{train, AlignTrainConfig, TrainResult};

use crate::deviation::{decode, Deviation, DeviationError, RotationMode};
use crate::geometry::RotatedBox;
use crate::pooling::{fuse, rotated_roi_align, subtract, FeatureMap, PooledFeature, PoolingError};
use crate::rng::SplitMix64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("input dimension {got} does not match head input dimension {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Pooling(#[from] PoolingError),
    #[error(transparent)]
    Deviation(#[from] DeviationError),
}

/// One fully connected layer, weights in row-major `out x in` order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weights.iter_mut() {
            *w = rng.uniform(-bound, bound);
        }
        layer
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input.iter()) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

/// One prediction branch: a stack of dense layers, relu between them, linear
/// at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub layers: Vec<DenseLayer>,
}

impl Branch {
    fn init(input_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        Self {
            layers: vec![
                DenseLayer::init(input_dim, hidden_dim, rng),
                DenseLayer::init(hidden_dim, hidden_dim, rng),
                DenseLayer::init(hidden_dim, out_dim, rng),
            ],
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    /// Forward pass returning the raw (pre-squash) outputs.
    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// Parameters of the three prediction branches.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignHeadParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub position: Branch,
    pub size: Branch,
    pub angle: Branch,
}

impl AlignHeadParams {
    /// Seeded initialization: weights uniform in `(-1/sqrt(fan_in),
    /// +1/sqrt(fan_in))`, biases zero. Branch draw order is position, size,
    /// angle; within a branch, layer by layer, row-major.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self {
            input_dim,
            hidden_dim,
            position: Branch::init(input_dim, hidden_dim, 2, &mut rng),
            size: Branch::init(input_dim, hidden_dim, 2, &mut rng),
            angle: Branch::init(input_dim, hidden_dim, 1, &mut rng),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            position: self.position.zeros_like(),
            size: self.size.zeros_like(),
            angle: self.angle.zeros_like(),
        }
    }

    pub fn branches(&self) -> [&Branch; 3] {
        [&self.position, &self.size, &self.angle]
    }

    /// All parameter tensors in a fixed order (per branch: weights then bias,
    /// layer by layer). The optimizer and checkpoint I/O rely on this order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for b in [&self.position, &self.size, &self.angle] {
            for l in &b.layers {
                out.push(l.weights.as_slice());
                out.push(l.bias.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for b in [&mut self.position, &mut self.size, &mut self.angle] {
            for l in &mut b.layers {
                out.push(&mut l.weights);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a digest over the parameter bit patterns; used by the
    /// reproducibility checks.
    pub fn digest(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for t in self.tensors() {
            for v in t {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x1000_0000_01b3);
                }
            }
        }
        hash
    }

    /// Predicted deviation for a reference/sensed feature pair.
    ///
    /// The input is `flatten(phi_s - phi_r)`; the angle output is
    /// `sigmoid(z)` in turns, so it lies in `(0, 1)` with `0.5` meaning "no
    /// rotation" (see the module docs).
    pub fn forward(
        &self,
        phi_r: &PooledFeature,
        phi_s: &PooledFeature,
    ) -> Result<Deviation, AlignError> {
        let phi_d = subtract(phi_s, phi_r)?;
        self.forward_flat(phi_d.data())
    }

    pub fn forward_flat(&self, phi_d: &[f64]) -> Result<Deviation, AlignError> {
        if phi_d.len() != self.input_dim {
            return Err(AlignError::ShapeMismatch {
                got: phi_d.len(),
                want: self.input_dim,
            });
        }
        let pos = self.position.forward(phi_d);
        let size = self.size.forward(phi_d);
        let angle = self.angle.forward(phi_d);
        Ok(
            Deviation::new(pos[0], pos[1], size[0], size[1], sigmoid(angle[0]))
                .expect("finite head outputs"),
        )
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One training/evaluation sample: pooled reference and sensed features plus
/// the encoded ground-truth deviation for positive proposals.
#[derive(Debug, Clone)]
pub struct ProposalSample {
    pub phi_r: PooledFeature,
    pub phi_s: PooledFeature,
    pub positive: bool,
    pub target: Option<Deviation>,
}

impl ProposalSample {
    pub fn positive(phi_r: PooledFeature, phi_s: PooledFeature, target: Deviation) -> Self {
        Self {
            phi_r,
            phi_s,
            positive: true,
            target: Some(target),
        }
    }

    pub fn negative(phi_r: PooledFeature, phi_s: PooledFeature) -> Self {
        Self {
            phi_r,
            phi_s,
            positive: false,
            target: None,
        }
    }
}

/// Full alignment of one proposal: predict the deviation, decode the sensed
/// box, re-pool the sensed feature map there and fuse with the reference.
///
/// Returns the corrected sensed box and the fused feature.
pub fn align_proposal(
    params: &AlignHeadParams,
    fm_sensed: &FeatureMap,
    reference_box: &RotatedBox,
    phi_r: &PooledFeature,
    phi_s: &PooledFeature,
    mode: RotationMode,
    sampling_ratio: usize,
) -> Result<(RotatedBox, PooledFeature), AlignError> {
    let predicted = params.forward(phi_r, phi_s)?;
    let sensed_box = decode(reference_box, &predicted_to_codec(&predicted), mode)?;
    let repooled = rotated_roi_align(fm_sensed, &sensed_box, phi_r.size(), sampling_ratio)?;
    let fused = fuse(phi_r, &repooled)?;
    Ok((sensed_box, fused))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deviation::encode;
    use crate::pooling::rotated_roi_align;
    use crate::rng::SplitMix64;

    fn constant_pool(c: usize, s: usize, v: f64) -> PooledFeature {
        let mut p = PooledFeature::new(c, s);
        p.data_mut().iter_mut().for_each(|x| *x = v);
        p
    }

    fn random_pool(c: usize, s: usize, rng: &mut SplitMix64) -> PooledFeature {
        let mut p = PooledFeature::new(c, s);
        p.data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.uniform(-1.0, 1.0));
        p
    }

    #[test]
    fn zero_params_predict_identity_deviation() {
        let mut params = AlignHeadParams::init(2 * 3 * 3, 8, 0);
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let a = constant_pool(2, 3, 1.0);
        let b = constant_pool(2, 3, -0.5);
        let d = params.forward(&a, &b).unwrap();
        assert_eq!(d.tx, 0.0);
        assert_eq!(d.ty, 0.0);
        assert_eq!(d.sw, 0.0);
        assert_eq!(d.sh, 0.0);
        assert_eq!(d.rtheta(), 0.5); // sigmoid(0): "no rotation" in head space
    }

    #[test]
    fn equal_features_match_zero_input() {
        let params = AlignHeadParams::init(2 * 3 * 3, 8, 7);
        let mut rng = SplitMix64::new(1);
        let p = random_pool(2, 3, &mut rng);
        let via_pair = params.forward(&p, &p).unwrap();
        let via_zero = params.forward_flat(&[0.0; 18]).unwrap();
        assert_eq!(via_pair.components(), via_zero.components());
    }

    #[test]
    fn forward_invariant_to_common_offset() {
        let params = AlignHeadParams::init(2 * 3 * 3, 8, 9);
        let mut rng = SplitMix64::new(2);
        let a = random_pool(2, 3, &mut rng);
        let b = random_pool(2, 3, &mut rng);
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        a2.data_mut().iter_mut().for_each(|v| *v += 3.75);
        b2.data_mut().iter_mut().for_each(|v| *v += 3.75);
        let d1 = params.forward(&a, &b).unwrap();
        let d2 = params.forward(&a2, &b2).unwrap();
        for (x, y) in d1.components().iter().zip(d2.components().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_scalar_reference() {
        // Straight-line reimplementation with nested loops.
        let params = AlignHeadParams::init(8, 4, 123);
        let mut rng = SplitMix64::new(5);
        let input: Vec<f64> = (0..8).map(|_| rng.uniform(-2.0, 2.0)).collect();

        let reference_branch = |branch: &Branch, input: &[f64], squash: bool| -> Vec<f64> {
            let mut cur = input.to_vec();
            for (k, layer) in branch.layers.iter().enumerate() {
                let mut next = vec![0.0; layer.out_dim];
                #[allow(clippy::needless_range_loop)]
                for o in 0..layer.out_dim {
                    let mut acc = layer.bias[o];
                    for i in 0..layer.in_dim {
                        acc += layer.weights[o * layer.in_dim + i] * cur[i];
                    }
                    next[o] = if k < branch.layers.len() - 1 {
                        acc.max(0.0)
                    } else {
                        acc
                    };
                }
                cur = next;
            }
            if squash {
                cur.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
            }
            cur
        };

        let d = params.forward_flat(&input).unwrap();
        let pos = reference_branch(&params.position, &input, false);
        let size = reference_branch(&params.size, &input, false);
        let angle = reference_branch(&params.angle, &input, true);
        assert!((d.tx - pos[0]).abs() < 1e-9);
        assert!((d.ty - pos[1]).abs() < 1e-9);
        assert!((d.sw - size[0]).abs() < 1e-9);
        assert!((d.sh - size[1]).abs() < 1e-9);
        assert!((d.rtheta() - angle[0]).abs() < 1e-9);
    }

    #[test]
    fn predicted_rtheta_stays_in_open_unit_interval() {
        let params = AlignHeadParams::init(18, 8, 77);
        let mut rng = SplitMix64::new(6);
        for _ in 0..100 {
            let a = random_pool(2, 3, &mut rng);
            let b = random_pool(2, 3, &mut rng);
            let d = params.forward(&a, &b).unwrap();
            assert!(d.rtheta() > 0.0 && d.rtheta() < 1.0);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let params = AlignHeadParams::init(18, 8, 0);
        assert!(matches!(
            params.forward_flat(&[0.0; 10]),
            Err(AlignError::ShapeMismatch { got: 10, want: 18 })
        ));
    }

    #[test]
    fn align_proposal_with_zero_params_keeps_reference() {
        let mut params = AlignHeadParams::init(49, 8, 0);
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let fm = FeatureMap::from_fn(1, 32, 32, |_, x, y| (x + y) as f64 * 0.1);
        let reference = RotatedBox::new(16.0, 16.0, 10.0, 6.0, 0.4).unwrap();
        let phi_r = rotated_roi_align(&fm, &reference, 7, 2).unwrap();
        let phi_s = rotated_roi_align(&fm, &reference, 7, 2).unwrap();
        let (sensed, fused) = align_proposal(
            &params,
            &fm,
            &reference,
            &phi_r,
            &phi_s,
            RotationMode::Standard,
            2,
        )
        .unwrap();
        assert!((sensed.cx() - reference.cx()).abs() < 1e-12);
        assert!((sensed.cy() - reference.cy()).abs() < 1e-12);
        assert!(crate::geometry::angle_difference(sensed.theta(), reference.theta()) < 1e-12);
        // fused = phi_r + pool at reference = 2 * phi_r
        for i in 0..fused.len() {
            assert!((fused.data()[i] - 2.0 * phi_r.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_deviation_recovers_true_sensed_box() {
        // Bypass the head: plumb the encoded ground truth through decode.
        let mut rng = SplitMix64::new(8);
        for _ in 0..100 {
            let reference = RotatedBox::new(
                rng.uniform(20.0, 40.0),
                rng.uniform(20.0, 40.0),
                rng.uniform(6.0, 20.0),
                rng.uniform(4.0, 12.0),
                rng.uniform(0.0, std::f64::consts::TAU),
            )
            .unwrap();
            let sensed = RotatedBox::new(
                reference.cx() + rng.uniform(-3.0, 3.0),
                reference.cy() + rng.uniform(-3.0, 3.0),
                reference.w() * rng.uniform(0.9, 1.1),
                reference.h() * rng.uniform(0.9, 1.1),
                reference.theta() + rng.uniform(-0.1, 0.1),
            )
            .unwrap();
            let dev = encode(&reference, &sensed, RotationMode::Standard).unwrap();
            let recovered = decode(&reference, &dev, RotationMode::Standard).unwrap();
            assert!(crate::geometry::rotated_iou(&recovered, &sensed) > 0.99);
        }
    }

    #[test]
    fn digest_is_order_sensitive_and_stable() {
        let a = AlignHeadParams::init(18, 8, 1);
        let b = AlignHeadParams::init(18, 8, 1);
        let c = AlignHeadParams::init(18, 8, 2);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
