//! Deviation regression loss and its exact analytic gradients.
//!
//! The loss over a batch is
//!
//! ```text
//! L = (1 / N) * sum_i g_i * [ sl1(t_i - t*_i) + sl1(s_i - s*_i) + sl1(r_i - r*_i) ]
//! ```
//!
//! where `g_i` is the positive flag, `N = max(1, #positives)`, `sl1` sums
//! smooth-L1 over vector components, and the angle channel compares the
//! sigmoid output against the target shifted into head space (encoded turns
//! recentred to `(-0.5, 0.5]`, plus `0.5`).

use super::{sigmoid, AlignHeadParams, Branch, ProposalSample};
use crate::deviation::{smooth_l1, smooth_l1_grad, wrap_turns, Deviation};

/// Smooth-L1 beta. The loss definition leaves it free; 1.0 is the box
/// regression convention.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Maps an encoded angle target (turns in `[0, 1)`) into the head's sigmoid
/// range: recentre to `(-0.5, 0.5]`, shift by `+0.5`.
#[inline]
pub fn target_to_head_space(rtheta: f64) -> f64 {
    let centered = if rtheta > 0.5 { rtheta - 1.0 } else { rtheta };
    centered + 0.5
}

/// Converts a head prediction into codec space: the sigmoid angle output is
/// shifted back by half a turn so that `0.5` decodes as "no rotation".
pub fn predicted_to_codec(pred: &Deviation) -> Deviation {
    Deviation::new(
        pred.tx,
        pred.ty,
        pred.sw,
        pred.sh,
        wrap_turns(pred.rtheta() - 0.5),
    )
    .expect("finite prediction")
}

/// Per-sample residuals in head space (prediction minus target), or `None`
/// for negatives. Works on raw component arrays so a diverged forward pass
/// propagates non-finite values into the loss instead of panicking.
fn residuals_raw(pred: &[f64; 5], sample: &ProposalSample) -> Option<[f64; 5]> {
    if !sample.positive {
        return None;
    }
    let t = sample.target.as_ref().expect("positive sample has a target");
    Some([
        pred[0] - t.tx,
        pred[1] - t.ty,
        pred[2] - t.sw,
        pred[3] - t.sh,
        pred[4] - target_to_head_space(t.rtheta()),
    ])
}

fn positive_count(samples: &[ProposalSample]) -> f64 {
    samples.iter().filter(|s| s.positive).count().max(1) as f64
}

/// Batch loss for already-computed predictions.
pub fn deviation_loss(pred: &[Deviation], samples: &[ProposalSample]) -> f64 {
    assert_eq!(pred.len(), samples.len(), "prediction/sample length mismatch");
    let norm = positive_count(samples);
    let mut total = 0.0;
    for (p, s) in pred.iter().zip(samples.iter()) {
        let raw = [p.tx, p.ty, p.sw, p.sh, p.rtheta()];
        if let Some(r) = residuals_raw(&raw, s) {
            total += r.iter().map(|x| smooth_l1(*x, SMOOTH_L1_BETA)).sum::<f64>();
        }
    }
    total / norm
}

/// Forward-pass activations of one branch, kept for backprop.
struct BranchTrace {
    /// Post-activation outputs per layer (relu applied on hidden layers,
    /// raw on the last).
    outputs: Vec<Vec<f64>>,
}

fn branch_forward_trace(branch: &Branch, input: &[f64]) -> BranchTrace {
    let mut outputs = Vec::with_capacity(branch.layers.len());
    let mut cur = input.to_vec();
    let last = branch.layers.len() - 1;
    for (k, layer) in branch.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.out_dim);
        layer.apply(&cur, &mut next);
        if k < last {
            for v in next.iter_mut() {
                *v = v.max(0.0);
            }
        }
        outputs.push(next.clone());
        cur = next;
    }
    BranchTrace { outputs }
}

/// Accumulates gradients for one branch given `d loss / d output`.
fn branch_backward(
    branch: &Branch,
    grads: &mut Branch,
    input: &[f64],
    trace: &BranchTrace,
    mut delta: Vec<f64>,
) {
    for k in (0..branch.layers.len()).rev() {
        let layer = &branch.layers[k];
        let layer_input: &[f64] = if k == 0 {
            input
        } else {
            &trace.outputs[k - 1]
        };
        let g = &mut grads.layers[k];
        for (o, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, x) in row.iter_mut().zip(layer_input.iter()) {
                    *gw += d * x;
                }
            }
            g.bias[o] += d;
        }
        if k > 0 {
            // delta for the previous layer, gated by its relu.
            let mut prev = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row.iter()) {
                        *p += d * w;
                    }
                }
            }
            let acts = &trace.outputs[k - 1];
            for (p, a) in prev.iter_mut().zip(acts.iter()) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

/// Exact analytic gradients of [`deviation_loss`] over a batch, plus the
/// batch loss itself. Samples are processed in order, so the reduction is
/// deterministic.
pub fn backward(params: &AlignHeadParams, samples: &[ProposalSample]) -> (AlignHeadParams, f64) {
    let mut grads = params.zeros_like();
    let norm = positive_count(samples);
    let mut total = 0.0;
    let mut phi_d = vec![0.0; params.input_dim];
    for sample in samples {
        debug_assert_eq!(sample.phi_r.len(), params.input_dim);
        for (d, (s, r)) in phi_d
            .iter_mut()
            .zip(sample.phi_s.data().iter().zip(sample.phi_r.data().iter()))
        {
            *d = s - r;
        }
        let pos_trace = branch_forward_trace(&params.position, &phi_d);
        let size_trace = branch_forward_trace(&params.size, &phi_d);
        let angle_trace = branch_forward_trace(&params.angle, &phi_d);
        let pos_out = pos_trace.outputs.last().unwrap().clone();
        let size_out = size_trace.outputs.last().unwrap().clone();
        let angle_z = angle_trace.outputs.last().unwrap()[0];
        let pred = [
            pos_out[0],
            pos_out[1],
            size_out[0],
            size_out[1],
            sigmoid(angle_z),
        ];
        let Some(r) = residuals_raw(&pred, sample) else {
            continue;
        };
        total += r.iter().map(|x| smooth_l1(*x, SMOOTH_L1_BETA)).sum::<f64>();
        let w = 1.0 / norm;
        let delta_pos = vec![
            w * smooth_l1_grad(r[0], SMOOTH_L1_BETA),
            w * smooth_l1_grad(r[1], SMOOTH_L1_BETA),
        ];
        let delta_size = vec![
            w * smooth_l1_grad(r[2], SMOOTH_L1_BETA),
            w * smooth_l1_grad(r[3], SMOOTH_L1_BETA),
        ];
        let s = sigmoid(angle_z);
        let delta_angle = vec![w * smooth_l1_grad(r[4], SMOOTH_L1_BETA) * s * (1.0 - s)];
        branch_backward(
            &params.position,
            &mut grads.position,
            &phi_d,
            &pos_trace,
            delta_pos,
        );
        branch_backward(&params.size, &mut grads.size, &phi_d, &size_trace, delta_size);
        branch_backward(
            &params.angle,
            &mut grads.angle,
            &phi_d,
            &angle_trace,
            delta_angle,
        );
    }
    (grads, total / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::PooledFeature;
    use crate::rng::SplitMix64;

    fn pool_from(values: &[f64], c: usize, s: usize) -> PooledFeature {
        let mut p = PooledFeature::new(c, s);
        p.data_mut().copy_from_slice(values);
        p
    }

    fn random_sample(rng: &mut SplitMix64, positive: bool) -> ProposalSample {
        let c = 2;
        let s = 3;
        let n = c * s * s;
        let phi_r: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let phi_s: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let target = Deviation::new(
            rng.uniform(-0.3, 0.3),
            rng.uniform(-0.3, 0.3),
            rng.uniform(-0.2, 0.2),
            rng.uniform(-0.2, 0.2),
            rng.uniform(-0.1, 0.1),
        )
        .unwrap();
        ProposalSample {
            phi_r: pool_from(&phi_r, c, s),
            phi_s: pool_from(&phi_s, c, s),
            positive,
            target: positive.then_some(target),
        }
    }

    #[test]
    fn loss_zero_when_predictions_match_targets() {
        let mut rng = SplitMix64::new(51);
        let samples: Vec<ProposalSample> = (0..5).map(|_| random_sample(&mut rng, true)).collect();
        let preds: Vec<Deviation> = samples
            .iter()
            .map(|s| {
                let t = s.target.unwrap();
                Deviation::new(t.tx, t.ty, t.sw, t.sh, target_to_head_space(t.rtheta())).unwrap()
            })
            .collect();
        assert_eq!(deviation_loss(&preds, &samples), 0.0);
    }

    #[test]
    fn loss_zero_without_positives() {
        let mut rng = SplitMix64::new(52);
        let samples: Vec<ProposalSample> = (0..4).map(|_| random_sample(&mut rng, false)).collect();
        let preds: Vec<Deviation> = samples
            .iter()
            .map(|_| Deviation::new(1.0, -2.0, 0.5, 0.1, 0.3).unwrap())
            .collect();
        assert_eq!(deviation_loss(&preds, &samples), 0.0);
    }

    #[test]
    fn loss_single_smooth_l1_term() {
        // One positive with tx residual 2 and everything else exact: the
        // batch loss is smooth_l1(2) = 1.5.
        let mut rng = SplitMix64::new(53);
        let sample = random_sample(&mut rng, true);
        let t = sample.target.unwrap();
        let pred = Deviation::new(
            t.tx + 2.0,
            t.ty,
            t.sw,
            t.sh,
            target_to_head_space(t.rtheta()),
        )
        .unwrap();
        let loss = deviation_loss(&[pred], &[sample]);
        assert!((loss - 1.5).abs() < 1e-12);
    }

    #[test]
    fn backward_zero_on_exactly_matched_batch() {
        // Zero network, zero features, zero targets: every residual is 0 and
        // sits at the quadratic minimum, so all gradients vanish.
        let n = 18;
        let mut params = AlignHeadParams::init(n, 8, 0);
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let sample = ProposalSample::positive(
            PooledFeature::new(2, 3),
            PooledFeature::new(2, 3),
            Deviation::zero(),
        );
        let (grads, loss) = backward(&params, &[sample]);
        assert_eq!(loss, 0.0);
        for t in grads.tensors() {
            assert!(t.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(54);
        let params = AlignHeadParams::init(18, 6, 2024);
        let samples: Vec<ProposalSample> = (0..6)
            .map(|i| random_sample(&mut rng, i % 3 != 2))
            .collect();
        let (grads, _) = backward(&params, &samples);

        let loss_of = |p: &AlignHeadParams| {
            let preds: Vec<Deviation> = samples
                .iter()
                .map(|s| {
                    let d = crate::pooling::subtract(&s.phi_s, &s.phi_r).unwrap();
                    p.forward_flat(d.data()).unwrap()
                })
                .collect();
            deviation_loss(&preds, &samples)
        };

        let h = 1e-5;
        let mut checked = 0usize;
        let mut probe_rng = SplitMix64::new(55);
        let n_tensors = grads.tensors().len();
        for t_idx in 0..n_tensors {
            let len = grads.tensors()[t_idx].len();
            let mut indices: Vec<usize> = (0..len).collect();
            probe_rng.shuffle(&mut indices);
            indices.truncate(24.min(len));
            for j in indices {
                let mut plus = params.clone();
                plus.tensors_mut()[t_idx][j] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[t_idx][j] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.tensors()[t_idx][j];
                let denom = fd.abs().max(1e-8);
                assert!(
                    (an - fd).abs() / denom <= 1e-4,
                    "tensor {t_idx} index {j}: analytic {an} vs fd {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 200, "only {checked} parameters probed");
    }

    #[test]
    fn duplicated_batch_has_identical_gradients() {
        let mut rng = SplitMix64::new(56);
        let params = AlignHeadParams::init(18, 6, 7);
        let samples: Vec<ProposalSample> = (0..4).map(|_| random_sample(&mut rng, true)).collect();
        let mut doubled = samples.clone();
        doubled.extend(samples.iter().cloned());
        let (g1, l1) = backward(&params, &samples);
        let (g2, l2) = backward(&params, &doubled);
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn predicted_to_codec_inverts_target_shift() {
        for r in [0.0, 0.1, 0.45, 0.5, 0.55, 0.9] {
            let head = target_to_head_space(r);
            let back = wrap_turns(head - 0.5);
            assert!((back - r).abs() < 1e-12, "rtheta {r}: head {head} back {back}");
        }
    }
}
