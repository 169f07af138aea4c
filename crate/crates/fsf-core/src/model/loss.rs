//! Classification losses over softmax probabilities.
//!
//! Both losses consume the probability vector rather than raw logits: the
//! smooth-L1 objective regresses probabilities onto the one-hot target, and
//! the weighted cross-entropy picks out the target probability. Their
//! gradients with respect to the *logits* are returned alongside the loss so
//! the backward pass starts from one vector regardless of loss kind.

use ndarray::{Array1, ArrayView1};

use super::math::softmax_vjp;

/// Floor applied inside the weighted cross-entropy logarithm.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Which training objective to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Smooth-L1 between probabilities and the one-hot target (centralized
    /// default).
    #[default]
    SmoothL1,
    /// Class-weighted cross-entropy (federated local default).
    WeightedCe,
}

/// Elementwise smooth-L1 (Huber at unit transition): `r²/2` for `|r| < 1`,
/// `|r| - 1/2` beyond.
fn huber(r: f64) -> f64 {
    if r.abs() < 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

fn huber_prime(r: f64) -> f64 {
    if r.abs() < 1.0 {
        r
    } else {
        r.signum()
    }
}

/// Mean smooth-L1 between `values` and `target`, elementwise over classes.
pub fn smooth_l1_loss(values: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> f64 {
    assert_eq!(values.len(), target.len());
    let n = values.len() as f64;
    values.iter().zip(target).map(|(&p, &y)| huber(p - y)).sum::<f64>() / n
}

/// Gradient of [`smooth_l1_loss`] with respect to `values`.
pub fn smooth_l1_grad(values: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = values.len() as f64;
    Array1::from_iter(values.iter().zip(target).map(|(&p, &y)| huber_prime(p - y) / n))
}

/// Weighted cross-entropy: `-w * ln(max(p_label, floor))`.
pub fn weighted_ce_loss(probs: ArrayView1<'_, f64>, label: usize, weight: f64) -> f64 {
    -weight * probs[label].max(CE_PROB_FLOOR).ln()
}

/// One-hot vector of length `classes`.
pub fn one_hot(label: usize, classes: usize) -> Array1<f64> {
    let mut y = Array1::zeros(classes);
    y[label] = 1.0;
    y
}

/// Loss value and its gradient with respect to the logits, given the softmax
/// output `probs`.
pub fn loss_and_dlogits(
    kind: LossKind,
    probs: ArrayView1<'_, f64>,
    label: usize,
    class_weight: f64,
) -> (f64, Array1<f64>) {
    match kind {
        LossKind::SmoothL1 => {
            let target = one_hot(label, probs.len());
            let loss = smooth_l1_loss(probs, target.view());
            let dprobs = smooth_l1_grad(probs, target.view());
            (loss, softmax_vjp(probs, dprobs.view()))
        }
        LossKind::WeightedCe => {
            let loss = weighted_ce_loss(probs, label, class_weight);
            let dlogits = if probs[label] > CE_PROB_FLOOR {
                // d/dlogit_k of -w ln p_label = w (p_k - [k == label])
                Array1::from_iter(
                    probs
                        .iter()
                        .enumerate()
                        .map(|(k, &p)| class_weight * (p - f64::from(u8::from(k == label)))),
                )
            } else {
                // Inside the floor the loss is constant.
                Array1::zeros(probs.len())
            };
            (loss, dlogits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn smooth_l1_zero_on_exact_match() {
        let y = one_hot(1, 3);
        assert_eq!(smooth_l1_loss(y.view(), y.view()), 0.0);
    }

    #[test]
    fn smooth_l1_quadratic_branch() {
        // Residual 0.5 on every class -> 0.125 each -> mean 0.125.
        let v = array![0.5, 0.5, 0.5, 0.5];
        let z = Array1::zeros(4);
        assert!((smooth_l1_loss(v.view(), z.view()) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_linear_branch() {
        // Residual 2 -> |r| - 1/2 = 1.5.
        let v = array![2.0];
        let z = array![0.0];
        assert!((smooth_l1_loss(v.view(), z.view()) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_branches_agree_at_unit_residual() {
        let quad = 0.5 * 1.0 * 1.0;
        let lin = 1.0 - 0.5;
        assert_eq!(quad, lin);
        let v = array![1.0];
        let z = array![0.0];
        assert!((smooth_l1_loss(v.view(), z.view()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weighted_ce_examples() {
        let p = array![0.0, 1.0, 0.0];
        assert_eq!(weighted_ce_loss(p.view(), 1, 3.0), 0.0);
        let p = array![1.0 - (-1.0f64).exp(), (-1.0f64).exp()];
        assert!((weighted_ce_loss(p.view(), 1, 2.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_ce_floors_zero_probability() {
        let p = array![1.0, 0.0];
        let loss = weighted_ce_loss(p.view(), 1, 1.0);
        assert!(loss.is_finite());
        assert!((loss - -(CE_PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn ce_dlogits_is_weighted_softmax_minus_onehot() {
        let probs = array![0.2, 0.5, 0.3];
        let (_, d) = loss_and_dlogits(LossKind::WeightedCe, probs.view(), 1, 2.0);
        let expect = array![0.4, 2.0 * (0.5 - 1.0), 0.6];
        for (a, b) in d.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
