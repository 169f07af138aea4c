//! Differential privacy: per-sample clipping, calibrated Gaussian noise, and
//! a Rényi-DP accountant that converts `(σ, C, γ, T)` into an `(ε, δ)`
//! guarantee.
//!
//! Accounting follows the standard chain: per-order RDP of the (subsampled)
//! Gaussian mechanism, linear composition over rounds, and conversion to
//! `(ε, δ)` by minimizing `ε_T(α) + ln(1/δ)/(α−1)` over a grid of orders.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::data::SequenceSample;
use crate::exec::{map_indexed, Parallelism};
use crate::model::{loss_and_gradients, Gradients, LossKind, ModelWeights};
use crate::train::{Adam, TrainError};

/// Privacy mechanism and accounting parameters.
#[derive(Debug, Clone, Serialize)]
pub struct PrivacySpec {
    /// Noise multiplier σ (≥ 0; 0 disables noise and voids the guarantee).
    pub noise_multiplier: f64,
    /// Per-sample clip norm C (> 0; may be infinite to disable clipping).
    pub clip_norm: f64,
    /// Subsampling rate γ ∈ (0, 1], typically batch_size / shard_size.
    pub sampling_rate: f64,
    /// Number of composed steps T.
    pub rounds: u64,
    /// Target δ ∈ (0, 1).
    pub delta: f64,
    /// Rényi orders to search over (all > 1).
    pub alpha_grid: Vec<f64>,
}

/// Default order grid: integers 2..=64 plus a few fractional orders near 1.
pub fn default_alpha_grid() -> Vec<f64> {
    let mut grid = vec![1.01, 1.25, 1.5, 1.75];
    grid.extend((2..=64).map(|a| a as f64));
    grid
}

impl Default for PrivacySpec {
    fn default() -> Self {
        Self {
            noise_multiplier: 0.001,
            clip_norm: 5.0,
            sampling_rate: 1.0,
            rounds: 1,
            delta: 1e-5,
            alpha_grid: default_alpha_grid(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PrivacyError {
    #[error("invalid privacy parameters: {0}")]
    BadSpec(String),
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if self.noise_multiplier < 0.0 || !self.noise_multiplier.is_finite() {
            return Err(PrivacyError::BadSpec("noise multiplier must be finite and >= 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(PrivacyError::BadSpec("clip norm must be > 0".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(PrivacyError::BadSpec("sampling rate must lie in (0, 1]".into()));
        }
        if self.rounds == 0 {
            return Err(PrivacyError::BadSpec("rounds must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PrivacyError::BadSpec("delta must lie in (0, 1)".into()));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|&a| a <= 1.0) {
            return Err(PrivacyError::BadSpec("alpha grid must be nonempty with orders > 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Mechanism
// ---------------------------------------------------------------------------

/// Scales `g` in place by `1 / max(1, ‖g‖₂ / clip)` over the concatenation of
/// all tensors; returns the factor applied.
pub fn clip_gradient(g: &mut Gradients, clip_norm: f64) -> f64 {
    let norm = g.squared_norm().sqrt();
    let factor = 1.0 / (norm / clip_norm).max(1.0);
    if factor < 1.0 {
        g.scale(factor);
    }
    factor
}

/// Clips every per-sample gradient in place.
pub fn clip_per_sample(grads: &mut [Gradients], clip_norm: f64) {
    for g in grads {
        clip_gradient(g, clip_norm);
    }
}

/// `(Σ g̃_i + N(0, σ²C² I)) / B`: sums already-clipped per-sample gradients
/// in order, adds a single Gaussian draw of standard deviation `σ·C` per
/// coordinate, and divides by the batch size.
///
/// With `σ = 0` no randomness is consumed and the result is the exact mean.
pub fn noisy_batch_gradient(
    clipped: &[Gradients],
    noise_multiplier: f64,
    clip_norm: f64,
    rng: &mut impl Rng,
) -> Result<Gradients, TrainError> {
    let first = clipped.first().ok_or(TrainError::NoData)?;
    let mut acc = ModelWeights::zeros(&first.config);
    for g in clipped {
        acc.add_scaled(g, 1.0);
    }
    if noise_multiplier > 0.0 {
        let std = noise_multiplier * clip_norm;
        let normal = Normal::new(0.0, std).expect("finite noise std");
        for t in acc.flat_mut() {
            for x in t {
                *x += normal.sample(rng);
            }
        }
    }
    acc.scale(1.0 / clipped.len() as f64);
    Ok(acc)
}

/// One DP-SGD step: per-sample gradients, clipping, noising, Adam update.
/// Returns the mean (unnoised) loss over the batch.
#[allow(clippy::too_many_arguments)]
pub fn dp_local_step(
    weights: &mut ModelWeights,
    optimizer: &mut Adam,
    batch: &[&SequenceSample],
    kind: LossKind,
    class_weights: &[f64],
    noise_multiplier: f64,
    clip_norm: f64,
    rng: &mut impl Rng,
    mode: Parallelism,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::NoData);
    }
    let per_sample = map_indexed(mode, batch.len(), |i| {
        let s = batch[i];
        let cw = class_weights.get(s.label as usize).copied().unwrap_or(1.0);
        loss_and_gradients(weights, &s.values, kind, s.label as usize, cw)
    });
    let mut grads = Vec::with_capacity(batch.len());
    let mut loss_sum = 0.0;
    for r in per_sample {
        let (loss, g) = r?;
        loss_sum += loss;
        grads.push(g);
    }
    clip_per_sample(&mut grads, clip_norm);
    let noisy = noisy_batch_gradient(&grads, noise_multiplier, clip_norm, rng)?;
    optimizer.step(weights, &noisy);
    Ok(loss_sum / batch.len() as f64)
}

// ---------------------------------------------------------------------------
// Accountant
// ---------------------------------------------------------------------------

/// RDP of the Gaussian mechanism at order `alpha`:
/// `ε(α) = α·C² / (2σ²)`. Returns infinity when `σ = 0`.
pub fn rdp_gaussian(alpha: f64, clip_norm: f64, noise_multiplier: f64) -> f64 {
    if noise_multiplier == 0.0 {
        return f64::INFINITY;
    }
    alpha * clip_norm * clip_norm / (2.0 * noise_multiplier * noise_multiplier)
}

/// RDP of the subsampled Gaussian mechanism at integer order `alpha`:
///
/// `ε'(α) = (1/(α−1)) · ln Σ_{k=0}^{α} C(α,k) γᵏ (1−γ)^{α−k} · exp((α−1)·ε_k)`
///
/// with `ε_k = k·C²/(2σ²)` — the order-`k` Gaussian value, the reading under
/// which `γ = 1` collapses to [`rdp_gaussian`] exactly. Evaluated in
/// log-space with a log-sum-exp reduction.
pub fn rdp_subsampled(alpha: u64, gamma: f64, clip_norm: f64, noise_multiplier: f64) -> f64 {
    assert!(alpha >= 2, "subsampled RDP needs an integer order >= 2");
    assert!((0.0..=1.0).contains(&gamma), "gamma must lie in [0, 1]");
    if gamma == 0.0 {
        // Nothing is ever sampled; the mechanism ignores the data.
        return 0.0;
    }
    if noise_multiplier == 0.0 {
        return f64::INFINITY;
    }
    if gamma == 1.0 {
        return rdp_gaussian(alpha as f64, clip_norm, noise_multiplier);
    }
    let a = alpha as f64;
    let c2_over_2s2 = clip_norm * clip_norm / (2.0 * noise_multiplier * noise_multiplier);
    let log_terms: Vec<f64> = (0..=alpha)
        .map(|k| {
            let kf = k as f64;
            ln_choose(alpha, k)
                + kf * gamma.ln()
                + (a - kf) * (1.0 - gamma).ln()
                + (a - 1.0) * kf * c2_over_2s2
        })
        .collect();
    log_sum_exp(&log_terms) / (a - 1.0)
}

/// Composition over `rounds` identical steps: `ε_T(α) = T · ε'(α)`.
pub fn rdp_compose(eps_alpha: f64, rounds: u64) -> f64 {
    rounds as f64 * eps_alpha
}

/// One row of the accountant's order table.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaEntry {
    pub alpha: f64,
    /// Composed RDP value ε_T(α).
    pub rdp: f64,
    /// Converted bound ε_T(α) + ln(1/δ)/(α−1).
    pub epsilon: f64,
}

/// Final accounting result.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "guarantee", rename_all = "snake_case")]
pub enum PrivacyReport {
    /// σ = 0: the mechanism adds no noise, so no finite ε exists.
    NoGuarantee { delta: f64 },
    Bounded {
        epsilon: f64,
        delta: f64,
        best_alpha: f64,
        table: Vec<AlphaEntry>,
    },
}

impl PrivacyReport {
    pub fn epsilon(&self) -> Option<f64> {
        match self {
            PrivacyReport::NoGuarantee { .. } => None,
            PrivacyReport::Bounded { epsilon, .. } => Some(*epsilon),
        }
    }
}

/// Converts a composed RDP table to the best `(ε, δ)` point on the grid.
pub fn rdp_to_dp(table: &[(f64, f64)], delta: f64) -> (f64, f64) {
    assert!(!table.is_empty(), "empty alpha grid");
    let mut best = (f64::INFINITY, table[0].0);
    for &(alpha, rdp) in table {
        let eps = rdp + (1.0 / delta).ln() / (alpha - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    best
}

/// Full accountant: per-order RDP (subsampled at integer orders, plain
/// Gaussian at fractional ones, which is an upper bound without the
/// amplification credit), composed over rounds, converted at the target δ.
pub fn account(spec: &PrivacySpec) -> Result<PrivacyReport, PrivacyError> {
    spec.validate()?;
    if spec.noise_multiplier == 0.0 {
        return Ok(PrivacyReport::NoGuarantee { delta: spec.delta });
    }
    let table: Vec<AlphaEntry> = spec
        .alpha_grid
        .iter()
        .map(|&alpha| {
            let per_step = if alpha.fract() == 0.0 && alpha >= 2.0 {
                rdp_subsampled(alpha as u64, spec.sampling_rate, spec.clip_norm, spec.noise_multiplier)
            } else {
                rdp_gaussian(alpha, spec.clip_norm, spec.noise_multiplier)
            };
            let rdp = rdp_compose(per_step, spec.rounds);
            let epsilon = rdp + (1.0 / spec.delta).ln() / (alpha - 1.0);
            AlphaEntry { alpha, rdp, epsilon }
        })
        .collect();
    let best = table
        .iter()
        .min_by(|a, b| a.epsilon.partial_cmp(&b.epsilon).expect("finite epsilons"))
        .expect("nonempty grid");
    Ok(PrivacyReport::Bounded {
        epsilon: best.epsilon,
        delta: spec.delta,
        best_alpha: best.alpha,
        table,
    })
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
