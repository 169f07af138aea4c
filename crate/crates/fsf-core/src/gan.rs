//! Histogram-regularized attention GAN for synthesizing unseen attack
//! windows, and the max-probability detection rule that flags them.
//!
//! The generator turns a noise vector into a full telemetry window; the
//! critic scores windows (Wasserstein, gradient penalty); a histogram-CDF
//! distance monitors how closely generated feature distributions track the
//! real ones. Detection runs the trained intrusion classifier over a window
//! and flags it "unseen" when no class reaches the confidence threshold.

pub mod net;
pub mod tape;

pub use net::{
    discriminator_forward, generator_forward, gradient_penalty, sample_noise, GanAdam, GanState,
};

use crate::exec::Parallelism;
use crate::model::{ModelError, ModelWeights};
use crate::rng::{derive_rng, Stream};
use crate::train::max_probabilities;
use ndarray::{s, Array2, Array3};
use net::{
    critic_params, critic_scores, generator_outputs, generator_params, gradient_penalty_node,
    interpolate_batches, sequence_nodes,
};
use rand::seq::SliceRandom;
use serde::Serialize;
use tape::{grad, Var};
use thiserror::Error;

/// Number of histogram bins used by the distribution loss.
pub const HIST_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid GAN configuration: {0}")]
    BadConfig(String),
    #[error("no real samples to train on")]
    NoData,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("detection threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sizes and coefficients of both networks and their training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub batch_size: usize,
    /// Window length of generated sequences.
    pub timesteps: usize,
    /// Feature count per timestep; one generator output head each.
    pub features: usize,
    pub gen_hidden: usize,
    pub attn_heads: usize,
    /// Hidden width of each per-feature output head.
    pub head_hidden: usize,
    pub leaky_slope: f64,
    pub critic_hidden: usize,
    /// Weight of the histogram-CDF term in the reported generator loss.
    pub lambda_hist: f64,
    /// Gradient-penalty coefficient.
    pub lambda_gp: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub learning_rate: f64,
    /// Critic learning rate as a multiple of `learning_rate`. The critic must
    /// re-fit between generator moves; letting it run faster (two-time-scale
    /// updates) damps oscillation around the equilibrium. 1 keeps both equal.
    pub critic_lr_ratio: f64,
    /// Multiplicative per-epoch learning-rate decay in (0, 1]; 1 disables it.
    /// Adversarial training jitters around its equilibrium at a fixed step
    /// size, so long runs benefit from annealing both optimizers.
    pub lr_decay: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 128,
            batch_size: 64,
            timesteps: crate::data::WINDOW,
            features: crate::data::FEATURES,
            gen_hidden: 128,
            attn_heads: 4,
            head_hidden: 32,
            leaky_slope: 0.2,
            critic_hidden: 64,
            lambda_hist: 1.0,
            lambda_gp: 10.0,
            critic_steps: 5,
            learning_rate: 3e-4,
            lr_decay: 1.0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        let dims = [
            ("noise_dim", self.noise_dim),
            ("batch_size", self.batch_size),
            ("timesteps", self.timesteps),
            ("features", self.features),
            ("gen_hidden", self.gen_hidden),
            ("attn_heads", self.attn_heads),
            ("head_hidden", self.head_hidden),
            ("critic_hidden", self.critic_hidden),
            ("critic_steps", self.critic_steps),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(GanError::BadConfig(format!("{name} must be >= 1")));
            }
        }
        if self.gen_hidden % self.attn_heads != 0 {
            return Err(GanError::BadConfig(format!(
                "attn_heads ({}) must divide gen_hidden ({})",
                self.attn_heads, self.gen_hidden
            )));
        }
        if !(self.lambda_hist >= 0.0 && self.lambda_hist.is_finite()) {
            return Err(GanError::BadConfig("lambda_hist must be finite and >= 0".into()));
        }
        if !(self.lambda_gp >= 0.0 && self.lambda_gp.is_finite()) {
            return Err(GanError::BadConfig("lambda_gp must be finite and >= 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GanError::BadConfig("learning_rate must be positive".into()));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(GanError::BadConfig("leaky_slope must lie in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(GanError::BadConfig("lr_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Histogram of one feature over fixed bin edges, as probabilities and their
/// running sum.
#[derive(Debug, Clone)]
pub struct FeatureHistogram {
    pub edges: Vec<f64>,
    pub probs: Vec<f64>,
    pub cdf: Vec<f64>,
}

/// Bins `values` into `bins` equal-width bins spanning `[lo, hi]`. Values at
/// the upper edge land in the last bin.
pub fn feature_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> FeatureHistogram {
    assert!(!values.is_empty(), "histogram of an empty sample");
    assert!(bins >= 1 && lo < hi, "bad histogram layout");
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let mut cdf = Vec::with_capacity(bins);
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    FeatureHistogram {
        edges: (0..=bins).map(|i| lo + i as f64 * width).collect(),
        probs,
        cdf,
    }
}

/// Sum over features of the L1 distance between real and generated CDF
/// vectors, with bin edges shared over the combined value range per feature.
///
/// A feature that is constant across both batches gets a symmetric unit-wide
/// range around the constant, making the distance zero rather than undefined.
pub fn hist_cdf_loss(real: &Array3<f64>, fake: &Array3<f64>, bins: usize) -> f64 {
    let (rb, _, rf) = real.dim();
    let (fb, _, ff) = fake.dim();
    assert!(rb >= 1 && fb >= 1, "hist_cdf_loss: empty batch");
    assert_eq!(rf, ff, "hist_cdf_loss: feature count mismatch");

    let mut total = 0.0;
    for f in 0..rf {
        let rv: Vec<f64> = real.slice(s![.., .., f]).iter().copied().collect();
        let fv: Vec<f64> = fake.slice(s![.., .., f]).iter().copied().collect();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in rv.iter().chain(fv.iter()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let hr = feature_histogram(&rv, lo, hi, bins);
        let hf = feature_histogram(&fv, lo, hi, bins);
        total += hr
            .cdf
            .iter()
            .zip(&hf.cdf)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    }
    total
}

/// Generator and critic objectives for one real/fake batch pair:
/// `L_G = -E[D(fake)] + lambda_hist * hist`, `L_D = -E[D(real)] + E[D(fake)] + GP`.
/// `rng` drives the gradient-penalty interpolation coefficients.
pub fn gan_losses(
    real: &Array3<f64>,
    fake: &Array3<f64>,
    state: &GanState,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (f64, f64) {
    let d_real = discriminator_forward(real, state).mean().expect("nonempty batch");
    let d_fake = discriminator_forward(fake, state).mean().expect("nonempty batch");
    let gp = gradient_penalty(real, fake, state, rng);
    let hist = hist_cdf_loss(real, fake, HIST_BINS);
    let l_g = -d_fake + state.config.lambda_hist * hist;
    let l_d = -d_real + d_fake + gp;
    (l_g, l_d)
}

/// Loss record for one training epoch. `hist_loss` compares the full real
/// corpus against sequences generated from a fixed evaluation noise batch.
#[derive(Debug, Clone, Serialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub hist_loss: f64,
}

/// Stacks same-shaped windows into a `[batch, timesteps, features]` block.
pub fn stack_sequences(samples: &[&Array2<f64>]) -> Array3<f64> {
    assert!(!samples.is_empty(), "stack_sequences: empty batch");
    let (t, f) = samples[0].dim();
    let mut out = Array3::zeros((samples.len(), t, f));
    for (b, sample) in samples.iter().enumerate() {
        assert_eq!(sample.dim(), (t, f), "stack_sequences: ragged batch");
        out.slice_mut(s![b, .., ..]).assign(sample);
    }
    out
}

/// Adversarial training: `critic_steps` critic updates per generator update,
/// epochs over shuffled real batches. Epochs with fewer batches than
/// `critic_steps` still end with one generator update. Any non-finite loss
/// aborts with [`GanError::Diverged`].
pub fn train_gan(
    real: &[Array2<f64>],
    config: &GanConfig,
    epochs: usize,
    seed: u64,
) -> Result<(GanState, Vec<GanEpoch>), GanError> {
    config.validate()?;
    if epochs == 0 {
        return Err(GanError::BadConfig("epochs must be >= 1".into()));
    }
    if real.is_empty() {
        return Err(GanError::NoData);
    }
    for (i, sample) in real.iter().enumerate() {
        if sample.dim() != (config.timesteps, config.features) {
            return Err(GanError::BadConfig(format!(
                "real sample {i} has shape {:?}, expected ({}, {})",
                sample.dim(),
                config.timesteps,
                config.features
            )));
        }
    }

    let mut state = GanState::new(*config, &mut derive_rng(seed, Stream::Gan, &[0]));
    let eval_noise = sample_noise(
        config.batch_size,
        config.noise_dim,
        &mut derive_rng(seed, Stream::Gan, &[9]),
    );
    let all_real = stack_sequences(&real.iter().collect::<Vec<_>>());

    let mut history = Vec::with_capacity(epochs);
    let mut step: u64 = 0;
    for epoch in 1..=epochs {
        let epoch_lr = config.learning_rate * config.lr_decay.powi(epoch as i32 - 1);
        state.gen_opt.learning_rate = epoch_lr;
        state.critic_opt.learning_rate = epoch_lr;
        let mut order: Vec<usize> = (0..real.len()).collect();
        order.shuffle(&mut derive_rng(seed, Stream::Gan, &[10, epoch as u64]));

        let mut critic_losses = Vec::new();
        let mut gen_losses = Vec::new();
        for (batch_no, batch_ids) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Array2<f64>> = batch_ids.iter().map(|&i| &real[i]).collect();
            let real_batch = stack_sequences(&batch);
            step += 1;
            critic_losses.push(critic_step(&mut state, &real_batch, seed, epoch, step)?);
            if (batch_no + 1) % config.critic_steps == 0 {
                gen_losses.push(generator_step(&mut state, &real_batch, seed, epoch, step)?);
            }
        }
        if gen_losses.is_empty() {
            let tail: Vec<&Array2<f64>> = order
                .iter()
                .take(config.batch_size.min(real.len()))
                .map(|&i| &real[i])
                .collect();
            let real_batch = stack_sequences(&tail);
            gen_losses.push(generator_step(&mut state, &real_batch, seed, epoch, step)?);
        }

        let generated = generator_forward(&eval_noise, &state);
        let hist_loss = hist_cdf_loss(&all_real, &generated, HIST_BINS);
        let record = GanEpoch {
            epoch,
            critic_loss: mean(&critic_losses),
            generator_loss: mean(&gen_losses),
            hist_loss,
        };
        if !record.critic_loss.is_finite()
            || !record.generator_loss.is_finite()
            || !record.hist_loss.is_finite()
        {
            return Err(GanError::Diverged { epoch });
        }
        history.push(record);
    }
    Ok((state, history))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One critic update on a real batch against freshly generated sequences.
fn critic_step(
    state: &mut GanState,
    real: &Array3<f64>,
    seed: u64,
    epoch: usize,
    step: u64,
) -> Result<f64, GanError> {
    let config = state.config;
    let batch = real.dim().0;
    let noise = sample_noise(
        batch,
        config.noise_dim,
        &mut derive_rng(seed, Stream::Gan, &[1, epoch as u64, step]),
    );

    // Generator fixed: its outputs enter the critic graph as constants.
    let gen = generator_params(&state.generator, false);
    let fake_nodes = generator_outputs(&gen, &config, &noise);
    let fake_values = net::stack_steps(&fake_nodes);

    let critic = critic_params(&state.critic, true);
    let score = |xs: &[Var]| critic_scores(&critic, xs, config.critic_hidden);

    let d_real = score(&sequence_nodes(real)).mean_all();
    let d_fake = score(&sequence_nodes(&fake_values)).mean_all();
    let mut u_rng = derive_rng(seed, Stream::Gan, &[2, epoch as u64, step]);
    let interpolates: Vec<Var> = interpolate_batches(real, &fake_values, &mut u_rng)
        .into_iter()
        .map(Var::leaf)
        .collect();
    let gp = gradient_penalty_node(&interpolates, score, config.lambda_gp);
    let loss = d_fake.sub(&d_real).add(&gp);

    let value = loss.scalar();
    if !value.is_finite() {
        return Err(GanError::Diverged { epoch });
    }
    let refs: Vec<&Var> = critic.iter().collect();
    let grads: Vec<Array2<f64>> = grad(&loss, &refs)
        .iter()
        .map(|g| g.value().clone())
        .collect();
    state.critic_opt.step(state.critic.tensors_mut(), &grads);
    state.critic_steps_taken += 1;
    Ok(value)
}

/// One generator update; the real batch only feeds the monitored histogram
/// term, which carries no gradient.
fn generator_step(
    state: &mut GanState,
    real: &Array3<f64>,
    seed: u64,
    epoch: usize,
    step: u64,
) -> Result<f64, GanError> {
    let config = state.config;
    let noise = sample_noise(
        config.batch_size,
        config.noise_dim,
        &mut derive_rng(seed, Stream::Gan, &[3, epoch as u64, step]),
    );

    let gen = generator_params(&state.generator, true);
    let critic = critic_params(&state.critic, false);
    let fake_nodes = generator_outputs(&gen, &config, &noise);
    let adversarial = critic_scores(&critic, &fake_nodes, config.critic_hidden)
        .mean_all()
        .neg();

    let value = adversarial.scalar();
    if !value.is_finite() {
        return Err(GanError::Diverged { epoch });
    }
    let refs: Vec<&Var> = gen.iter().collect();
    let grads: Vec<Array2<f64>> = grad(&adversarial, &refs)
        .iter()
        .map(|g| g.value().clone())
        .collect();
    state.gen_opt.step(state.generator.tensors_mut(), &grads);
    state.generator_steps += 1;

    let hist = hist_cdf_loss(real, &net::stack_steps(&fake_nodes), HIST_BINS);
    Ok(value + config.lambda_hist * hist)
}

/// Flags windows whose best class probability under the trained classifier
/// stays below `threshold`, and returns the flagged fraction.
pub fn detect_unseen(
    weights: &ModelWeights,
    sequences: &[Array2<f64>],
    threshold: f64,
    mode: Parallelism,
) -> Result<(Vec<bool>, f64), GanError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GanError::BadThreshold(threshold));
    }
    let max_probs = max_probabilities(weights, sequences, mode)?;
    let flags: Vec<bool> = max_probs.iter().map(|&p| p < threshold).collect();
    let rate = if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    Ok((flags, rate))
}
