//! Generator and critic networks, their optimizer, and the gradient penalty.
//!
//! Both networks run on the differentiation tape in [`super::tape`]:
//! sequences are lists of `[batch, features]` nodes, one per timestep, and an
//! LSTM step is a handful of batched 2-D ops (concatenate input and hidden
//! state, one gate matmul, slice out the four gates).

use super::tape::{grad, Var};
use super::GanConfig;
use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// One LSTM layer: `w` maps `[input + hidden]` to the four gates `[4 * hidden]`
/// in i, f, g, o order; `b` is the `[1, 4 * hidden]` gate bias.
#[derive(Debug, Clone)]
pub struct LstmWeights {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl LstmWeights {
    fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmWeights {
            w: glorot((input + hidden, 4 * hidden), rng),
            b: Array2::zeros((1, 4 * hidden)),
        }
    }
}

/// One per-feature output head: a tiny MLP mapping the attention output to a
/// single feature value.
#[derive(Debug, Clone)]
pub struct FeatureHead {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// Generator: two LSTM layers, multi-head self-attention over timesteps, and
/// one head per output feature.
#[derive(Debug, Clone)]
pub struct GeneratorWeights {
    pub lstm1: LstmWeights,
    pub lstm2: LstmWeights,
    pub wq: Vec<Array2<f64>>,
    pub wk: Vec<Array2<f64>>,
    pub wv: Vec<Array2<f64>>,
    pub wo: Array2<f64>,
    pub heads: Vec<FeatureHead>,
}

impl GeneratorWeights {
    pub fn init(config: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        let hidden = config.gen_hidden;
        let dk = hidden / config.attn_heads;
        GeneratorWeights {
            lstm1: LstmWeights::init(config.noise_dim, hidden, rng),
            lstm2: LstmWeights::init(hidden, hidden, rng),
            wq: (0..config.attn_heads).map(|_| glorot((hidden, dk), rng)).collect(),
            wk: (0..config.attn_heads).map(|_| glorot((hidden, dk), rng)).collect(),
            wv: (0..config.attn_heads).map(|_| glorot((hidden, dk), rng)).collect(),
            wo: glorot((hidden, hidden), rng),
            heads: (0..config.features)
                .map(|_| FeatureHead {
                    w1: glorot((hidden, config.head_hidden), rng),
                    b1: Array2::zeros((1, config.head_hidden)),
                    w2: glorot((config.head_hidden, 1), rng),
                    b2: Array2::zeros((1, 1)),
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.lstm1.w, &self.lstm1.b, &self.lstm2.w, &self.lstm2.b];
        out.extend(self.wq.iter());
        out.extend(self.wk.iter());
        out.extend(self.wv.iter());
        out.push(&self.wo);
        for head in &self.heads {
            out.extend([&head.w1, &head.b1, &head.w2, &head.b2]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.lstm1.w, &mut self.lstm1.b, &mut self.lstm2.w, &mut self.lstm2.b];
        out.extend(self.wq.iter_mut());
        out.extend(self.wk.iter_mut());
        out.extend(self.wv.iter_mut());
        out.push(&mut self.wo);
        for head in &mut self.heads {
            out.extend([&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2]);
        }
        out
    }

    pub fn tensor_names(config: &GanConfig) -> Vec<String> {
        let mut out = vec![
            "gen.lstm1.w".to_string(),
            "gen.lstm1.b".to_string(),
            "gen.lstm2.w".to_string(),
            "gen.lstm2.b".to_string(),
        ];
        for part in ["q", "k", "v"] {
            out.extend((0..config.attn_heads).map(|h| format!("gen.att.{part}{h}")));
        }
        out.push("gen.att.out".to_string());
        for f in 0..config.features {
            for part in ["w1", "b1", "w2", "b2"] {
                out.push(format!("gen.head{f}.{part}"));
            }
        }
        out
    }
}

/// Critic: one LSTM layer over the sequence, scalar score from the final
/// hidden state. No output squashing — Wasserstein scores are unbounded.
#[derive(Debug, Clone)]
pub struct CriticWeights {
    pub lstm: LstmWeights,
    pub score_w: Array2<f64>,
    pub score_b: Array2<f64>,
}

impl CriticWeights {
    pub fn init(config: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        CriticWeights {
            lstm: LstmWeights::init(config.features, config.critic_hidden, rng),
            score_w: glorot((config.critic_hidden, 1), rng),
            score_b: Array2::zeros((1, 1)),
        }
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.lstm.w, &self.lstm.b, &self.score_w, &self.score_b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.lstm.w, &mut self.lstm.b, &mut self.score_w, &mut self.score_b]
    }

    pub fn tensor_names() -> Vec<String> {
        ["critic.lstm.w", "critic.lstm.b", "critic.score.w", "critic.score.b"]
            .map(String::from)
            .to_vec()
    }
}

/// Adam over a flat list of tensors, bias-corrected.
///
/// Moment decays are (0.5, 0.9) rather than the classifier's (0.9, 0.999):
/// adversarial targets move every few steps, and the long momentum memory
/// makes the generator overshoot whenever the critic changes direction.
#[derive(Debug, Clone)]
pub struct GanAdam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl GanAdam {
    pub fn new(tensors: &[&Array2<f64>], learning_rate: f64) -> Self {
        GanAdam {
            learning_rate,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
            step: 0,
            m: tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            v: tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((param, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            azip_update(param, g, m, v, self.beta1, self.beta2, bc1, bc2, self.learning_rate, self.epsilon);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    param: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    beta1: f64,
    beta2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    eps: f64,
) {
    assert_eq!(param.raw_dim(), g.raw_dim());
    for ((p, &gi), (mi, vi)) in param
        .iter_mut()
        .zip(g.iter())
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        *mi = beta1 * *mi + (1.0 - beta1) * gi;
        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
    }
}

/// Everything the GAN training loop mutates: both networks, their optimizers,
/// and step counters.
#[derive(Debug, Clone)]
pub struct GanState {
    pub config: GanConfig,
    pub generator: GeneratorWeights,
    pub critic: CriticWeights,
    pub gen_opt: GanAdam,
    pub critic_opt: GanAdam,
    pub generator_steps: u64,
    pub critic_steps_taken: u64,
}

impl GanState {
    /// Fresh state with Glorot-initialized networks. The caller validates the
    /// config first.
    pub fn new(config: GanConfig, rng: &mut ChaCha8Rng) -> GanState {
        let generator = GeneratorWeights::init(&config, rng);
        let critic = CriticWeights::init(&config, rng);
        let gen_opt = GanAdam::new(&generator.tensors(), config.learning_rate);
        let critic_opt = GanAdam::new(&critic.tensors(), config.learning_rate);
        GanState {
            config,
            generator,
            critic,
            gen_opt,
            critic_opt,
            generator_steps: 0,
            critic_steps_taken: 0,
        }
    }

    /// All trainable tensors, generator first, in checkpoint order.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = self.generator.tensors();
        out.extend(self.critic.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = self.generator.tensors_mut();
        out.extend(self.critic.tensors_mut());
        out
    }

    /// Checkpoint names aligned with [`GanState::tensors`].
    pub fn tensor_names(config: &GanConfig) -> Vec<String> {
        let mut out = GeneratorWeights::tensor_names(config);
        out.extend(CriticWeights::tensor_names());
        out
    }
}

fn glorot(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (shape.0 + shape.1) as f64).sqrt();
    let dist = Uniform::new(-limit, limit);
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

/// Standard-normal noise batch `[batch, dim]`.
pub fn sample_noise(batch: usize, dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_simple_fn((batch, dim), || normal.sample(rng))
}

/// Runs an LSTM over `inputs` (one `[batch, in]` node per timestep) and
/// returns the hidden state after every step.
fn lstm_sequence(inputs: &[Var], w: &Var, b: &Var, hidden: usize) -> Vec<Var> {
    let batch = inputs[0].rows();
    let mut h = Var::constant(Array2::zeros((batch, hidden)));
    let mut c = Var::constant(Array2::zeros((batch, hidden)));
    let mut states = Vec::with_capacity(inputs.len());
    for x in inputs {
        let gates = x.concat_cols(&h).matmul(w).add(b);
        let i = gates.slice_cols(0, hidden).sigmoid();
        let f = gates.slice_cols(hidden, hidden).sigmoid();
        let g = gates.slice_cols(2 * hidden, hidden).tanh();
        let o = gates.slice_cols(3 * hidden, hidden).sigmoid();
        c = f.mul(&c).add(&i.mul(&g));
        h = o.mul(&c.tanh());
        states.push(h.clone());
    }
    states
}

/// Scaled dot-product self-attention over timesteps, batched per head.
///
/// Scores for a query step are assembled from per-timestep row dot products,
/// which keeps every node two-dimensional `[batch, _]`.
fn self_attention(states: &[Var], wq: &[Var], wk: &[Var], wv: &[Var], wo: &Var) -> Vec<Var> {
    let steps = states.len();
    let batch = states[0].rows();
    let heads = wq.len();
    let dk = wq[0].cols();
    let scale = 1.0 / (dk as f64).sqrt();

    // contexts[s][h]: [batch, dk] context of head h at query step s.
    let mut contexts: Vec<Vec<Var>> = vec![Vec::with_capacity(heads); steps];
    for h in 0..heads {
        let qs: Vec<Var> = states.iter().map(|z| z.matmul(&wq[h])).collect();
        let ks: Vec<Var> = states.iter().map(|z| z.matmul(&wk[h])).collect();
        let vs: Vec<Var> = states.iter().map(|z| z.matmul(&wv[h])).collect();
        for s in 0..steps {
            let mut scores: Option<Var> = None;
            for k in &ks {
                let dot = qs[s].mul(k).sum_cols(); // [batch, 1]
                scores = Some(match scores {
                    Some(sc) => sc.concat_cols(&dot),
                    None => dot,
                });
            }
            let attn = scores.expect("steps >= 1").scale(scale).softmax_rows(); // [batch, steps]
            let mut ctx: Option<Var> = None;
            for (t, v) in vs.iter().enumerate() {
                let weighted = attn.slice_cols(t, 1).broadcast_to(batch, dk).mul(v);
                ctx = Some(match ctx {
                    Some(c) => c.add(&weighted),
                    None => weighted,
                });
            }
            contexts[s].push(ctx.expect("steps >= 1"));
        }
    }

    contexts
        .into_iter()
        .map(|heads_at_s| {
            let mut cat: Option<Var> = None;
            for ctx in heads_at_s {
                cat = Some(match cat {
                    Some(c) => c.concat_cols(&ctx),
                    None => ctx,
                });
            }
            cat.expect("heads >= 1").matmul(wo)
        })
        .collect()
}

/// Wraps every generator tensor as a tape node, in [`GeneratorWeights::tensors`]
/// order. `trainable` picks leaves (for generator updates) or constants.
pub(crate) fn generator_params(weights: &GeneratorWeights, trainable: bool) -> Vec<Var> {
    weights
        .tensors()
        .into_iter()
        .map(|t| if trainable { Var::leaf(t.clone()) } else { Var::constant(t.clone()) })
        .collect()
}

pub(crate) fn critic_params(weights: &CriticWeights, trainable: bool) -> Vec<Var> {
    weights
        .tensors()
        .into_iter()
        .map(|t| if trainable { Var::leaf(t.clone()) } else { Var::constant(t.clone()) })
        .collect()
}

/// Generator forward pass on the tape. `params` must come from
/// [`generator_params`]. Returns one `[batch, features]` node per timestep.
pub(crate) fn generator_outputs(params: &[Var], config: &GanConfig, noise: &Array2<f64>) -> Vec<Var> {
    assert_eq!(noise.ncols(), config.noise_dim, "noise width");
    assert!(noise.nrows() >= 1, "empty noise batch");
    assert!(noise.iter().all(|x| x.is_finite()), "noise must be finite");

    let heads = config.attn_heads;
    let wq = &params[4..4 + heads];
    let wk = &params[4 + heads..4 + 2 * heads];
    let wv = &params[4 + 2 * heads..4 + 3 * heads];
    let wo = &params[4 + 3 * heads];
    let head_base = 5 + 3 * heads;

    // The noise vector is the input at every timestep.
    let noise_node = Var::constant(noise.clone());
    let inputs: Vec<Var> = (0..config.timesteps).map(|_| noise_node.clone()).collect();

    let h1 = lstm_sequence(&inputs, &params[0], &params[1], config.gen_hidden);
    let h2 = lstm_sequence(&h1, &params[2], &params[3], config.gen_hidden);
    let att = self_attention(&h2, wq, wk, wv, wo);

    att.into_iter()
        .map(|a| {
            let mut features: Option<Var> = None;
            for f in 0..config.features {
                let base = head_base + 4 * f;
                let hidden = a
                    .matmul(&params[base])
                    .add(&params[base + 1])
                    .leaky_relu(config.leaky_slope);
                let value = hidden.matmul(&params[base + 2]).add(&params[base + 3]);
                features = Some(match features {
                    Some(cat) => cat.concat_cols(&value),
                    None => value,
                });
            }
            features.expect("features >= 1")
        })
        .collect()
}

/// Critic forward pass on the tape: per-timestep `[batch, features]` nodes in,
/// `[batch, 1]` scores out. `params` must come from [`critic_params`].
pub(crate) fn critic_scores(params: &[Var], inputs: &[Var], hidden: usize) -> Var {
    let states = lstm_sequence(inputs, &params[0], &params[1], hidden);
    states.last().expect("timesteps >= 1").matmul(&params[2]).add(&params[3])
}

/// Generates sequences from a noise batch: `[batch, noise_dim]` in,
/// `[batch, timesteps, features]` out.
pub fn generator_forward(noise: &Array2<f64>, state: &GanState) -> Array3<f64> {
    let params = generator_params(&state.generator, false);
    let outputs = generator_outputs(&params, &state.config, noise);
    stack_steps(&outputs)
}

/// Critic scores for a batch of sequences, one real number per sequence.
pub fn discriminator_forward(sequences: &Array3<f64>, state: &GanState) -> Array1<f64> {
    let params = critic_params(&state.critic, false);
    let inputs = sequence_nodes(sequences);
    let scores = critic_scores(&params, &inputs, state.config.critic_hidden);
    scores.value().column(0).to_owned()
}

/// Splits a `[batch, timesteps, features]` batch into per-timestep constant
/// nodes.
pub(crate) fn sequence_nodes(batch: &Array3<f64>) -> Vec<Var> {
    (0..batch.dim().1)
        .map(|t| Var::constant(batch.slice(s![.., t, ..]).to_owned()))
        .collect()
}

pub(crate) fn stack_steps(steps: &[Var]) -> Array3<f64> {
    let (batch, features) = steps[0].value().dim();
    let mut out = Array3::zeros((batch, steps.len(), features));
    for (t, node) in steps.iter().enumerate() {
        out.slice_mut(s![.., t, ..]).assign(node.value());
    }
    out
}

/// Penalty node for unit input-gradient norms: `score` maps per-timestep
/// interpolate nodes to `[batch, 1]` critic scores; the result is
/// `lambda_gp * mean((||d score / d input||_2 - 1)^2)` over the batch. The
/// inner gradient stays on the tape, so differentiating the result with
/// respect to critic weights sees through it.
pub(crate) fn gradient_penalty_node(
    interpolates: &[Var],
    score: impl Fn(&[Var]) -> Var,
    lambda_gp: f64,
) -> Var {
    let total = score(interpolates).sum_all();
    let inputs: Vec<&Var> = interpolates.iter().collect();
    let input_grads = grad(&total, &inputs);
    let mut squared: Option<Var> = None; // [batch, 1] accumulated over timesteps
    for g in &input_grads {
        let term = g.square().sum_cols();
        squared = Some(match squared {
            Some(acc) => acc.add(&term),
            None => term,
        });
    }
    // The epsilon keeps sqrt differentiable at an all-zero gradient; it
    // perturbs the penalty by less than 1e-12.
    let norm = squared.expect("timesteps >= 1").add_scalar(1e-12).sqrt();
    norm.add_scalar(-1.0).square().mean_all().scale(lambda_gp)
}

/// Per-sample interpolates between real and fake sequences with u ~ U(0, 1),
/// returned as per-timestep `[batch, features]` arrays.
pub(crate) fn interpolate_batches(
    real: &Array3<f64>,
    fake: &Array3<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<Array2<f64>> {
    assert_eq!(real.dim(), fake.dim(), "gradient penalty: batch shape mismatch");
    let (batch, steps, features) = real.dim();
    let us: Vec<f64> = (0..batch).map(|_| rng.gen::<f64>()).collect();
    (0..steps)
        .map(|t| {
            let mut m = Array2::zeros((batch, features));
            for b in 0..batch {
                for f in 0..features {
                    m[(b, f)] = us[b] * real[(b, t, f)] + (1.0 - us[b]) * fake[(b, t, f)];
                }
            }
            m
        })
        .collect()
}

/// Gradient penalty value for a real/fake batch pair, sampling one
/// interpolation coefficient per sample from `rng`.
pub fn gradient_penalty(
    real: &Array3<f64>,
    fake: &Array3<f64>,
    state: &GanState,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let interpolates: Vec<Var> = interpolate_batches(real, fake, rng)
        .into_iter()
        .map(Var::leaf)
        .collect();
    let params = critic_params(&state.critic, false);
    let hidden = state.config.critic_hidden;
    gradient_penalty_node(&interpolates, |xs| critic_scores(&params, xs, hidden), state.config.lambda_gp)
        .scalar()
}
