//! Weight container, initialization, and flat tensor views.
//!
//! Several consumers (the optimizer, per-sample clipping, noising, federated
//! averaging, checkpointing) need to treat the model as a flat list of
//! tensors. [`ModelWeights::flat`]/[`ModelWeights::flat_mut`] expose every
//! tensor as a contiguous `f64` slice in one fixed, documented order;
//! [`ModelWeights::named`] adds stable names and shapes for serialization.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::ModelConfig;
use crate::rng::{derive_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerWeights {
    /// Per-head query/key/value maps, each `[d_model, head_dim]`.
    pub wq: Vec<Array2<f64>>,
    pub wk: Vec<Array2<f64>>,
    pub wv: Vec<Array2<f64>>,
    /// Output map over the concatenated heads, `[d_model, d_model]`.
    pub wo: Array2<f64>,
    pub ln1: LayerNormParams,
    /// Feed-forward expansion `[d_model, ffn_hidden]` and projection back.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingWeights {
    /// Shared key/value maps over the encoder output, `[d_model, d_model]`.
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    /// Learnable query seed per pooling head, `[d_model]`.
    pub seeds: Vec<Array1<f64>>,
    /// Per-head query maps, `[d_model, d_model]`.
    pub wq: Vec<Array2<f64>>,
    /// Map from concatenated head contexts back to `d_model`,
    /// `[pool_heads * d_model, d_model]`.
    pub wout: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// Input projection `[features, d_model]` plus bias.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// Learnable positional encodings `[timesteps, d_model]`.
    pub pos: Array2<f64>,
    pub layers: Vec<EncoderLayerWeights>,
    pub pool: PoolingWeights,
    /// Classification head `[d_model, classes]` plus bias.
    pub cls_w: Array2<f64>,
    pub cls_b: Array1<f64>,
}

/// Gradients mirror the weight container tensor-for-tensor.
pub type Gradients = ModelWeights;

/// Mutable visitor item: name is produced lazily to keep hot paths
/// allocation-free.
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl ModelWeights {
    /// All-zero weights with the given shape (gradient accumulators).
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let dk = config.head_dim();
        let layer = || EncoderLayerWeights {
            wq: (0..config.heads).map(|_| Array2::zeros((d, dk))).collect(),
            wk: (0..config.heads).map(|_| Array2::zeros((d, dk))).collect(),
            wv: (0..config.heads).map(|_| Array2::zeros((d, dk))).collect(),
            wo: Array2::zeros((d, d)),
            ln1: LayerNormParams { gain: Array1::zeros(d), bias: Array1::zeros(d) },
            w1: Array2::zeros((d, config.ffn_hidden)),
            b1: Array1::zeros(config.ffn_hidden),
            w2: Array2::zeros((config.ffn_hidden, d)),
            b2: Array1::zeros(d),
            ln2: LayerNormParams { gain: Array1::zeros(d), bias: Array1::zeros(d) },
        };
        Self {
            config: *config,
            proj_w: Array2::zeros((config.features, d)),
            proj_b: Array1::zeros(d),
            pos: Array2::zeros((config.timesteps, d)),
            layers: (0..config.layers).map(|_| layer()).collect(),
            pool: PoolingWeights {
                wk: Array2::zeros((d, d)),
                wv: Array2::zeros((d, d)),
                seeds: (0..config.pool_heads).map(|_| Array1::zeros(d)).collect(),
                wq: (0..config.pool_heads).map(|_| Array2::zeros((d, d))).collect(),
                wout: Array2::zeros((config.pool_heads * d, d)),
            },
            cls_w: Array2::zeros((d, config.classes)),
            cls_b: Array1::zeros(config.classes),
        }
    }

    /// Seeded initialization: linear maps are uniform in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases and positional encodings are
    /// zero, layer-norm gains are one. Pooling query seeds are treated as
    /// `1 x d` maps. Deterministic per seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut w = Self::zeros(config);
        let mut rng = derive_rng(seed, Stream::Init, &[]);
        let mut glorot = |m: &mut [f64], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in m {
                *x = rng.gen_range(-limit..=limit);
            }
        };
        let d = config.d_model;
        let dk = config.head_dim();
        glorot(slice_mut(&mut w.proj_w), config.features, d);
        for layer in &mut w.layers {
            for h in 0..config.heads {
                glorot(slice_mut(&mut layer.wq[h]), d, dk);
                glorot(slice_mut(&mut layer.wk[h]), d, dk);
                glorot(slice_mut(&mut layer.wv[h]), d, dk);
            }
            glorot(slice_mut(&mut layer.wo), d, d);
            layer.ln1.gain.fill(1.0);
            layer.ln2.gain.fill(1.0);
            glorot(slice_mut(&mut layer.w1), d, config.ffn_hidden);
            glorot(slice_mut(&mut layer.w2), config.ffn_hidden, d);
        }
        glorot(slice_mut(&mut w.pool.wk), d, d);
        glorot(slice_mut(&mut w.pool.wv), d, d);
        for j in 0..config.pool_heads {
            glorot(w.pool.seeds[j].as_slice_mut().expect("contiguous"), 1, d);
            glorot(slice_mut(&mut w.pool.wq[j]), d, d);
        }
        glorot(slice_mut(&mut w.pool.wout), config.pool_heads * d, d);
        glorot(slice_mut(&mut w.cls_w), d, config.classes);
        w
    }

    /// Immutable flat views over every tensor, in the canonical order.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.tensor_count());
        out.push(slice(&self.proj_w));
        out.push(self.proj_b.as_slice().expect("contiguous"));
        out.push(slice(&self.pos));
        for layer in &self.layers {
            for m in layer.wq.iter().chain(&layer.wk).chain(&layer.wv) {
                out.push(slice(m));
            }
            out.push(slice(&layer.wo));
            out.push(layer.ln1.gain.as_slice().expect("contiguous"));
            out.push(layer.ln1.bias.as_slice().expect("contiguous"));
            out.push(slice(&layer.w1));
            out.push(layer.b1.as_slice().expect("contiguous"));
            out.push(slice(&layer.w2));
            out.push(layer.b2.as_slice().expect("contiguous"));
            out.push(layer.ln2.gain.as_slice().expect("contiguous"));
            out.push(layer.ln2.bias.as_slice().expect("contiguous"));
        }
        out.push(slice(&self.pool.wk));
        out.push(slice(&self.pool.wv));
        for s in &self.pool.seeds {
            out.push(s.as_slice().expect("contiguous"));
        }
        for m in &self.pool.wq {
            out.push(slice(m));
        }
        out.push(slice(&self.pool.wout));
        out.push(slice(&self.cls_w));
        out.push(self.cls_b.as_slice().expect("contiguous"));
        out
    }

    /// Mutable flat views, same order as [`Self::flat`].
    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.tensor_count());
        out.push(slice_mut(&mut self.proj_w));
        out.push(self.proj_b.as_slice_mut().expect("contiguous"));
        out.push(slice_mut(&mut self.pos));
        for layer in &mut self.layers {
            for m in layer.wq.iter_mut().chain(&mut layer.wk).chain(&mut layer.wv) {
                out.push(slice_mut(m));
            }
            out.push(slice_mut(&mut layer.wo));
            out.push(layer.ln1.gain.as_slice_mut().expect("contiguous"));
            out.push(layer.ln1.bias.as_slice_mut().expect("contiguous"));
            out.push(slice_mut(&mut layer.w1));
            out.push(layer.b1.as_slice_mut().expect("contiguous"));
            out.push(slice_mut(&mut layer.w2));
            out.push(layer.b2.as_slice_mut().expect("contiguous"));
            out.push(layer.ln2.gain.as_slice_mut().expect("contiguous"));
            out.push(layer.ln2.bias.as_slice_mut().expect("contiguous"));
        }
        out.push(slice_mut(&mut self.pool.wk));
        out.push(slice_mut(&mut self.pool.wv));
        for s in &mut self.pool.seeds {
            out.push(s.as_slice_mut().expect("contiguous"));
        }
        for m in &mut self.pool.wq {
            out.push(slice_mut(m));
        }
        out.push(slice_mut(&mut self.pool.wout));
        out.push(slice_mut(&mut self.cls_w));
        out.push(self.cls_b.as_slice_mut().expect("contiguous"));
        out
    }

    /// Stable tensor names, aligned index-for-index with [`Self::flat`].
    pub fn tensor_names(config: &ModelConfig) -> Vec<String> {
        let mut out = Vec::new();
        out.push("embed.w".into());
        out.push("embed.b".into());
        out.push("embed.pos".into());
        for i in 0..config.layers {
            for kind in ["q", "k", "v"] {
                for h in 0..config.heads {
                    out.push(format!("enc{i}.att.{kind}{h}"));
                }
            }
            out.push(format!("enc{i}.att.out"));
            out.push(format!("enc{i}.ln1.g"));
            out.push(format!("enc{i}.ln1.b"));
            out.push(format!("enc{i}.ffn.w1"));
            out.push(format!("enc{i}.ffn.b1"));
            out.push(format!("enc{i}.ffn.w2"));
            out.push(format!("enc{i}.ffn.b2"));
            out.push(format!("enc{i}.ln2.g"));
            out.push(format!("enc{i}.ln2.b"));
        }
        out.push("pool.k".into());
        out.push("pool.v".into());
        for j in 0..config.pool_heads {
            out.push(format!("pool.seed{j}"));
        }
        for j in 0..config.pool_heads {
            out.push(format!("pool.q{j}"));
        }
        out.push("pool.out".into());
        out.push("head.w".into());
        out.push("head.b".into());
        out
    }

    /// Named tensors with shapes, for checkpointing.
    pub fn named(&self) -> Vec<NamedTensor<'_>> {
        let names = Self::tensor_names(&self.config);
        let shapes = self.shapes();
        names
            .into_iter()
            .zip(shapes)
            .zip(self.flat())
            .map(|((name, shape), data)| NamedTensor { name, shape, data })
            .collect()
    }

    /// Tensor shapes aligned with [`Self::flat`].
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        fn s2(a: &Array2<f64>) -> Vec<usize> {
            a.shape().to_vec()
        }
        fn s1(a: &Array1<f64>) -> Vec<usize> {
            a.shape().to_vec()
        }
        let mut out = Vec::with_capacity(self.tensor_count());
        out.push(s2(&self.proj_w));
        out.push(s1(&self.proj_b));
        out.push(s2(&self.pos));
        for layer in &self.layers {
            for m in layer.wq.iter().chain(&layer.wk).chain(&layer.wv) {
                out.push(s2(m));
            }
            out.push(s2(&layer.wo));
            out.push(s1(&layer.ln1.gain));
            out.push(s1(&layer.ln1.bias));
            out.push(s2(&layer.w1));
            out.push(s1(&layer.b1));
            out.push(s2(&layer.w2));
            out.push(s1(&layer.b2));
            out.push(s1(&layer.ln2.gain));
            out.push(s1(&layer.ln2.bias));
        }
        out.push(s2(&self.pool.wk));
        out.push(s2(&self.pool.wv));
        for s in &self.pool.seeds {
            out.push(s1(s));
        }
        for m in &self.pool.wq {
            out.push(s2(m));
        }
        out.push(s2(&self.pool.wout));
        out.push(s2(&self.cls_w));
        out.push(s1(&self.cls_b));
        out
    }

    /// Number of tensors in the flat views.
    pub fn tensor_count(&self) -> usize {
        // embed(3) + per-layer (3 heads-groups * heads + wo + 2 ln + 4 ffn + 2 ln) + pool + head(2)
        3 + self.config.layers * (3 * self.config.heads + 9)
            + (3 + 2 * self.config.pool_heads)
            + 2
    }

    /// Total scalar count; always equals `config.param_count()`.
    pub fn scalar_count(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    /// Elementwise `self += scale * other`, tensor-aligned.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.flat_mut().into_iter().zip(other.flat()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    /// Elementwise `self *= factor`.
    pub fn scale(&mut self, factor: f64) {
        for t in self.flat_mut() {
            for x in t {
                *x *= factor;
            }
        }
    }

    /// Squared L2 norm over every tensor (the global-norm convention used by
    /// gradient clipping).
    pub fn squared_norm(&self) -> f64 {
        self.flat().iter().flat_map(|s| s.iter()).map(|x| x * x).sum()
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("weight tensors are standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("weight tensors are standard layout")
}
