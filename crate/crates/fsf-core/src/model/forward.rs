//! Forward pass: embedding, stacked encoder layers, attention pooling, and
//! the linear classification head.
//!
//! Layout conventions (row vectors throughout):
//!
//! - input `x`: `[timesteps, features]`
//! - embedded `z = x·W_proj + b + pos`: `[T, d]`
//! - per head `h`: `q = z·Wq_h`, `s = q·kᵀ / sqrt(d_k)`, `attn = softmax(s)`
//!   row-wise, `head = attn·v`; heads concatenate to `[T, d]` and mix through
//!   `W_o`. Both residual sums are layer-normalized (`A = LN1(z + MHSA(z))`,
//!   `z' = LN2(A + FFN(A))`).
//! - pooling: shared `k = z'·wK`, `v = z'·wV`; per head `j` a learnable seed
//!   `u_j` forms the query `q_j = u_j·wq_j`, scores `k·q_j / sqrt(d_k)`
//!   softmax over timesteps, and context `a_j·v`. Contexts concatenate and
//!   project to `[d]`.
//! - classifier: `logits = pooled·W_cls + b`, probabilities by softmax,
//!   prediction by lowest-index argmax.

use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::math::{argmax, layer_norm, softmax, softmax_rows, LnCache};
use super::{ModelError, ModelWeights};

/// Public view of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Embedded input `[T, d]`.
    pub embedded: Array2<f64>,
    /// Per-layer, per-head attention maps `[T, T]` (rows sum to one).
    pub attention: Vec<Vec<Array2<f64>>>,
    /// Final encoder output `[T, d]`.
    pub encoded: Array2<f64>,
    /// Pooling attention per head `[T]` (sums to one).
    pub pool_attention: Vec<Array1<f64>>,
    /// Per-head pooling context vectors `[d]` before the output projection.
    pub contexts: Vec<Array1<f64>>,
    /// Pooled representation `[d]`.
    pub pooled: Array1<f64>,
    /// Raw class scores `[C]`.
    pub logits: Array1<f64>,
    /// Softmax probabilities `[C]`.
    pub probs: Array1<f64>,
    /// Argmax class (ties resolve to the lowest index).
    pub predicted: usize,
}

pub(crate) struct LayerCache {
    pub z_in: Array2<f64>,
    pub q: Vec<Array2<f64>>,
    pub k: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub attn: Vec<Array2<f64>>,
    pub h_cat: Array2<f64>,
    pub ln1: LnCache,
    /// First layer-norm output (feed-forward input).
    pub a: Array2<f64>,
    /// Feed-forward pre-activation.
    pub pre1: Array2<f64>,
    /// Feed-forward hidden activation.
    pub h_ff: Array2<f64>,
    pub ln2: LnCache,
}

pub(crate) struct PoolCache {
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub q: Vec<Array1<f64>>,
    pub attn: Vec<Array1<f64>>,
    pub contexts: Vec<Array1<f64>>,
    pub cat: Array1<f64>,
}

pub(crate) struct Cache {
    pub x: Array2<f64>,
    pub embedded: Array2<f64>,
    pub layers: Vec<LayerCache>,
    pub encoded: Array2<f64>,
    pub pool: PoolCache,
    pub pooled: Array1<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
    pub predicted: usize,
}

impl Cache {
    pub fn trace(&self) -> ForwardTrace {
        ForwardTrace {
            embedded: self.embedded.clone(),
            attention: self.layers.iter().map(|l| l.attn.clone()).collect(),
            encoded: self.encoded.clone(),
            pool_attention: self.pool.attn.clone(),
            contexts: self.pool.contexts.clone(),
            pooled: self.pooled.clone(),
            logits: self.logits.clone(),
            probs: self.probs.clone(),
            predicted: self.predicted,
        }
    }
}

/// Runs the full forward pass, checking input shape and flagging the first
/// stage that produces a non-finite value.
pub fn forward(w: &ModelWeights, x: &Array2<f64>) -> Result<ForwardTrace, ModelError> {
    forward_cached(w, x).map(|c| c.trace())
}

pub(crate) fn forward_cached(w: &ModelWeights, x: &Array2<f64>) -> Result<Cache, ModelError> {
    let cfg = &w.config;
    let expected = (cfg.timesteps, cfg.features);
    if x.dim() != expected {
        return Err(ModelError::BadInputShape { expected, got: x.dim() });
    }

    let mut z = x.dot(&w.proj_w);
    z += &w.proj_b;
    z += &w.pos;
    ensure_finite(z.iter(), || "embed".into())?;
    let embedded = z.clone();

    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.layers);
    for (li, lw) in w.layers.iter().enumerate() {
        let z_in = z;
        let mut q = Vec::with_capacity(cfg.heads);
        let mut k = Vec::with_capacity(cfg.heads);
        let mut v = Vec::with_capacity(cfg.heads);
        let mut attn = Vec::with_capacity(cfg.heads);
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = z_in.dot(&lw.wq[h]);
            let kh = z_in.dot(&lw.wk[h]);
            let vh = z_in.dot(&lw.wv[h]);
            let scores = qh.dot(&kh.t()) * scale;
            let ah = softmax_rows(&scores);
            heads.push(ah.dot(&vh));
            q.push(qh);
            k.push(kh);
            v.push(vh);
            attn.push(ah);
        }
        let head_views: Vec<_> = heads.iter().map(|m| m.view()).collect();
        let h_cat = concatenate(Axis(1), &head_views).expect("head widths agree");
        let m = h_cat.dot(&lw.wo);
        let r1 = &z_in + &m;
        let (a, ln1) = layer_norm(&r1, lw.ln1.gain.view(), lw.ln1.bias.view());
        let mut pre1 = a.dot(&lw.w1);
        pre1 += &lw.b1;
        let h_ff = pre1.mapv(|u| u.max(0.0));
        let mut f_out = h_ff.dot(&lw.w2);
        f_out += &lw.b2;
        let r2 = &a + &f_out;
        let (z_out, ln2) = layer_norm(&r2, lw.ln2.gain.view(), lw.ln2.bias.view());
        ensure_finite(z_out.iter(), || format!("encoder{li}"))?;
        layers.push(LayerCache { z_in, q, k, v, attn, h_cat, ln1, a, pre1, h_ff, ln2 });
        z = z_out;
    }
    let encoded = z;

    let kmat = encoded.dot(&w.pool.wk);
    let vmat = encoded.dot(&w.pool.wv);
    let mut pq = Vec::with_capacity(cfg.pool_heads);
    let mut pattn = Vec::with_capacity(cfg.pool_heads);
    let mut contexts = Vec::with_capacity(cfg.pool_heads);
    for j in 0..cfg.pool_heads {
        let qj = w.pool.seeds[j].dot(&w.pool.wq[j]);
        let scores = kmat.dot(&qj) * scale;
        let aj = softmax(scores.view());
        contexts.push(aj.dot(&vmat));
        pq.push(qj);
        pattn.push(aj);
    }
    let ctx_views: Vec<_> = contexts.iter().map(|c| c.view()).collect();
    let cat = concatenate(Axis(0), &ctx_views).expect("context widths agree");
    let pooled = cat.dot(&w.pool.wout);
    ensure_finite(pooled.iter(), || "pooling".into())?;

    let logits = pooled.dot(&w.cls_w) + &w.cls_b;
    let probs = softmax(logits.view());
    ensure_finite(probs.iter(), || "classifier".into())?;
    let predicted = argmax(probs.view());

    Ok(Cache {
        x: x.clone(),
        embedded,
        layers,
        encoded,
        pool: PoolCache { k: kmat, v: vmat, q: pq, attn: pattn, contexts, cat },
        pooled,
        logits,
        probs,
        predicted,
    })
}

fn ensure_finite<'a>(
    mut values: impl Iterator<Item = &'a f64>,
    stage: impl FnOnce() -> String,
) -> Result<(), ModelError> {
    if values.any(|v| !v.is_finite()) {
        Err(ModelError::NonFinite { stage: stage() })
    } else {
        Ok(())
    }
}

/// Per-head slice of the concatenated head axis.
pub(crate) fn head_slice(m: &Array2<f64>, head: usize, dk: usize) -> ndarray::ArrayView2<'_, f64> {
    m.slice(s![.., head * dk..(head + 1) * dk])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::{derive_rng, Stream};
    use rand::Rng;

    fn random_input(cfg: &ModelConfig, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, Stream::Test, &[3]);
        Array2::from_shape_fn((cfg.timesteps, cfg.features), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 1);
        let x = Array2::zeros((cfg.timesteps + 1, cfg.features));
        match forward(&w, &x) {
            Err(ModelError::BadInputShape { expected, got }) => {
                assert_eq!(expected, (cfg.timesteps, cfg.features));
                assert_eq!(got, (cfg.timesteps + 1, cfg.features));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn flags_non_finite_at_embed_stage() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 1);
        let mut x = random_input(&cfg, 1);
        x[[0, 0]] = f64::NAN;
        match forward(&w, &x) {
            Err(ModelError::NonFinite { stage }) => assert_eq!(stage, "embed"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn zero_weights_give_uniform_probs_and_class_zero() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::zeros(&cfg);
        // Layer norm with zero gain collapses everything; logits all equal.
        let trace = forward(&w, &random_input(&cfg, 2)).unwrap();
        let uniform = 1.0 / cfg.classes as f64;
        for p in trace.probs.iter() {
            assert!((p - uniform).abs() < 1e-12);
        }
        assert_eq!(trace.predicted, 0);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 3);
        let trace = forward(&w, &random_input(&cfg, 3)).unwrap();
        for layer in &trace.attention {
            for head in layer {
                for row in head.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-9);
                }
            }
        }
        for a in &trace.pool_attention {
            assert!((a.sum() - 1.0).abs() < 1e-9);
        }
        assert!((trace.probs.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn permuting_timesteps_leaves_pooled_output_unchanged_without_positions() {
        // Positional encodings are zero at init, every other stage is
        // row-equivariant, and pooling averages over rows, so a timestep
        // permutation must not move the pooled vector.
        let cfg = ModelConfig::tiny();
        let w = ModelWeights::init(&cfg, 4);
        assert!(w.pos.iter().all(|&p| p == 0.0));
        let x = random_input(&cfg, 4);
        let mut perm = x.clone();
        let order = [2usize, 0, 3, 1];
        for (dst, &src) in order.iter().enumerate() {
            for f in 0..cfg.features {
                perm[[dst, f]] = x[[src, f]];
            }
        }
        let a = forward(&w, &x).unwrap();
        let b = forward(&w, &perm).unwrap();
        for (u, v) in a.pooled.iter().zip(b.pooled.iter()) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
        assert_eq!(a.predicted, b.predicted);
    }

    #[test]
    fn embedding_matches_hand_computation() {
        let cfg = ModelConfig { timesteps: 2, features: 2, d_model: 2, layers: 1, heads: 1,
            pool_heads: 1, ffn_hidden: 2, classes: 2 };
        let mut w = ModelWeights::init(&cfg, 1);
        w.proj_w = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        w.proj_b = ndarray::array![0.5, -0.5];
        w.pos = ndarray::array![[0.0, 0.0], [1.0, 1.0]];
        let x = ndarray::array![[1.0, 1.0], [2.0, 0.0]];
        let trace = forward(&w, &x).unwrap();
        // row0: [1*1+1*3, 1*2+1*4] + [0.5,-0.5] + [0,0] = [4.5, 5.5]
        // row1: [2, 4] + [0.5,-0.5] + [1,1] = [3.5, 4.5]
        assert!((trace.embedded[[0, 0]] - 4.5).abs() < 1e-12);
        assert!((trace.embedded[[0, 1]] - 5.5).abs() < 1e-12);
        assert!((trace.embedded[[1, 0]] - 3.5).abs() < 1e-12);
        assert!((trace.embedded[[1, 1]] - 4.5).abs() < 1e-12);
    }
}
