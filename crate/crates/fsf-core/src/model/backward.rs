//! Reverse-mode gradients for the classifier, derived by hand against the
//! forward pass in [`super::forward`] and checked against central finite
//! differences (see [`super::gradcheck`]).

use ndarray::{Array1, Array2};

use super::forward::{forward_cached, head_slice, Cache};
use super::loss::{loss_and_dlogits, LossKind};
use super::math::{add_outer, col_sum, layer_norm_vjp, softmax_rows_vjp, softmax_vjp};
use super::{Gradients, ModelError, ModelWeights};

/// Loss value and exact gradients for one labelled window.
///
/// Runs the forward pass, differentiates the requested loss at the logits,
/// and backpropagates through every stage down to the input projection.
pub fn loss_and_gradients(
    w: &ModelWeights,
    x: &Array2<f64>,
    kind: LossKind,
    label: usize,
    class_weight: f64,
) -> Result<(f64, Gradients), ModelError> {
    let cache = forward_cached(w, x)?;
    let (loss, dlogits) = loss_and_dlogits(kind, cache.probs.view(), label, class_weight);
    let grads = backward(w, &cache, &dlogits);
    Ok((loss, grads))
}

/// Loss value only (used by the finite-difference harness).
pub fn loss_value(
    w: &ModelWeights,
    x: &Array2<f64>,
    kind: LossKind,
    label: usize,
    class_weight: f64,
) -> Result<f64, ModelError> {
    let cache = forward_cached(w, x)?;
    Ok(loss_and_dlogits(kind, cache.probs.view(), label, class_weight).0)
}

pub(crate) fn backward(w: &ModelWeights, cache: &Cache, dlogits: &Array1<f64>) -> Gradients {
    let cfg = &w.config;
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut g = ModelWeights::zeros(cfg);

    // Classification head: logits = pooled·W + b.
    add_outer(&mut g.cls_w, cache.pooled.view(), dlogits.view());
    g.cls_b.assign(dlogits);
    let dpooled = w.cls_w.dot(dlogits);

    // Pooling projection: pooled = cat·W_out.
    add_outer(&mut g.pool.wout, cache.pool.cat.view(), dpooled.view());
    let dcat = w.pool.wout.dot(&dpooled);

    // Pooling heads. Shared k/v accumulate across heads.
    let t = cfg.timesteps;
    let mut dkmat = Array2::<f64>::zeros((t, cfg.d_model));
    let mut dvmat = Array2::<f64>::zeros((t, cfg.d_model));
    for j in 0..cfg.pool_heads {
        let d = cfg.d_model;
        let dctx = dcat.slice(ndarray::s![j * d..(j + 1) * d]);
        // context_j = attn_j·v
        let dattn = cache.pool.v.dot(&dctx);
        add_outer(&mut dvmat, cache.pool.attn[j].view(), dctx);
        let dscores = softmax_vjp(cache.pool.attn[j].view(), dattn.view());
        // scores = k·q_j·scale
        let dq = cache.pool.k.t().dot(&dscores) * scale;
        for ti in 0..t {
            let s = dscores[ti] * scale;
            for di in 0..d {
                dkmat[[ti, di]] += s * cache.pool.q[j][di];
            }
        }
        // q_j = u_j·wq_j
        g.pool.seeds[j].assign(&w.pool.wq[j].dot(&dq));
        add_outer(&mut g.pool.wq[j], w.pool.seeds[j].view(), dq.view());
    }
    // k = encoded·wK, v = encoded·wV
    g.pool.wk = cache.encoded.t().dot(&dkmat);
    g.pool.wv = cache.encoded.t().dot(&dvmat);
    let mut dz = dkmat.dot(&w.pool.wk.t()) + dvmat.dot(&w.pool.wv.t());

    // Encoder layers, in reverse.
    for (lw, lc, lg) in itertools_rev(w, cache, &mut g) {
        // z_out = LN2(a + ffn)
        let dr2 = layer_norm_vjp(&lc.ln2, lw.ln2.gain.view(), &dz, &mut lg.ln2.gain, &mut lg.ln2.bias);
        let mut da = dr2.clone();
        let dfout = dr2;
        // ffn = relu(a·W1 + b1)·W2 + b2
        lg.w2 = lc.h_ff.t().dot(&dfout);
        lg.b2 = col_sum(&dfout);
        let dhff = dfout.dot(&lw.w2.t());
        let mut dpre1 = dhff;
        dpre1.zip_mut_with(&lc.pre1, |dv, &p| {
            if p <= 0.0 {
                *dv = 0.0;
            }
        });
        lg.w1 = lc.a.t().dot(&dpre1);
        lg.b1 = col_sum(&dpre1);
        da += &dpre1.dot(&lw.w1.t());
        // a = LN1(z_in + attn_out)
        let dr1 = layer_norm_vjp(&lc.ln1, lw.ln1.gain.view(), &da, &mut lg.ln1.gain, &mut lg.ln1.bias);
        let mut dz_in = dr1.clone();
        let dm = dr1;
        // attn_out = h_cat·W_o
        lg.wo = lc.h_cat.t().dot(&dm);
        let dh_cat = dm.dot(&lw.wo.t());
        for h in 0..cfg.heads {
            let dh = head_slice(&dh_cat, h, dk);
            // head = attn·v
            let dattn = dh.dot(&lc.v[h].t());
            let dv = lc.attn[h].t().dot(&dh);
            let dscores = softmax_rows_vjp(&lc.attn[h], &dattn);
            // scores = q·kᵀ·scale
            let dq = dscores.dot(&lc.k[h]) * scale;
            let dkh = dscores.t().dot(&lc.q[h]) * scale;
            dz_in += &dq.dot(&lw.wq[h].t());
            dz_in += &dkh.dot(&lw.wk[h].t());
            dz_in += &dv.dot(&lw.wv[h].t());
            lg.wq[h] = lc.z_in.t().dot(&dq);
            lg.wk[h] = lc.z_in.t().dot(&dkh);
            lg.wv[h] = lc.z_in.t().dot(&dv);
        }
        dz = dz_in;
    }

    // Embedding: z0 = x·W_proj + b + pos.
    g.pos.assign(&dz);
    g.proj_b = col_sum(&dz);
    g.proj_w = cache.x.t().dot(&dz);
    g
}

/// Zips layer weights, caches, and gradient slots in reverse layer order.
fn itertools_rev<'a>(
    w: &'a ModelWeights,
    cache: &'a Cache,
    g: &'a mut ModelWeights,
) -> impl Iterator<
    Item = (
        &'a super::weights::EncoderLayerWeights,
        &'a super::forward::LayerCache,
        &'a mut super::weights::EncoderLayerWeights,
    ),
> {
    w.layers
        .iter()
        .zip(cache.layers.iter())
        .zip(g.layers.iter_mut())
        .map(|((lw, lc), lg)| (lw, lc, lg))
        .rev()
}
