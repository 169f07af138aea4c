//! Shared numeric kernels: stable softmax, layer norm, outer products.

use ndarray::{Array1, Array2, ArrayView1, Axis};

/// Numerically stable softmax of a vector (max-shifted).
pub fn softmax(x: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = x.mapv(|v| (v - max).exp());
    let sum: f64 = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

/// Softmax over each row of a matrix.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Given `y = softmax(s)` and an adjoint `dy`, returns `ds`:
/// `ds = y ⊙ (dy − <dy, y>)`.
pub fn softmax_vjp(y: ArrayView1<'_, f64>, dy: ArrayView1<'_, f64>) -> Array1<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    Array1::from_iter(y.iter().zip(dy).map(|(&yi, &di)| yi * (di - dot)))
}

/// Row-wise softmax VJP for attention matrices.
pub fn softmax_rows_vjp(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(y.raw_dim());
    for ((mut orow, yrow), dyrow) in out.rows_mut().into_iter().zip(y.rows()).zip(dy.rows()) {
        let dot: f64 = yrow.iter().zip(dyrow).map(|(a, b)| a * b).sum();
        for ((o, &yi), &di) in orow.iter_mut().zip(yrow).zip(dyrow) {
            *o = yi * (di - dot);
        }
    }
    out
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(x: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in x.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub const LN_EPSILON: f64 = 1e-5;

/// Per-row layer-norm cache needed by the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache {
    /// Normalized input `(x - mean) / sqrt(var + eps)`, same shape as input.
    pub xhat: Array2<f64>,
    /// Per-row inverse stddev `1 / sqrt(var + eps)`.
    pub istd: Array1<f64>,
}

/// Row-wise layer norm over the feature axis with learnable gain and bias.
pub fn layer_norm(
    x: &Array2<f64>,
    gain: ArrayView1<'_, f64>,
    bias: ArrayView1<'_, f64>,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut istd = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(istd.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPSILON).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
        *is = inv;
    }
    let mut out = xhat.clone();
    for mut row in out.rows_mut() {
        for ((v, &g), &b) in row.iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    (out, LnCache { xhat, istd })
}

/// Backward through [`layer_norm`]. Returns `dx` and accumulates the gain and
/// bias gradients into `dgain`/`dbias`.
pub fn layer_norm_vjp(
    cache: &LnCache,
    gain: ArrayView1<'_, f64>,
    dy: &Array2<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for t in 0..dy.nrows() {
        let dyr = dy.row(t);
        let xh = cache.xhat.row(t);
        let istd = cache.istd[t];
        // dxhat = dy ⊙ gain
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for ((&dyv, &g), &xv) in dyr.iter().zip(gain).zip(xh) {
            let dxh = dyv * g;
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xv;
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        for (j, ((&dyv, &g), &xv)) in dyr.iter().zip(gain).zip(xh).enumerate() {
            let dxh = dyv * g;
            dx[[t, j]] = istd * (dxh - mean_dxhat - xv * mean_dxhat_xhat);
        }
        for ((dg, db), (&dyv, &xv)) in
            dgain.iter_mut().zip(dbias.iter_mut()).zip(dyr.iter().zip(xh))
        {
            *dg += dyv * xv;
            *db += dyv;
        }
    }
    dx
}

/// Outer product `a ⊗ b` as an `[a.len(), b.len()]` matrix.
pub fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            out[[i, j]] = av * bv;
        }
    }
    out
}

/// Accumulate `dst += a ⊗ b`.
pub fn add_outer(dst: &mut Array2<f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            dst[[i, j]] += av * bv;
        }
    }
}

/// Column sums (bias gradients).
pub fn col_sum(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_sums_to_one_and_survives_large_logits() {
        let p = softmax(array![1e4, 1e4 + 2.0, -1e4].view());
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p[1] > p[0] && p[0] > p[2]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(array![0.5, 0.5, 0.2].view()), 0);
        assert_eq!(argmax(array![0.1, 0.7, 0.7].view()), 1);
    }

    #[test]
    fn layer_norm_constant_row_returns_bias() {
        let x = Array2::from_elem((2, 4), 3.5);
        let gain = array![2.0, 2.0, 2.0, 2.0];
        let bias = array![0.1, 0.2, 0.3, 0.4];
        let (y, _) = layer_norm(&x, gain.view(), bias.view());
        for t in 0..2 {
            for j in 0..4 {
                assert!((y[[t, j]] - bias[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]];
        let gain = Array1::ones(4);
        let bias = Array1::zeros(4);
        let (y, _) = layer_norm(&x, gain.view(), bias.view());
        for row in y.rows() {
            let mean: f64 = row.sum() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps shifts variance slightly
        }
    }

    #[test]
    fn softmax_vjp_matches_full_jacobian() {
        let y = softmax(array![0.3, -1.2, 0.8, 0.0].view());
        let dy = array![0.5, -0.25, 1.5, 2.0];
        let ds = softmax_vjp(y.view(), dy.view());
        // J[i][j] = y_i (delta_ij - y_j); ds = J^T dy (J symmetric here).
        for i in 0..4 {
            let mut expect = 0.0;
            for j in 0..4 {
                let jac = y[j] * ((i == j) as usize as f64 - y[i]);
                expect += jac * dy[j];
            }
            assert!((ds[i] - expect).abs() < 1e-12);
        }
    }
}
