use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use super::forward::{attention_allowed, TraceImage};
use super::{ForwardTrace, Gradients, LayerTensor, Matrix, ModelError, Parameters, TensorId, TokenId};
use crate::math::{axpy, dot, gelu_grad};

/// Which tensors receive gradients. Propagation stops below the lowest layer
/// any selected tensor lives in.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GradientScope {
    tensors: Option<BTreeSet<TensorId>>,
}

impl GradientScope {
    pub fn all() -> Self {
        Self { tensors: None }
    }

    pub fn only(ids: impl IntoIterator<Item = TensorId>) -> Self {
        Self { tensors: Some(ids.into_iter().collect()) }
    }

    pub fn wants(&self, id: TensorId) -> bool {
        self.tensors.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn needs_inputs(&self) -> bool {
        match &self.tensors {
            None => true,
            Some(s) => s.iter().any(|id| !matches!(id, TensorId::Layer(..) | TensorId::FinalGain | TensorId::Unembedding)),
        }
    }

    /// Lowest layer that must be visited, or `None` when no layer is needed.
    fn lowest_layer(&self) -> Option<usize> {
        if self.needs_inputs() {
            return Some(0);
        }
        self.tensors
            .as_ref()
            .and_then(|s| s.iter().filter_map(|id| if let TensorId::Layer(l, _) = id { Some(*l) } else { None }).min())
    }
}

/// Gradient of `-ln p(target)` at the final position for every tensor.
pub fn backward(params: &Parameters, trace: &ForwardTrace, target: TokenId) -> Result<Gradients, ModelError> {
    let p = trace.answer_distribution();
    if target.index() >= p.len() {
        return Err(ModelError::TraceMismatch { reason: "target outside vocabulary" });
    }
    let mut dlogits = p.to_vec();
    dlogits[target.index()] -= 1.0;
    let mut grads = Gradients::zeros(&params.config);
    backward_from_logits(params, trace, &dlogits, 1.0, &GradientScope::all(), &mut grads)?;
    Ok(grads)
}

/// Accumulate `scale * d(loss)/d(theta)` into `grads`, given `dlogits`, the
/// loss gradient with respect to the final-position logits.
pub fn backward_from_logits(
    params: &Parameters,
    trace: &ForwardTrace,
    dlogits: &[f64],
    scale: f64,
    scope: &GradientScope,
    grads: &mut Gradients,
) -> Result<(), ModelError> {
    let c = &params.config;
    if trace.config != *c {
        return Err(ModelError::TraceMismatch { reason: "trace recorded under a different config" });
    }
    if grads.config != *c {
        return Err(ModelError::TraceMismatch { reason: "gradient buffer has a different config" });
    }
    if dlogits.len() != c.vocab_size || trace.layers.len() != c.n_layers {
        return Err(ModelError::TraceMismatch { reason: "shape mismatch" });
    }
    let d = c.d_model;
    let n = trace.n_positions;
    let last = n - 1;
    let dl: Vec<f64> = dlogits.iter().map(|g| g * scale).collect();

    let final_x = &trace.layers[c.n_layers - 1].h_new;
    if scope.wants(TensorId::Unembedding) {
        let xn = &trace.final_normed[last * d..(last + 1) * d];
        for (v, &g) in dl.iter().enumerate() {
            if g != 0.0 {
                axpy(g, xn, grads.unembedding.row_mut(v));
            }
        }
    }
    let lowest = scope.lowest_layer();
    if lowest.is_none() && !scope.wants(TensorId::FinalGain) {
        return Ok(());
    }
    let mut dxn = alloc::vec![0.0; d];
    for (v, &g) in dl.iter().enumerate() {
        if g != 0.0 {
            axpy(g, params.unembedding.row(v), &mut dxn);
        }
    }
    let mut dh = alloc::vec![0.0; n * d];
    let dgain = scope.wants(TensorId::FinalGain).then_some(&mut grads.0.final_gain[..]);
    rms_backward(
        &final_x[last * d..(last + 1) * d],
        &params.final_gain,
        trace.final_rms[last],
        &dxn,
        dgain,
        &mut dh[last * d..(last + 1) * d],
    );
    let Some(lowest) = lowest else { return Ok(()) };

    for l in (lowest..c.n_layers).rev() {
        let need_dx = l > lowest || scope.needs_inputs();
        dh = layer_backward(params, trace, l, &dh, scope, grads, need_dx);
        if !dh.is_empty() {
            for &pos in &trace.layers[l].cache.masked {
                dh[pos * d..(pos + 1) * d].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    if scope.needs_inputs() {
        embed_backward(params, trace, &dh, scope, grads);
    }
    Ok(())
}

fn row_is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// `dW += sum_r dy_r (x) x_r`
fn weight_grad(dy: &[f64], x: &[f64], rows: usize, dw: &mut Matrix) {
    let (o_dim, i_dim) = (dw.rows, dw.cols);
    for r in 0..rows {
        let dyr = &dy[r * o_dim..(r + 1) * o_dim];
        let xr = &x[r * i_dim..(r + 1) * i_dim];
        for (o, &g) in dyr.iter().enumerate() {
            if g != 0.0 {
                axpy(g, xr, dw.row_mut(o));
            }
        }
    }
}

fn bias_grad(dy: &[f64], rows: usize, db: &mut [f64]) {
    let o_dim = db.len();
    for r in 0..rows {
        for (b, g) in db.iter_mut().zip(&dy[r * o_dim..(r + 1) * o_dim]) {
            *b += g;
        }
    }
}

/// `dx_r += W^T dy_r`
fn input_grad(dy: &[f64], rows: usize, w: &Matrix, dx: &mut [f64]) {
    let (o_dim, i_dim) = (w.rows, w.cols);
    for r in 0..rows {
        let dyr = &dy[r * o_dim..(r + 1) * o_dim];
        if row_is_zero(dyr) {
            continue;
        }
        let dxr = &mut dx[r * i_dim..(r + 1) * i_dim];
        for (o, &g) in dyr.iter().enumerate() {
            if g != 0.0 {
                axpy(g, w.row(o), dxr);
            }
        }
    }
}

/// Backward through `y = gain * x / rms(x)`, accumulating into `dx`.
fn rms_backward(x: &[f64], gain: &[f64], rms: f64, dy: &[f64], dgain: Option<&mut [f64]>, dx: &mut [f64]) {
    if row_is_zero(dy) {
        return;
    }
    let d = x.len() as f64;
    let inv = 1.0 / rms;
    if let Some(dg) = dgain {
        for ((g, &yi), &xi) in dg.iter_mut().zip(dy).zip(x) {
            *g += yi * xi * inv;
        }
    }
    let mut s = 0.0;
    for ((&yi, &gi), &xi) in dy.iter().zip(gain).zip(x) {
        s += yi * gi * xi;
    }
    let k = s * inv * inv * inv / d;
    for (((o, &yi), &gi), &xi) in dx.iter_mut().zip(dy).zip(gain).zip(x) {
        *o += yi * gi * inv - xi * k;
    }
}

fn layer_backward(
    params: &Parameters,
    trace: &ForwardTrace,
    l: usize,
    dh: &[f64],
    scope: &GradientScope,
    grads: &mut Gradients,
    need_dx: bool,
) -> Vec<f64> {
    let c = &params.config;
    let (d, ff, heads, hd, m) = (c.d_model, c.d_ff, c.n_heads, c.head_dim(), c.n_image_tokens);
    let n = trace.n_positions;
    let lp = &params.layers[l];
    let lt = &trace.layers[l];
    let cache = &lt.cache;
    let g = &mut grads.0.layers[l];
    let want = |t| scope.wants(TensorId::Layer(l, t));
    let scale = 1.0 / libm::sqrt(hd as f64);

    // Which attention parameters matter below this point.
    let want_attn = need_dx || LayerTensor::ALL[..5].iter().any(|&t| want(t));
    let want_mlp_norm = need_dx || want(LayerTensor::MlpGain);

    let mut dx = if need_dx { dh.to_vec() } else { Vec::new() };

    // MLP branch.
    if want(LayerTensor::MlpOut) {
        weight_grad(dh, &cache.act, n, &mut g.mlp_out);
    }
    if want(LayerTensor::MlpOutBias) {
        bias_grad(dh, n, &mut g.mlp_out_bias);
    }
    let need_pre = want(LayerTensor::MlpIn) || want(LayerTensor::MlpInBias) || want_mlp_norm;
    if need_pre {
        let mut dpre = alloc::vec![0.0; n * ff];
        input_grad(dh, n, &lp.mlp_out, &mut dpre);
        for (dp, &z) in dpre.iter_mut().zip(&cache.pre) {
            if *dp != 0.0 {
                *dp *= gelu_grad(z);
            }
        }
        if want(LayerTensor::MlpIn) {
            weight_grad(&dpre, &cache.mlp_in, n, &mut g.mlp_in);
        }
        if want(LayerTensor::MlpInBias) {
            bias_grad(&dpre, n, &mut g.mlp_in_bias);
        }
        if want_mlp_norm {
            let mut dmlp_in = alloc::vec![0.0; n * d];
            input_grad(&dpre, n, &lp.mlp_in, &mut dmlp_in);
            let mut scratch = alloc::vec![0.0; if need_dx { 0 } else { d }];
            for pos in 0..n {
                let dg = want(LayerTensor::MlpGain).then_some(&mut g.mlp_gain[..]);
                let target = if need_dx { &mut dx[pos * d..(pos + 1) * d] } else { &mut scratch[..] };
                rms_backward(
                    &lt.h_prev[pos * d..(pos + 1) * d],
                    &lp.mlp_gain,
                    cache.rms[pos],
                    &dmlp_in[pos * d..(pos + 1) * d],
                    dg,
                    target,
                );
            }
        }
    }

    if !want_attn {
        return dx;
    }

    // Attention branch.
    if want(LayerTensor::AttnOutput) {
        weight_grad(dh, &cache.ctx, n, &mut g.attn_output);
    }
    let mut dctx = alloc::vec![0.0; n * d];
    input_grad(dh, n, &lp.attn_output, &mut dctx);
    let mut dq = alloc::vec![0.0; n * d];
    let mut dk = alloc::vec![0.0; n * d];
    let mut dv = alloc::vec![0.0; n * d];
    let mut dp = alloc::vec![0.0; n];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            let dci = &dctx[i * d + off..i * d + off + hd];
            if row_is_zero(dci) {
                continue;
            }
            let prow = &cache.probs[(h * n + i) * n..(h * n + i + 1) * n];
            let mut weighted = 0.0;
            for j in 0..n {
                if prow[j] != 0.0 {
                    dp[j] = dot(dci, &cache.v[j * d + off..j * d + off + hd]);
                    weighted += prow[j] * dp[j];
                    axpy(prow[j], dci, &mut dv[j * d + off..j * d + off + hd]);
                }
            }
            let qi = &cache.q[i * d + off..i * d + off + hd];
            for j in 0..n {
                if !attention_allowed(m, i, j) || prow[j] == 0.0 {
                    continue;
                }
                let ds = prow[j] * (dp[j] - weighted) * scale;
                axpy(ds, &cache.k[j * d + off..j * d + off + hd], &mut dq[i * d + off..i * d + off + hd]);
                axpy(ds, qi, &mut dk[j * d + off..j * d + off + hd]);
            }
        }
    }
    if want(LayerTensor::Query) {
        weight_grad(&dq, &cache.attn_in, n, &mut g.query);
    }
    if want(LayerTensor::Key) {
        weight_grad(&dk, &cache.attn_in, n, &mut g.key);
    }
    if want(LayerTensor::Value) {
        weight_grad(&dv, &cache.attn_in, n, &mut g.value);
    }
    if need_dx || want(LayerTensor::AttnGain) {
        let mut dattn_in = alloc::vec![0.0; n * d];
        input_grad(&dq, n, &lp.query, &mut dattn_in);
        input_grad(&dk, n, &lp.key, &mut dattn_in);
        input_grad(&dv, n, &lp.value, &mut dattn_in);
        let mut scratch = alloc::vec![0.0; if need_dx { 0 } else { d }];
        for pos in 0..n {
            let dg = want(LayerTensor::AttnGain).then_some(&mut g.attn_gain[..]);
            let target = if need_dx { &mut dx[pos * d..(pos + 1) * d] } else { &mut scratch[..] };
            rms_backward(
                &lt.h_prev[pos * d..(pos + 1) * d],
                &lp.attn_gain,
                cache.rms[pos],
                &dattn_in[pos * d..(pos + 1) * d],
                dg,
                target,
            );
        }
    }
    dx
}

fn embed_backward(params: &Parameters, trace: &ForwardTrace, dx: &[f64], scope: &GradientScope, grads: &mut Gradients) {
    let c = &params.config;
    let (d, m) = (c.d_model, c.n_image_tokens);
    let n = trace.n_positions;
    if scope.wants(TensorId::PositionEmbedding) {
        for pos in 0..n {
            axpy(1.0, &dx[pos * d..(pos + 1) * d], grads.position_embedding.row_mut(pos));
        }
    }
    if scope.wants(TensorId::TokenEmbedding) {
        for (j, t) in trace.tokens.iter().enumerate() {
            let pos = m + j;
            axpy(1.0, &dx[pos * d..(pos + 1) * d], grads.token_embedding.row_mut(t.index()));
        }
    }
    let dimg = &dx[..m * d];
    match &trace.image {
        TraceImage::Absent => {
            if scope.wants(TensorId::NullImage) {
                axpy(1.0, dimg, &mut grads.null_image.data);
            }
        }
        TraceImage::Features(f) => {
            if scope.wants(TensorId::ImageProjection) {
                weight_grad(dimg, f, 1, &mut grads.image_projection);
            }
            if scope.wants(TensorId::ImageBias) {
                axpy(1.0, dimg, &mut grads.image_bias);
            }
        }
        TraceImage::Embedded => {}
    }
}
