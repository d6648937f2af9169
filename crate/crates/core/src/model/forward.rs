use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{Matrix, ModelConfig, ModelError, Parameters, TokenKind};
use crate::math::{self, dot};

pub(crate) const NORM_EPS: f64 = 1e-6;

/// Index into the text vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(transparent))]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// What fills the image prefix.
#[derive(Clone, Copy, Debug)]
pub enum ImageInput<'a> {
    /// No image: every image position uses the learned null-image embedding.
    Absent,
    /// Raw image features, mapped through the image projection.
    Features(&'a [f32]),
    /// Pre-computed image token embeddings (`n_image_tokens * d_model` values),
    /// bypassing the projection.
    Embedded(&'a [f64]),
}

#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub image: ImageInput<'a>,
    pub text: &'a [TokenId],
}

impl<'a> ModelInput<'a> {
    pub fn new(image: ImageInput<'a>, text: &'a [TokenId]) -> Self {
        Self { image, text }
    }
}

/// Positions whose hidden state is zeroed on entry to a layer.
/// Layers are zero-based.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskPlan {
    suppressed: BTreeMap<usize, BTreeSet<usize>>,
}

impl MaskPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn suppress(&mut self, layer: usize, positions: impl IntoIterator<Item = usize>) {
        let set = self.suppressed.entry(layer).or_default();
        set.extend(positions);
        if set.is_empty() {
            self.suppressed.remove(&layer);
        }
    }

    /// Suppress everything at `layer` except `keep`.
    pub fn keep_only(&mut self, layer: usize, n_positions: usize, keep: &BTreeSet<usize>) {
        self.suppress(layer, (0..n_positions).filter(|p| !keep.contains(p)));
    }

    pub fn is_empty(&self) -> bool {
        self.suppressed.is_empty()
    }

    pub fn suppressed_at(&self, layer: usize) -> Option<&BTreeSet<usize>> {
        self.suppressed.get(&layer)
    }

    pub fn layers(&self) -> impl Iterator<Item = (usize, &BTreeSet<usize>)> {
        self.suppressed.iter().map(|(l, s)| (*l, s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum TraceImage {
    Absent,
    Features(Vec<f64>),
    Embedded,
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerCache {
    pub rms: Vec<f64>,
    pub attn_in: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `heads x N x N`, zero where attention is not allowed.
    pub probs: Vec<f64>,
    pub ctx: Vec<f64>,
    pub mlp_in: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub masked: BTreeSet<usize>,
}

/// Residual-stream capture of one layer; every vector field is `N x d_model`
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub h_prev: Vec<f64>,
    pub attn_out: Vec<f64>,
    pub mlp_out: Vec<f64>,
    pub h_new: Vec<f64>,
    /// Head-averaged attention weights, `N x N`, rows sum to one.
    pub attention: Vec<f64>,
    pub(crate) cache: LayerCache,
}

/// Everything a forward pass saw, per layer and position.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub(crate) config: ModelConfig,
    pub(crate) n_positions: usize,
    pub(crate) tokens: Vec<TokenId>,
    pub(crate) image: TraceImage,
    pub(crate) layers: Vec<LayerTrace>,
    pub(crate) final_rms: Vec<f64>,
    pub(crate) final_normed: Vec<f64>,
    /// `N x vocab` logits of every position.
    pub(crate) logits: Vec<f64>,
    pub(crate) probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_positions(&self) -> usize {
        self.n_positions
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn output_position(&self) -> usize {
        self.n_positions - 1
    }

    pub fn token_kind(&self, position: usize) -> TokenKind {
        self.config.token_kind(position)
    }

    pub fn layer(&self, layer: usize) -> &LayerTrace {
        &self.layers[layer]
    }

    pub fn layers(&self) -> &[LayerTrace] {
        &self.layers
    }

    fn row(v: &[f64], d: usize, pos: usize) -> &[f64] {
        &v[pos * d..(pos + 1) * d]
    }

    pub fn h_prev(&self, layer: usize, pos: usize) -> &[f64] {
        Self::row(&self.layers[layer].h_prev, self.config.d_model, pos)
    }

    pub fn attn_out(&self, layer: usize, pos: usize) -> &[f64] {
        Self::row(&self.layers[layer].attn_out, self.config.d_model, pos)
    }

    pub fn mlp_out(&self, layer: usize, pos: usize) -> &[f64] {
        Self::row(&self.layers[layer].mlp_out, self.config.d_model, pos)
    }

    pub fn h_new(&self, layer: usize, pos: usize) -> &[f64] {
        Self::row(&self.layers[layer].h_new, self.config.d_model, pos)
    }

    /// Row `pos` of the head-averaged attention matrix of `layer`.
    pub fn attention_row(&self, layer: usize, pos: usize) -> &[f64] {
        Self::row(&self.layers[layer].attention, self.n_positions, pos)
    }

    pub fn logits(&self, pos: usize) -> &[f64] {
        Self::row(&self.logits, self.config.vocab_size, pos)
    }

    pub fn probabilities(&self, pos: usize) -> &[f64] {
        Self::row(&self.probs, self.config.vocab_size, pos)
    }

    /// Next-token distribution read from the final position.
    pub fn answer_distribution(&self) -> &[f64] {
        self.probabilities(self.output_position())
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }
}

/// `out[r] = w * x[r] + bias` for each of `rows` input rows.
pub(crate) fn linear(x: &[f64], rows: usize, w: &Matrix, bias: Option<&[f64]>, out: &mut [f64]) {
    let (o_dim, i_dim) = (w.rows, w.cols);
    for r in 0..rows {
        let xr = &x[r * i_dim..(r + 1) * i_dim];
        let yr = &mut out[r * o_dim..(r + 1) * o_dim];
        for (o, y) in yr.iter_mut().enumerate() {
            *y = dot(xr, w.row(o)) + bias.map_or(0.0, |b| b[o]);
        }
    }
}

#[inline]
pub(crate) fn attention_allowed(n_image: usize, query: usize, key: usize) -> bool {
    key < n_image || (query >= n_image && key <= query)
}

fn rms_norm(x: &[f64], gain: &[f64], rms: &mut f64, out: &mut [f64]) {
    let d = x.len();
    let r = libm::sqrt(dot(x, x) / d as f64 + NORM_EPS);
    *rms = r;
    let inv = 1.0 / r;
    for ((o, &xi), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = g * xi * inv;
    }
}

fn check_input(params: &Parameters, input: &ModelInput<'_>) -> Result<(), ModelError> {
    let c = &params.config;
    if input.text.is_empty() || input.text.len() > c.max_text_tokens {
        return Err(ModelError::InvalidLength { len: input.text.len(), max: c.max_text_tokens });
    }
    for (position, t) in input.text.iter().enumerate() {
        if t.index() >= c.vocab_size {
            return Err(ModelError::InvalidToken { position, token: t.0, vocab_size: c.vocab_size });
        }
    }
    match input.image {
        ImageInput::Features(f) if f.len() != c.image_feature_dim => {
            Err(ModelError::InvalidImage { expected: c.image_feature_dim, got: f.len() })
        }
        ImageInput::Embedded(e) if e.len() != c.n_image_tokens * c.d_model => {
            Err(ModelError::InvalidImage { expected: c.n_image_tokens * c.d_model, got: e.len() })
        }
        _ => Ok(()),
    }
}

fn check_mask(plan: &MaskPlan, n_layers: usize, n_positions: usize) -> Result<(), ModelError> {
    for (layer, positions) in plan.layers() {
        if layer >= n_layers {
            return Err(ModelError::InvalidMask { layer, position: None });
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= n_positions - 1) {
            return Err(ModelError::InvalidMask { layer, position: Some(p) });
        }
    }
    Ok(())
}

fn embed(params: &Parameters, input: &ModelInput<'_>, n: usize) -> (Vec<f64>, TraceImage) {
    let c = &params.config;
    let d = c.d_model;
    let m = c.n_image_tokens;
    let mut x = alloc::vec![0.0; n * d];
    let image = match input.image {
        ImageInput::Absent => {
            x[..m * d].copy_from_slice(&params.null_image.data);
            TraceImage::Absent
        }
        ImageInput::Embedded(e) => {
            x[..m * d].copy_from_slice(e);
            TraceImage::Embedded
        }
        ImageInput::Features(f) => {
            let f64s: Vec<f64> = f.iter().map(|&v| v as f64).collect();
            linear(&f64s, 1, &params.image_projection, Some(&params.image_bias), &mut x[..m * d]);
            TraceImage::Features(f64s)
        }
    };
    for (j, t) in input.text.iter().enumerate() {
        let row = &mut x[(m + j) * d..(m + j + 1) * d];
        row.copy_from_slice(params.token_embedding.row(t.index()));
    }
    for pos in 0..n {
        let row = &mut x[pos * d..(pos + 1) * d];
        for (xi, pi) in row.iter_mut().zip(params.position_embedding.row(pos)) {
            *xi += pi;
        }
    }
    (x, image)
}

pub(crate) fn run(params: &Parameters, input: &ModelInput<'_>, plan: Option<&MaskPlan>) -> Result<ForwardTrace, ModelError> {
    check_input(params, input)?;
    let c = &params.config;
    let d = c.d_model;
    let m = c.n_image_tokens;
    let n = m + input.text.len();
    let heads = c.n_heads;
    let hd = c.head_dim();
    let ff = c.d_ff;
    let scale = 1.0 / libm::sqrt(hd as f64);
    if let Some(plan) = plan {
        check_mask(plan, c.n_layers, n)?;
    }

    let (mut x, image) = embed(params, input, n);
    let mut layers = Vec::with_capacity(c.n_layers);
    let mut scores = alloc::vec![0.0; n];

    for (l, lp) in params.layers.iter().enumerate() {
        let masked = plan.and_then(|p| p.suppressed_at(l)).cloned().unwrap_or_default();
        for &pos in &masked {
            x[pos * d..(pos + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }

        let mut rms = alloc::vec![0.0; n];
        let mut attn_in = alloc::vec![0.0; n * d];
        let mut mlp_in = alloc::vec![0.0; n * d];
        for pos in 0..n {
            let xr = &x[pos * d..(pos + 1) * d];
            rms_norm(xr, &lp.attn_gain, &mut rms[pos], &mut attn_in[pos * d..(pos + 1) * d]);
            let inv = 1.0 / rms[pos];
            for ((o, &xi), &g) in mlp_in[pos * d..(pos + 1) * d].iter_mut().zip(xr).zip(&lp.mlp_gain) {
                *o = g * xi * inv;
            }
        }

        let mut q = alloc::vec![0.0; n * d];
        let mut k = alloc::vec![0.0; n * d];
        let mut v = alloc::vec![0.0; n * d];
        linear(&attn_in, n, &lp.query, None, &mut q);
        linear(&attn_in, n, &lp.key, None, &mut k);
        linear(&attn_in, n, &lp.value, None, &mut v);

        let mut probs = alloc::vec![0.0; heads * n * n];
        let mut ctx = alloc::vec![0.0; n * d];
        let mut attention = alloc::vec![0.0; n * n];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + hd];
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if attention_allowed(m, i, j) {
                        let s = dot(qi, &k[j * d + off..j * d + off + hd]) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                }
                let prow = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let mut sum = 0.0;
                for j in 0..n {
                    if attention_allowed(m, i, j) {
                        let e = libm::exp(scores[j] - max);
                        prow[j] = e;
                        sum += e;
                    }
                }
                let inv = 1.0 / sum;
                let ci = &mut ctx[i * d + off..i * d + off + hd];
                for j in 0..n {
                    if prow[j] != 0.0 {
                        prow[j] *= inv;
                        let pj = prow[j];
                        for (cv, vv) in ci.iter_mut().zip(&v[j * d + off..j * d + off + hd]) {
                            *cv += pj * vv;
                        }
                    }
                }
                let arow = &mut attention[i * n..(i + 1) * n];
                for (a, p) in arow.iter_mut().zip(prow.iter()) {
                    *a += p / heads as f64;
                }
            }
        }
        let mut attn_out = alloc::vec![0.0; n * d];
        linear(&ctx, n, &lp.attn_output, None, &mut attn_out);

        let mut pre = alloc::vec![0.0; n * ff];
        linear(&mlp_in, n, &lp.mlp_in, Some(&lp.mlp_in_bias), &mut pre);
        let act: Vec<f64> = pre.iter().map(|&z| math::gelu(z)).collect();
        let mut mlp_out = alloc::vec![0.0; n * d];
        linear(&act, n, &lp.mlp_out, Some(&lp.mlp_out_bias), &mut mlp_out);

        let mut h_new = alloc::vec![0.0; n * d];
        for i in 0..n * d {
            h_new[i] = mlp_out[i] + attn_out[i] + x[i];
        }
        if let Some(bad) = h_new.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NumericalOverflow { layer: l, position: bad / d });
        }

        let h_prev = core::mem::replace(&mut x, h_new.clone());
        layers.push(LayerTrace {
            h_prev,
            attn_out,
            mlp_out,
            h_new,
            attention,
            cache: LayerCache { rms, attn_in, q, k, v, probs, ctx, mlp_in, pre, act, masked },
        });
    }

    let vocab = c.vocab_size;
    let mut final_rms = alloc::vec![0.0; n];
    let mut final_normed = alloc::vec![0.0; n * d];
    for pos in 0..n {
        rms_norm(&x[pos * d..(pos + 1) * d], &params.final_gain, &mut final_rms[pos], &mut final_normed[pos * d..(pos + 1) * d]);
    }
    let mut logits = alloc::vec![0.0; n * vocab];
    linear(&final_normed, n, &params.unembedding, None, &mut logits);
    if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NumericalOverflow { layer: c.n_layers, position: bad / vocab });
    }
    let mut probs = alloc::vec![0.0; n * vocab];
    for pos in 0..n {
        math::softmax_into(&logits[pos * vocab..(pos + 1) * vocab], &mut probs[pos * vocab..(pos + 1) * vocab]);
    }

    Ok(ForwardTrace {
        config: c.clone(),
        n_positions: n,
        tokens: input.text.to_vec(),
        image,
        layers,
        final_rms,
        final_normed,
        logits,
        probs,
    })
}

/// Full forward pass returning the answer distribution and the trace.
pub fn forward_with_trace(params: &Parameters, input: &ModelInput<'_>) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
    let trace = run(params, input, None)?;
    Ok((trace.answer_distribution().to_vec(), trace))
}

/// Answer distribution only.
pub fn forward(params: &Parameters, input: &ModelInput<'_>) -> Result<Vec<f64>, ModelError> {
    forward_with_trace(params, input).map(|(p, _)| p)
}

/// Forward pass with hidden states of suppressed positions zeroed on entry to
/// each planned layer. The final position may never be suppressed.
pub fn forward_masked(params: &Parameters, input: &ModelInput<'_>, plan: &MaskPlan) -> Result<Vec<f64>, ModelError> {
    let trace = run(params, input, Some(plan))?;
    Ok(trace.answer_distribution().to_vec())
}

/// Greedy answer (argmax of the answer distribution).
pub fn predict(params: &Parameters, input: &ModelInput<'_>) -> Result<TokenId, ModelError> {
    let p = forward(params, input)?;
    Ok(TokenId(math::argmax(&p) as u32))
}
