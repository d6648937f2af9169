use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};

/// Row-major dense matrix. A weight stored as `rows x cols` maps a
/// `cols`-vector to a `rows`-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: alloc::vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Per-layer tensor roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerTensor {
    AttnGain,
    Query,
    Key,
    Value,
    AttnOutput,
    MlpGain,
    MlpIn,
    MlpInBias,
    MlpOut,
    MlpOutBias,
}

impl LayerTensor {
    pub const ALL: [LayerTensor; 10] = [
        LayerTensor::AttnGain,
        LayerTensor::Query,
        LayerTensor::Key,
        LayerTensor::Value,
        LayerTensor::AttnOutput,
        LayerTensor::MlpGain,
        LayerTensor::MlpIn,
        LayerTensor::MlpInBias,
        LayerTensor::MlpOut,
        LayerTensor::MlpOutBias,
    ];

    /// The MLP weights and biases (gain excluded).
    pub const MLP: [LayerTensor; 4] =
        [LayerTensor::MlpIn, LayerTensor::MlpInBias, LayerTensor::MlpOut, LayerTensor::MlpOutBias];

    fn suffix(self) -> &'static str {
        match self {
            LayerTensor::AttnGain => "attn.gain",
            LayerTensor::Query => "attn.query",
            LayerTensor::Key => "attn.key",
            LayerTensor::Value => "attn.value",
            LayerTensor::AttnOutput => "attn.output",
            LayerTensor::MlpGain => "mlp.gain",
            LayerTensor::MlpIn => "mlp.in",
            LayerTensor::MlpInBias => "mlp.in_bias",
            LayerTensor::MlpOut => "mlp.out",
            LayerTensor::MlpOutBias => "mlp.out_bias",
        }
    }
}

/// Identifies one trainable tensor. Layer indices are zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TensorId {
    TokenEmbedding,
    PositionEmbedding,
    ImageProjection,
    ImageBias,
    NullImage,
    Layer(usize, LayerTensor),
    FinalGain,
    Unembedding,
}

impl TensorId {
    /// True for the tensors that only touch image inputs that are present.
    pub fn is_image_projection(self) -> bool {
        matches!(self, TensorId::ImageProjection | TensorId::ImageBias)
    }

    pub fn parse(name: &str) -> Option<TensorId> {
        let fixed = match name {
            "embed.tokens" => Some(TensorId::TokenEmbedding),
            "embed.positions" => Some(TensorId::PositionEmbedding),
            "image.projection" => Some(TensorId::ImageProjection),
            "image.bias" => Some(TensorId::ImageBias),
            "image.null" => Some(TensorId::NullImage),
            "final.gain" => Some(TensorId::FinalGain),
            "unembed" => Some(TensorId::Unembedding),
            _ => None,
        };
        if fixed.is_some() {
            return fixed;
        }
        let rest = name.strip_prefix("layers.")?;
        let (idx, suffix) = rest.split_once('.')?;
        let layer: usize = idx.parse().ok()?;
        LayerTensor::ALL
            .iter()
            .find(|t| t.suffix() == suffix)
            .map(|&t| TensorId::Layer(layer, t))
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorId::TokenEmbedding => f.write_str("embed.tokens"),
            TensorId::PositionEmbedding => f.write_str("embed.positions"),
            TensorId::ImageProjection => f.write_str("image.projection"),
            TensorId::ImageBias => f.write_str("image.bias"),
            TensorId::NullImage => f.write_str("image.null"),
            TensorId::Layer(l, t) => write!(f, "layers.{l}.{}", t.suffix()),
            TensorId::FinalGain => f.write_str("final.gain"),
            TensorId::Unembedding => f.write_str("unembed"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub attn_gain: Vec<f64>,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub attn_output: Matrix,
    pub mlp_gain: Vec<f64>,
    pub mlp_in: Matrix,
    pub mlp_in_bias: Vec<f64>,
    pub mlp_out: Matrix,
    pub mlp_out_bias: Vec<f64>,
}

/// A complete parameter snapshot. Cloning produces an independent snapshot;
/// editing always works on a clone.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    /// Maps an image feature vector to `n_image_tokens * d_model` values.
    pub image_projection: Matrix,
    pub image_bias: Vec<f64>,
    /// Learned embedding used for every image position when no image is given.
    pub null_image: Matrix,
    pub layers: Vec<LayerParams>,
    pub final_gain: Vec<f64>,
    pub unembedding: Matrix,
}

/// Gradient of a scalar loss with respect to every tensor in [`Parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Parameters);

impl core::ops::Deref for Gradients {
    type Target = Parameters;
    fn deref(&self) -> &Parameters {
        &self.0
    }
}

impl core::ops::DerefMut for Gradients {
    fn deref_mut(&mut self) -> &mut Parameters {
        &mut self.0
    }
}

impl Gradients {
    pub fn zeros(config: &ModelConfig) -> Self {
        Gradients(Parameters::zeros(config))
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("std is positive");
    (0..len).map(|_| normal.sample(rng)).collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix { rows, cols, data: gaussian(rng, rows * cols, std) }
}

impl Parameters {
    /// All-zero parameters (norm gains included), mainly for gradient buffers.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layer = || LayerParams {
            attn_gain: alloc::vec![0.0; d],
            query: Matrix::zeros(d, d),
            key: Matrix::zeros(d, d),
            value: Matrix::zeros(d, d),
            attn_output: Matrix::zeros(d, d),
            mlp_gain: alloc::vec![0.0; d],
            mlp_in: Matrix::zeros(config.d_ff, d),
            mlp_in_bias: alloc::vec![0.0; config.d_ff],
            mlp_out: Matrix::zeros(d, config.d_ff),
            mlp_out_bias: alloc::vec![0.0; d],
        };
        Self {
            config: config.clone(),
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.max_positions(), d),
            image_projection: Matrix::zeros(config.n_image_tokens * d, config.image_feature_dim),
            image_bias: alloc::vec![0.0; config.n_image_tokens * d],
            null_image: Matrix::zeros(config.n_image_tokens, d),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            final_gain: alloc::vec![0.0; d],
            unembedding: Matrix::zeros(config.vocab_size, d),
        }
    }

    /// Seeded random initialisation.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let ff = config.d_ff;
        let in_std = 1.0 / libm::sqrt(d as f64);
        let residual_std = in_std / libm::sqrt(2.0 * config.n_layers as f64);
        let mut p = Self::zeros(config);
        p.token_embedding = gaussian_matrix(&mut rng, config.vocab_size, d, 1.0);
        p.position_embedding = gaussian_matrix(&mut rng, config.max_positions(), d, 0.5);
        p.image_projection = gaussian_matrix(
            &mut rng,
            config.n_image_tokens * d,
            config.image_feature_dim,
            1.0 / libm::sqrt(config.image_feature_dim as f64),
        );
        p.null_image = gaussian_matrix(&mut rng, config.n_image_tokens, d, 1.0);
        for layer in &mut p.layers {
            layer.attn_gain = alloc::vec![1.0; d];
            layer.query = gaussian_matrix(&mut rng, d, d, in_std);
            layer.key = gaussian_matrix(&mut rng, d, d, in_std);
            layer.value = gaussian_matrix(&mut rng, d, d, in_std);
            layer.attn_output = gaussian_matrix(&mut rng, d, d, residual_std);
            layer.mlp_gain = alloc::vec![1.0; d];
            layer.mlp_in = gaussian_matrix(&mut rng, ff, d, in_std);
            layer.mlp_out = gaussian_matrix(&mut rng, d, ff, residual_std * libm::sqrt(d as f64 / ff as f64));
        }
        p.final_gain = alloc::vec![1.0; d];
        p.unembedding = gaussian_matrix(&mut rng, config.vocab_size, d, in_std);
        Ok(p)
    }

    /// Every tensor id in canonical (serialization) order.
    pub fn tensor_ids(config: &ModelConfig) -> Vec<TensorId> {
        let mut ids = alloc::vec![
            TensorId::TokenEmbedding,
            TensorId::PositionEmbedding,
            TensorId::ImageProjection,
            TensorId::ImageBias,
            TensorId::NullImage,
        ];
        for l in 0..config.n_layers {
            ids.extend(LayerTensor::ALL.iter().map(|&t| TensorId::Layer(l, t)));
        }
        ids.push(TensorId::FinalGain);
        ids.push(TensorId::Unembedding);
        ids
    }

    /// `(rows, cols)` of a tensor; vectors report `(len, 1)`.
    pub fn shape(&self, id: TensorId) -> Option<(usize, usize)> {
        fn m(x: &Matrix) -> (usize, usize) {
            (x.rows, x.cols)
        }
        fn v(x: &[f64]) -> (usize, usize) {
            (x.len(), 1)
        }
        Some(match id {
            TensorId::TokenEmbedding => m(&self.token_embedding),
            TensorId::PositionEmbedding => m(&self.position_embedding),
            TensorId::ImageProjection => m(&self.image_projection),
            TensorId::ImageBias => v(&self.image_bias),
            TensorId::NullImage => m(&self.null_image),
            TensorId::FinalGain => v(&self.final_gain),
            TensorId::Unembedding => m(&self.unembedding),
            TensorId::Layer(l, t) => {
                let layer = self.layers.get(l)?;
                match t {
                    LayerTensor::AttnGain => v(&layer.attn_gain),
                    LayerTensor::Query => m(&layer.query),
                    LayerTensor::Key => m(&layer.key),
                    LayerTensor::Value => m(&layer.value),
                    LayerTensor::AttnOutput => m(&layer.attn_output),
                    LayerTensor::MlpGain => v(&layer.mlp_gain),
                    LayerTensor::MlpIn => m(&layer.mlp_in),
                    LayerTensor::MlpInBias => v(&layer.mlp_in_bias),
                    LayerTensor::MlpOut => m(&layer.mlp_out),
                    LayerTensor::MlpOutBias => v(&layer.mlp_out_bias),
                }
            }
        })
    }

    pub fn tensor(&self, id: TensorId) -> Option<&[f64]> {
        Some(match id {
            TensorId::TokenEmbedding => &self.token_embedding.data,
            TensorId::PositionEmbedding => &self.position_embedding.data,
            TensorId::ImageProjection => &self.image_projection.data,
            TensorId::ImageBias => &self.image_bias,
            TensorId::NullImage => &self.null_image.data,
            TensorId::FinalGain => &self.final_gain,
            TensorId::Unembedding => &self.unembedding.data,
            TensorId::Layer(l, t) => {
                let layer = self.layers.get(l)?;
                match t {
                    LayerTensor::AttnGain => &layer.attn_gain,
                    LayerTensor::Query => &layer.query.data,
                    LayerTensor::Key => &layer.key.data,
                    LayerTensor::Value => &layer.value.data,
                    LayerTensor::AttnOutput => &layer.attn_output.data,
                    LayerTensor::MlpGain => &layer.mlp_gain,
                    LayerTensor::MlpIn => &layer.mlp_in.data,
                    LayerTensor::MlpInBias => &layer.mlp_in_bias,
                    LayerTensor::MlpOut => &layer.mlp_out.data,
                    LayerTensor::MlpOutBias => &layer.mlp_out_bias,
                }
            }
        })
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> Option<&mut [f64]> {
        Some(match id {
            TensorId::TokenEmbedding => &mut self.token_embedding.data,
            TensorId::PositionEmbedding => &mut self.position_embedding.data,
            TensorId::ImageProjection => &mut self.image_projection.data,
            TensorId::ImageBias => &mut self.image_bias,
            TensorId::NullImage => &mut self.null_image.data,
            TensorId::FinalGain => &mut self.final_gain,
            TensorId::Unembedding => &mut self.unembedding.data,
            TensorId::Layer(l, t) => {
                let layer = self.layers.get_mut(l)?;
                match t {
                    LayerTensor::AttnGain => &mut layer.attn_gain,
                    LayerTensor::Query => &mut layer.query.data,
                    LayerTensor::Key => &mut layer.key.data,
                    LayerTensor::Value => &mut layer.value.data,
                    LayerTensor::AttnOutput => &mut layer.attn_output.data,
                    LayerTensor::MlpGain => &mut layer.mlp_gain,
                    LayerTensor::MlpIn => &mut layer.mlp_in.data,
                    LayerTensor::MlpInBias => &mut layer.mlp_in_bias,
                    LayerTensor::MlpOut => &mut layer.mlp_out.data,
                    LayerTensor::MlpOutBias => &mut layer.mlp_out_bias,
                }
            }
        })
    }

    /// Named views over every tensor in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        Self::tensor_ids(&self.config)
            .into_iter()
            .map(|id| (alloc::format!("{id}"), self.tensor(id).expect("id from own layout")))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        Self::tensor_ids(&self.config)
            .into_iter()
            .map(|id| self.tensor(id).map_or(0, <[f64]>::len))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        Self::tensor_ids(&self.config)
            .into_iter()
            .all(|id| self.tensor(id).is_some_and(|t| t.iter().all(|x| x.is_finite())))
    }

    /// Round every value to the nearest `f32`, so a checkpoint round trip is
    /// lossless.
    pub fn round_to_f32(&mut self) {
        for id in Self::tensor_ids(&self.config.clone()) {
            if let Some(t) = self.tensor_mut(id) {
                for x in t.iter_mut() {
                    *x = *x as f32 as f64;
                }
            }
        }
    }

    /// L2 norm of `self - other` for one tensor.
    pub fn delta_norm(&self, other: &Parameters, id: TensorId) -> f64 {
        match (self.tensor(id), other.tensor(id)) {
            (Some(a), Some(b)) => crate::math::l2_distance(a, b),
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            vocab_size: 11,
            n_image_tokens: 2,
            max_text_tokens: 4,
            image_feature_dim: 5,
            seed: 3,
        }
    }

    #[test]
    fn tensor_names_round_trip() {
        for id in Parameters::tensor_ids(&tiny()) {
            let name = alloc::format!("{id}");
            assert_eq!(TensorId::parse(&name), Some(id), "{name}");
        }
        assert_eq!(TensorId::parse("layers.x.mlp.in"), None);
        assert_eq!(TensorId::parse("nonsense"), None);
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let a = Parameters::init(&tiny()).unwrap();
        let b = Parameters::init(&tiny()).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
        let mut c = tiny();
        c.seed = 4;
        assert_ne!(a, Parameters::init(&c).unwrap());
    }

    #[test]
    fn shapes_are_consistent_with_config() {
        let p = Parameters::init(&tiny()).unwrap();
        assert_eq!(p.shape(TensorId::ImageProjection), Some((16, 5)));
        assert_eq!(p.shape(TensorId::Layer(1, LayerTensor::MlpIn)), Some((12, 8)));
        assert_eq!(p.shape(TensorId::Layer(2, LayerTensor::MlpIn)), None);
        let total: usize = p.named_tensors().iter().map(|(_, t)| t.len()).sum();
        assert_eq!(total, p.num_parameters());
    }
}
