use serde::{Deserialize, Serialize};

use super::tensor::Mat;
use super::{EncoderConfig, Real};
use crate::error::{Error, Result};
use crate::relations::NUM_BIAS_TYPES;
use crate::rng::SplitMix64;

/// Embedding tables. `column` and `row` exist only for schemes that emit
/// those id streams.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams<T> {
    pub word: Mat<T>,
    pub segment: Mat<T>,
    pub rank: Mat<T>,
    pub position: Mat<T>,
    pub column: Option<Mat<T>>,
    pub row: Option<Mat<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub wq: Mat<T>,
    pub bq: Mat<T>,
    pub wk: Mat<T>,
    pub bk: Mat<T>,
    pub wv: Mat<T>,
    pub bv: Mat<T>,
    pub wo: Mat<T>,
    pub bo: Mat<T>,
    pub ln1_gain: Mat<T>,
    pub ln1_offset: Mat<T>,
    pub w1: Mat<T>,
    pub b1: Mat<T>,
    pub w2: Mat<T>,
    pub b2: Mat<T>,
    pub ln2_gain: Mat<T>,
    pub ln2_offset: Mat<T>,
    /// heads × 13 relation bias scalars.
    pub attn_bias: Mat<T>,
}

/// Linear probe producing one logit per token.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub weight: Mat<T>,
    pub bias: Mat<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embeddings: EmbeddingParams<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head: HeadParams<T>,
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(wq, bq, wk, bk, wv, bv, wo, bo, ln1_gain, ln1_offset, w1, b1, w2, b2, ln2_gain, ln2_offset, attn_bias)
    };
}

impl<T: Real> LayerParams<T> {
    fn init(config: &EncoderConfig, rng: &mut SplitMix64) -> Self {
        let d = config.d_model;
        let qk = config.heads * config.d_k;
        let vw = config.heads * config.d_v;
        let f = config.ffn_dim;
        let mut rand = |r, c| random_mat(r, c, config.init_std, rng);
        let wq = rand(d, qk);
        let wk = rand(d, qk);
        let wv = rand(d, vw);
        let wo = rand(vw, d);
        let w1 = rand(d, f);
        let w2 = rand(f, d);
        Self {
            wq,
            bq: Mat::zeros(1, qk),
            wk,
            bk: Mat::zeros(1, qk),
            wv,
            bv: Mat::zeros(1, vw),
            wo,
            bo: Mat::zeros(1, d),
            ln1_gain: Mat::filled(1, d, T::one()),
            ln1_offset: Mat::zeros(1, d),
            w1,
            b1: Mat::zeros(1, f),
            w2,
            b2: Mat::zeros(1, d),
            ln2_gain: Mat::filled(1, d, T::one()),
            ln2_offset: Mat::zeros(1, d),
            attn_bias: Mat::zeros(config.heads, NUM_BIAS_TYPES),
        }
    }

    fn zeros_like(&self) -> Self {
        macro_rules! z {
            ($($f:ident),*) => { Self { $($f: Mat::zeros(self.$f.rows(), self.$f.cols())),* } };
        }
        layer_fields!(z)
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat<T>)>) {
        macro_rules! push {
            ($($f:ident),*) => {{ $(out.push((format!("{prefix}.{}", stringify!($f)), &self.$f));)* }};
        }
        layer_fields!(push)
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat<T>)>) {
        macro_rules! push {
            ($($f:ident),*) => {{ $(out.push((format!("{prefix}.{}", stringify!($f)), &mut self.$f));)* }};
        }
        layer_fields!(push)
    }
}

/// Uniform initializer with standard deviation `std`.
fn random_mat<T: Real>(rows: usize, cols: usize, std: f64, rng: &mut SplitMix64) -> Mat<T> {
    let scale = std * 3f64.sqrt();
    Mat::from_fn(rows, cols, |_, _| T::lit(rng.symmetric(scale)))
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization. Relation bias scalars start at zero so a fresh
    /// model computes exactly what the bias-free encoder computes.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let d = config.d_model;
        let p = config.max_positions;
        let std = config.init_std;
        let estd = config.embedding_init_std.unwrap_or(std);
        let word = random_mat(config.vocab_size, d, estd, &mut rng);
        let segment = random_mat(2, d, estd, &mut rng);
        let rank = random_mat(p, d, estd, &mut rng);
        let position = random_mat(p, d, estd, &mut rng);
        let column = config
            .scheme
            .uses_column_ids()
            .then(|| random_mat(p, d, estd, &mut rng));
        let row = config.scheme.uses_row_ids().then(|| random_mat(p, d, estd, &mut rng));
        let layers = (0..config.layers)
            .map(|_| LayerParams::init(config, &mut rng))
            .collect();
        let head = HeadParams {
            weight: random_mat(1, d, std, &mut rng),
            bias: Mat::zeros(1, 1),
        };
        Ok(Self {
            embeddings: EmbeddingParams {
                word,
                segment,
                rank,
                position,
                column,
                row,
            },
            layers,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat<T>| Mat::zeros(m.rows(), m.cols());
        let e = &self.embeddings;
        Self {
            embeddings: EmbeddingParams {
                word: z(&e.word),
                segment: z(&e.segment),
                rank: z(&e.rank),
                position: z(&e.position),
                column: e.column.as_ref().map(z),
                row: e.row.as_ref().map(z),
            },
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
            head: HeadParams {
                weight: z(&self.head.weight),
                bias: z(&self.head.bias),
            },
        }
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Mat<T>)> {
        let e = &self.embeddings;
        let mut out = vec![
            ("embeddings.word".to_string(), &e.word),
            ("embeddings.segment".to_string(), &e.segment),
            ("embeddings.rank".to_string(), &e.rank),
            ("embeddings.position".to_string(), &e.position),
        ];
        if let Some(c) = &e.column {
            out.push(("embeddings.column".into(), c));
        }
        if let Some(r) = &e.row {
            out.push(("embeddings.row".into(), r));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.tensors(&format!("layer{l}"), &mut out);
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat<T>)> {
        let e = &mut self.embeddings;
        let mut out = vec![
            ("embeddings.word".to_string(), &mut e.word),
            ("embeddings.segment".to_string(), &mut e.segment),
            ("embeddings.rank".to_string(), &mut e.rank),
            ("embeddings.position".to_string(), &mut e.position),
        ];
        if let Some(c) = &mut e.column {
            out.push(("embeddings.column".into(), c));
        }
        if let Some(r) = &mut e.row {
            out.push(("embeddings.row".into(), r));
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.tensors_mut(&format!("layer{l}"), &mut out);
        }
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// Fills every relation bias scalar uniformly in `[-scale, scale)`.
    pub fn randomize_bias_scalars(&mut self, seed: u64, scale: f64) {
        let mut rng = SplitMix64::new(seed);
        for layer in &mut self.layers {
            for v in layer.attn_bias.as_mut_slice() {
                *v = T::lit(rng.symmetric(scale));
            }
        }
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x = *x + alpha * y;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let e = &self.embeddings;
        ModelParams {
            embeddings: EmbeddingParams {
                word: e.word.cast(),
                segment: e.segment.cast(),
                rank: e.rank.cast(),
                position: e.position.cast(),
                column: e.column.as_ref().map(Mat::cast),
                row: e.row.as_ref().map(Mat::cast),
            },
            layers: self
                .layers
                .iter()
                .map(|l| {
                    macro_rules! c {
                        ($($f:ident),*) => { LayerParams { $($f: l.$f.cast()),* } };
                    }
                    layer_fields!(c)
                })
                .collect(),
            head: HeadParams {
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }

    /// Checks tensor shapes against `config`.
    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        let reference = ModelParams::<T>::zeros_for(config)?;
        let expected = reference.tensors();
        let actual = self.tensors();
        if expected.len() != actual.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                actual.len()
            )));
        }
        for ((en, em), (an, am)) in expected.iter().zip(&actual) {
            if en != an || em.shape() != am.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "tensor {an} has shape {:?}, expected {en} with shape {:?}",
                    am.shape(),
                    em.shape()
                )));
            }
        }
        Ok(())
    }

    fn zeros_for(config: &EncoderConfig) -> Result<Self> {
        let mut c = config.clone();
        c.init_std = 0.0;
        Self::init(&c, 0)
    }
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: EncoderConfig,
    pub params: ModelParams<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    /// Relation bias scalars: layers × heads × 13.
    pub bias_scalar_params: usize,
    /// Row and column embedding tables of a row/column-id baseline of the
    /// same width: 2 × max_positions × d_model.
    pub removed_rowcol_params: usize,
}

/// Parameter accounting by arithmetic on the configuration alone.
pub fn param_count(config: &EncoderConfig) -> ParamCount {
    let d = config.d_model;
    let p = config.max_positions;
    let qk = config.heads * config.d_k;
    let vw = config.heads * config.d_v;
    let f = config.ffn_dim;
    let bias_scalars = config.layers * config.heads * NUM_BIAS_TYPES;
    let mut embeddings = config.vocab_size * d + 2 * d + 2 * p * d;
    if config.scheme.uses_column_ids() {
        embeddings += p * d;
    }
    if config.scheme.uses_row_ids() {
        embeddings += p * d;
    }
    let per_layer = 2 * (d * qk + qk) + (d * vw + vw) + (vw * d + d) + (d * f + f) + (f * d + d) + 4 * d;
    ParamCount {
        total: embeddings + config.layers * per_layer + bias_scalars + d + 1,
        bias_scalar_params: bias_scalars,
        removed_rowcol_params: 2 * p * d,
    }
}
