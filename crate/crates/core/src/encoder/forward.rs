use super::params::{LayerParams, ModelParams};
use super::tensor::{dot, Mat};
use super::{BiasMode, EncoderConfig, Real, MASK_LOGIT};
use crate::error::{Error, Result};
use crate::linearize::{LinearizedSequence, PositionalScheme};
use crate::relations::{ablate_types, bias_type_matrix, BiasTypeMatrix, NUM_BIAS_TYPES};

#[derive(Debug, Clone)]
pub struct EncodedOutput<T> {
    /// n × d_model token representations.
    pub hidden: Mat<T>,
    /// Attention weights, indexed `[layer][head]`, each n × n.
    pub attention: Vec<Vec<Mat<T>>>,
}

/// Relation matrix for `seq` after the configured ablation, or `None` when
/// the bias mode ignores relations.
pub fn relation_matrix(seq: &LinearizedSequence, config: &EncoderConfig) -> Result<Option<BiasTypeMatrix>> {
    if !config.bias_mode.needs_relations() {
        return Ok(None);
    }
    let m = bias_type_matrix(seq);
    if config.ablated_types.is_empty() {
        Ok(Some(m))
    } else {
        ablate_types(&m, &config.ablated_types).map(Some)
    }
}

fn lookup<'a, T: Real>(table: &'a Mat<T>, stream: &'static str, id: usize) -> Result<&'a [T]> {
    if id >= table.rows() {
        return Err(Error::IdOutOfRange {
            stream,
            id,
            size: table.rows(),
        });
    }
    Ok(table.row(id))
}

/// Sum of the embedding rows selected by each token's id streams.
pub fn embed<T: Real>(seq: &LinearizedSequence, params: &ModelParams<T>, config: &EncoderConfig) -> Result<Mat<T>> {
    if seq.scheme != config.scheme {
        return Err(Error::InvalidConfig(format!(
            "sequence was linearized with {} but the model expects {}",
            seq.scheme, config.scheme
        )));
    }
    let e = &params.embeddings;
    let d = e.word.cols();
    let mut h = Mat::zeros(seq.len(), d);
    for (i, tok) in seq.tokens.iter().enumerate() {
        let position = match config.scheme {
            PositionalScheme::Pcp => tok.cell_pos,
            _ => tok.global_pos,
        };
        let mut rows = vec![
            lookup(&e.word, "token", tok.token_id as usize)?,
            lookup(&e.segment, "segment", tok.segment_id as usize)?,
            lookup(&e.rank, "rank", tok.rank_id as usize)?,
            lookup(&e.position, "position", position as usize)?,
        ];
        if let Some(c) = &e.column {
            rows.push(lookup(c, "column", tok.column_id as usize)?);
        }
        if let Some(r) = &e.row {
            rows.push(lookup(r, "row", tok.row_id as usize)?);
        }
        let out = h.row_mut(i);
        for row in rows {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
    }
    Ok(h)
}

/// Per-row statistics retained for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LnCache<T> {
    pub xhat: Mat<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm<T: Real>(x: &Mat<T>, gain: &Mat<T>, offset: &Mat<T>, eps: f64) -> (Mat<T>, LnCache<T>) {
    let (n, d) = x.shape();
    let dn = T::lit(d as f64);
    let eps = T::lit(eps);
    let mut xhat = Mat::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    let mut y = Mat::zeros(n, d);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            xhat.set(i, j, xh);
            y.set(i, j, gain.as_slice()[j] * xh + offset.as_slice()[j]);
        }
    }
    (y, LnCache { xhat, inv_std })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(u: T) -> T {
    let half = T::lit(0.5);
    half * u * (T::one() + (T::lit(GELU_C) * (u + T::lit(GELU_A) * u * u * u)).tanh())
}

pub(crate) fn gelu_grad<T: Real>(u: T) -> T {
    let half = T::lit(0.5);
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * u * u)
}

/// Everything one layer's backward pass needs.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    pub x: Mat<T>,
    pub q: Mat<T>,
    pub k: Mat<T>,
    pub v: Mat<T>,
    /// Per-head attention weights, n × n.
    pub probs: Vec<Mat<T>>,
    pub ctx: Mat<T>,
    pub ln1: LnCache<T>,
    pub y1: Mat<T>,
    pub u: Mat<T>,
    pub g: Mat<T>,
    pub ln2: LnCache<T>,
}

fn check_relations(n: usize, relations: Option<&BiasTypeMatrix>, mode: BiasMode) -> Result<()> {
    match relations {
        None if mode.needs_relations() => Err(Error::DimensionMismatch(format!(
            "bias mode {mode} needs an n x n relation matrix"
        ))),
        Some(m) if mode.needs_relations() && m.len() != n => Err(Error::DimensionMismatch(format!(
            "relation matrix is {0}x{0} but the sequence has {n} tokens",
            m.len()
        ))),
        _ => Ok(()),
    }
}

/// Attention logits of one head, before the softmax.
pub(crate) fn head_logits<T: Real>(
    q: &Mat<T>,
    k: &Mat<T>,
    head: usize,
    layer: &LayerParams<T>,
    relations: Option<&BiasTypeMatrix>,
    config: &EncoderConfig,
) -> Mat<T> {
    let n = q.rows();
    let dk = config.d_k;
    let off = head * dk;
    let scale = T::one() / T::lit(dk as f64).sqrt();
    let bias = layer.attn_bias.row(head);
    let mut masked = [false; NUM_BIAS_TYPES];
    for t in &config.masked_types {
        masked[t.index()] = true;
    }
    Mat::from_fn(n, n, |i, j| {
        let d = dot(&q.row(i)[off..off + dk], &k.row(j)[off..off + dk]);
        match (config.bias_mode, relations) {
            (BiasMode::BiasAfterScale, Some(r)) => d * scale + bias[r.get(i, j).index()],
            (BiasMode::BiasBeforeScale, Some(r)) => (d + bias[r.get(i, j).index()]) * scale,
            (BiasMode::Mask, Some(r)) if masked[r.get(i, j).index()] => T::lit(MASK_LOGIT),
            _ => d * scale,
        }
    })
}

pub(crate) fn softmax_rows<T: Real>(mut s: Mat<T>) -> Mat<T> {
    for i in 0..s.rows() {
        let row = s.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    s
}

/// One encoder block, keeping the intermediates for backpropagation.
pub fn layer_forward<T: Real>(
    x: Mat<T>,
    layer: &LayerParams<T>,
    relations: Option<&BiasTypeMatrix>,
    config: &EncoderConfig,
) -> Result<(Mat<T>, LayerTrace<T>)> {
    let (n, d) = x.shape();
    if d != config.d_model {
        return Err(Error::DimensionMismatch(format!(
            "layer input width {d}, model width {}",
            config.d_model
        )));
    }
    check_relations(n, relations, config.bias_mode)?;

    let mut q = x.matmul(&layer.wq);
    q.add_row_broadcast(&layer.bq);
    let mut k = x.matmul(&layer.wk);
    k.add_row_broadcast(&layer.bk);
    let mut v = x.matmul(&layer.wv);
    v.add_row_broadcast(&layer.bv);

    let dv = config.d_v;
    let mut ctx = Mat::zeros(n, config.heads * dv);
    let mut probs = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let p = softmax_rows(head_logits(&q, &k, h, layer, relations, config));
        let off = h * dv;
        for i in 0..n {
            for j in 0..n {
                let w = p.get(i, j);
                let vrow = &v.row(j)[off..off + dv];
                let crow = &mut ctx.row_mut(i)[off..off + dv];
                for (c, &vv) in crow.iter_mut().zip(vrow) {
                    *c = *c + w * vv;
                }
            }
        }
        probs.push(p);
    }

    let mut r1 = ctx.matmul(&layer.wo);
    r1.add_row_broadcast(&layer.bo);
    r1.add_assign(&x);
    let (y1, ln1) = layer_norm(&r1, &layer.ln1_gain, &layer.ln1_offset, config.layer_norm_eps);

    let mut u = y1.matmul(&layer.w1);
    u.add_row_broadcast(&layer.b1);
    let g = Mat::from_fn(u.rows(), u.cols(), |i, j| gelu(u.get(i, j)));
    let mut r2 = g.matmul(&layer.w2);
    r2.add_row_broadcast(&layer.b2);
    r2.add_assign(&y1);
    let (out, ln2) = layer_norm(&r2, &layer.ln2_gain, &layer.ln2_offset, config.layer_norm_eps);

    Ok((
        out,
        LayerTrace {
            x,
            q,
            k,
            v,
            probs,
            ctx,
            ln1,
            y1,
            u,
            g,
            ln2,
        },
    ))
}

/// Biased self-attention block: attention, residual and layer norm, then
/// FFN, residual and layer norm.
pub fn attention_layer<T: Real>(
    h: &Mat<T>,
    layer: &LayerParams<T>,
    relations: Option<&BiasTypeMatrix>,
    config: &EncoderConfig,
) -> Result<Mat<T>> {
    layer_forward(h.clone(), layer, relations, config).map(|(out, _)| out)
}

pub(crate) fn forward<T: Real>(
    seq: &LinearizedSequence,
    params: &ModelParams<T>,
    config: &EncoderConfig,
    relations: Option<&BiasTypeMatrix>,
) -> Result<(Mat<T>, Vec<LayerTrace<T>>)> {
    if seq.len() > config.max_positions {
        return Err(Error::SequenceTooLong {
            len: seq.len(),
            max: config.max_positions,
        });
    }
    if params.layers.len() != config.layers {
        return Err(Error::DimensionMismatch(format!(
            "config has {} layers, parameters have {}",
            config.layers,
            params.layers.len()
        )));
    }
    let mut h = embed(seq, params, config)?;
    let mut traces = Vec::with_capacity(config.layers);
    for layer in &params.layers {
        let (next, trace) = layer_forward(h, layer, relations, config)?;
        traces.push(trace);
        h = next;
    }
    Ok((h, traces))
}

/// Embeds `seq` and runs the full stack. Relations (with ablation applied)
/// are derived from the sequence's annotations.
pub fn encode<T: Real>(
    seq: &LinearizedSequence,
    params: &ModelParams<T>,
    config: &EncoderConfig,
) -> Result<EncodedOutput<T>> {
    let relations = relation_matrix(seq, config)?;
    let (hidden, traces) = forward(seq, params, config, relations.as_ref())?;
    Ok(EncodedOutput {
        hidden,
        attention: traces.into_iter().map(|t| t.probs).collect(),
    })
}
