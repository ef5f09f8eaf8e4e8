//! Binary cross-entropy over cell scores and hand-written reverse-mode
//! gradients for every parameter, relation bias scalars included.

use super::forward::{forward, gelu_grad, relation_matrix, LayerTrace, LnCache};
use super::head::{cell_scores, token_logits};
use super::params::{LayerParams, ModelParams};
use super::tensor::Mat;
use super::{BiasMode, EncoderConfig, Real};
use crate::error::{Error, Result};
use crate::linearize::{linearize, LinearizedSequence, PositionalScheme};
use crate::relations::{BiasTypeMatrix, NUM_BIAS_TYPES};
use crate::table::{compute_ranks, CellCoord, TableTextPair};

/// A linearized pair with its relation matrix, cell token groups and
/// per-cell gold labels.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub seq: LinearizedSequence,
    pub relations: Option<BiasTypeMatrix>,
    pub cells: Vec<(CellCoord, Vec<usize>)>,
    pub labels: Vec<bool>,
}

impl TrainingExample {
    pub fn prepare(pair: &TableTextPair, config: &EncoderConfig) -> Result<Self> {
        let ranks = compute_ranks(pair.table());
        let seq = linearize(pair, &ranks, config.scheme, &config.linearize_options())?;
        let relations = relation_matrix(&seq, config)?;
        let cells = seq.cell_groups();
        if cells.is_empty() {
            return Err(Error::NoCells);
        }
        let labels = cells.iter().map(|(c, _)| pair.gold_cells().contains(c)).collect();
        Ok(Self {
            seq,
            relations,
            cells,
            labels,
        })
    }
}

/// `max(s, 0) - s*y + ln(1 + exp(-|s|))`
fn bce<T: Real>(s: T, y: bool) -> T {
    let y = if y { T::one() } else { T::zero() };
    s.max(T::zero()) - s * y + (-s.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(s: T) -> T {
    T::one() / (T::one() + (-s).exp())
}

pub(crate) fn total_cells(batch: &[TrainingExample]) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::LengthMismatch("empty batch".into()));
    }
    Ok(batch.iter().map(|e| e.cells.len()).sum())
}

fn example_loss_sum<T: Real>(
    ex: &TrainingExample,
    params: &ModelParams<T>,
    config: &EncoderConfig,
) -> Result<(T, Mat<T>, Vec<LayerTrace<T>>, Vec<T>)> {
    let (hidden, traces) = forward(&ex.seq, params, config, ex.relations.as_ref())?;
    let logits = token_logits(&hidden, &params.head);
    let scores = cell_scores(&logits, &ex.cells);
    let loss = scores.iter().zip(&ex.labels).map(|(&(_, s), &y)| bce(s, y)).sum();
    Ok((loss, hidden, traces, scores.into_iter().map(|(_, s)| s).collect()))
}

fn check_finite<T: Real>(loss: T) -> Result<T> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numerical(format!("loss is {loss}")))
    }
}

/// Mean binary cross-entropy over every cell of the batch (forward only).
pub fn loss<T: Real>(batch: &[TrainingExample], params: &ModelParams<T>, config: &EncoderConfig) -> Result<T> {
    let cells = T::lit(total_cells(batch)? as f64);
    let mut total = T::zero();
    for ex in batch {
        total = total + example_loss_sum(ex, params, config)?.0;
    }
    check_finite(total / cells)
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grads<T: Real>(
    batch: &[TrainingExample],
    params: &ModelParams<T>,
    config: &EncoderConfig,
) -> Result<(T, ModelParams<T>)> {
    let mut grads = params.zeros_like();
    let refs: Vec<&TrainingExample> = batch.iter().collect();
    let loss = accumulate_grads(&refs, params, config, total_cells(batch)?, &mut grads, None)?;
    for (name, g) in grads.tensors() {
        if g.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient in {name}")));
        }
    }
    Ok((loss, grads))
}

/// Adds the gradient of `sum(bce) / normalizer` over `batch` into `grads`
/// and returns that partial loss. Examples are visited in order. When
/// `correct` is given, pushes whether each example's thresholded cell
/// selection matched its labels exactly.
pub(crate) fn accumulate_grads<T: Real>(
    batch: &[&TrainingExample],
    params: &ModelParams<T>,
    config: &EncoderConfig,
    normalizer: usize,
    grads: &mut ModelParams<T>,
    mut correct: Option<&mut Vec<bool>>,
) -> Result<T> {
    let norm = T::lit(normalizer as f64);
    let mut total = T::zero();
    for &ex in batch {
        let (loss, hidden, traces, scores) = example_loss_sum(ex, params, config)?;
        total = total + loss;
        if let Some(c) = correct.as_deref_mut() {
            c.push(scores.iter().zip(&ex.labels).all(|(&s, &y)| (s > T::zero()) == y));
        }

        // Probe: score_c = mean of token logits in cell c.
        let mut dh = Mat::zeros(hidden.rows(), hidden.cols());
        let w = params.head.weight.as_slice();
        for (((_, idx), &s), &y) in ex.cells.iter().zip(&scores).zip(&ex.labels) {
            let target = if y { T::one() } else { T::zero() };
            let g = (sigmoid(s) - target) / norm / T::lit(idx.len() as f64);
            for &i in idx {
                let hrow = hidden.row(i);
                for (gw, &hv) in grads.head.weight.as_mut_slice().iter_mut().zip(hrow) {
                    *gw = *gw + g * hv;
                }
                grads.head.bias.as_mut_slice()[0] = grads.head.bias.as_slice()[0] + g;
                for (d, &wv) in dh.row_mut(i).iter_mut().zip(w) {
                    *d = *d + g * wv;
                }
            }
        }

        for (l, trace) in traces.iter().enumerate().rev() {
            dh = layer_backward(
                &dh,
                trace,
                &params.layers[l],
                &mut grads.layers[l],
                ex.relations.as_ref(),
                config,
            );
        }
        embed_backward(&dh, &ex.seq, grads, config);
    }
    check_finite(total / norm)
}

fn ln_backward<T: Real>(
    dy: &Mat<T>,
    cache: &LnCache<T>,
    gain: &Mat<T>,
    dgain: &mut Mat<T>,
    doffset: &mut Mat<T>,
) -> Mat<T> {
    let (n, d) = dy.shape();
    let dn = T::lit(d as f64);
    let mut dx = Mat::zeros(n, d);
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain.as_mut_slice()[j] = dgain.as_slice()[j] + dyr[j] * xh[j];
            doffset.as_mut_slice()[j] = doffset.as_slice()[j] + dyr[j];
            let dxh = dyr[j] * gain.as_slice()[j];
            sum_dxhat = sum_dxhat + dxh;
            sum_dxhat_xhat = sum_dxhat_xhat + dxh * xh[j];
        }
        let mean_dxhat = sum_dxhat / dn;
        let mean_dxhat_xhat = sum_dxhat_xhat / dn;
        let inv = cache.inv_std[i];
        let out = dx.row_mut(i);
        for j in 0..d {
            let dxh = dyr[j] * gain.as_slice()[j];
            out[j] = inv * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

/// `dY` of a linear map `Y = X W + b`: accumulates `dW`, `db` and returns `dX`.
fn linear_backward<T: Real>(x: &Mat<T>, dy: &Mat<T>, w: &Mat<T>, dw: &mut Mat<T>, db: &mut Mat<T>) -> Mat<T> {
    x.t_matmul_into(dy, dw);
    dy.col_sums_into(db);
    dy.matmul_t(w)
}

fn layer_backward<T: Real>(
    dout: &Mat<T>,
    t: &LayerTrace<T>,
    p: &LayerParams<T>,
    g: &mut LayerParams<T>,
    relations: Option<&BiasTypeMatrix>,
    config: &EncoderConfig,
) -> Mat<T> {
    let n = dout.rows();

    // out = LN2(y1 + gelu(y1 W1 + b1) W2 + b2)
    let dr2 = ln_backward(dout, &t.ln2, &p.ln2_gain, &mut g.ln2_gain, &mut g.ln2_offset);
    let dgelu = linear_backward(&t.g, &dr2, &p.w2, &mut g.w2, &mut g.b2);
    let du = Mat::from_fn(n, dgelu.cols(), |i, j| dgelu.get(i, j) * gelu_grad(t.u.get(i, j)));
    let mut dy1 = linear_backward(&t.y1, &du, &p.w1, &mut g.w1, &mut g.b1);
    dy1.add_assign(&dr2);

    // y1 = LN1(x + ctx Wo + bo)
    let dr1 = ln_backward(&dy1, &t.ln1, &p.ln1_gain, &mut g.ln1_gain, &mut g.ln1_offset);
    let dctx = linear_backward(&t.ctx, &dr1, &p.wo, &mut g.wo, &mut g.bo);
    let mut dx = dr1;

    let (dk_, dv_) = (config.d_k, config.d_v);
    let scale = T::one() / T::lit(dk_ as f64).sqrt();
    let mut masked = [false; NUM_BIAS_TYPES];
    for ty in &config.masked_types {
        masked[ty.index()] = true;
    }
    let mut dq = Mat::zeros(n, t.q.cols());
    let mut dk = Mat::zeros(n, t.k.cols());
    let mut dv = Mat::zeros(n, t.v.cols());
    for h in 0..config.heads {
        let prob = &t.probs[h];
        let voff = h * dv_;
        let koff = h * dk_;
        // dP = dctx_h V_hᵀ ; dV_h += Pᵀ dctx_h
        let mut dp = Mat::zeros(n, n);
        for i in 0..n {
            let dc = &dctx.row(i)[voff..voff + dv_];
            for j in 0..n {
                let vr = &t.v.row(j)[voff..voff + dv_];
                let mut acc = T::zero();
                for c in 0..dv_ {
                    acc = acc + dc[c] * vr[c];
                }
                dp.set(i, j, acc);
                let pij = prob.get(i, j);
                let dvr = &mut dv.row_mut(j)[voff..voff + dv_];
                for c in 0..dv_ {
                    dvr[c] = dvr[c] + pij * dc[c];
                }
            }
        }
        for i in 0..n {
            let pr = prob.row(i);
            let inner = pr.iter().zip(dp.row(i)).fold(T::zero(), |s, (&a, &b)| s + a * b);
            for j in 0..n {
                // Softmax Jacobian applied to the row.
                let ds = pr[j] * (dp.get(i, j) - inner);
                let ty = relations.map(|r| r.get(i, j).index());
                let ddot = match (config.bias_mode, ty) {
                    (BiasMode::BiasAfterScale, Some(ty)) => {
                        g.attn_bias.add_at(h, ty, ds);
                        ds * scale
                    }
                    (BiasMode::BiasBeforeScale, Some(ty)) => {
                        g.attn_bias.add_at(h, ty, ds * scale);
                        ds * scale
                    }
                    (BiasMode::Mask, Some(ty)) if masked[ty] => continue,
                    _ => ds * scale,
                };
                let kr = &t.k.row(j)[koff..koff + dk_];
                let qr = &t.q.row(i)[koff..koff + dk_];
                for c in 0..dk_ {
                    dq.add_at(i, koff + c, ddot * kr[c]);
                    dk.add_at(j, koff + c, ddot * qr[c]);
                }
            }
        }
    }
    dx.add_assign(&linear_backward(&t.x, &dq, &p.wq, &mut g.wq, &mut g.bq));
    dx.add_assign(&linear_backward(&t.x, &dk, &p.wk, &mut g.wk, &mut g.bk));
    dx.add_assign(&linear_backward(&t.x, &dv, &p.wv, &mut g.wv, &mut g.bv));
    dx
}

fn scatter<T: Real>(table: &mut Mat<T>, id: usize, grad: &[T]) {
    for (t, &g) in table.row_mut(id).iter_mut().zip(grad) {
        *t = *t + g;
    }
}

fn embed_backward<T: Real>(dh: &Mat<T>, seq: &LinearizedSequence, grads: &mut ModelParams<T>, config: &EncoderConfig) {
    let e = &mut grads.embeddings;
    for (i, tok) in seq.tokens.iter().enumerate() {
        let g = dh.row(i);
        let position = match config.scheme {
            PositionalScheme::Pcp => tok.cell_pos,
            _ => tok.global_pos,
        };
        scatter(&mut e.word, tok.token_id as usize, g);
        scatter(&mut e.segment, tok.segment_id as usize, g);
        scatter(&mut e.rank, tok.rank_id as usize, g);
        scatter(&mut e.position, position as usize, g);
        if let Some(c) = &mut e.column {
            scatter(c, tok.column_id as usize, g);
        }
        if let Some(r) = &mut e.row {
            scatter(r, tok.row_id as usize, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Table;

    fn example(config: &EncoderConfig) -> TrainingExample {
        let table = Table::from_strs(
            &["Title", "Length"],
            &[&["Screwed Up", "5:02"], &["Ghetto Queen", "5:00"]],
        )
        .unwrap();
        let pair = TableTextPair::new("longest?", table, [CellCoord::new(0, 1)]).unwrap();
        TrainingExample::prepare(&pair, config).unwrap()
    }

    #[test]
    fn zero_probe_gives_ln2_per_cell() {
        let config = EncoderConfig::new(1, 2, 8).with_vocab(64, 16);
        let mut params = ModelParams::<f64>::init(&config, 1).unwrap();
        params.head.weight = Mat::zeros(1, 8);
        let l = loss(&[example(&config)], &params, &config).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_predictions_have_tiny_loss() {
        assert!(bce(20.0f64, true) < 1e-3);
        assert!(bce(-20.0f64, false) < 1e-3);
        assert!(bce(1e4f64, true).is_finite());
        assert!((bce(1e4f64, false) - 1e4).abs() < 1e-9);
    }

    #[test]
    fn backward_loss_matches_forward_loss() {
        let config = EncoderConfig::new(2, 2, 8).with_vocab(64, 16);
        let params = ModelParams::<f64>::init(&config, 2).unwrap();
        let batch = [example(&config)];
        let (l, grads) = loss_and_grads(&batch, &params, &config).unwrap();
        assert_eq!(l, loss(&batch, &params, &config).unwrap());
        assert!(grads.layers[0].attn_bias.max_abs() > 0.0);
    }

    #[test]
    fn mask_mode_bias_scalars_get_no_gradient() {
        let config = EncoderConfig::new(1, 2, 8)
            .with_vocab(64, 16)
            .with_bias_mode(BiasMode::Mask);
        let params = ModelParams::<f64>::init(&config, 2).unwrap();
        let (_, grads) = loss_and_grads(&[example(&config)], &params, &config).unwrap();
        assert_eq!(grads.layers[0].attn_bias.max_abs(), 0.0);
    }

    #[test]
    fn overflow_is_reported() {
        let config = EncoderConfig::new(1, 2, 8).with_vocab(64, 16);
        let mut params = ModelParams::<f64>::init(&config, 2).unwrap();
        params.head.bias.as_mut_slice()[0] = f64::NAN;
        assert!(matches!(
            loss_and_grads(&[example(&config)], &params, &config),
            Err(Error::Numerical(_))
        ));
    }
}
