use std::collections::BTreeSet;

use super::forward::{encode, EncodedOutput};
use super::params::{HeadParams, Model};
use super::tensor::{dot, Mat};
use super::Real;
use crate::error::{Error, Result};
use crate::linearize::{linearize, LinearizedSequence};
use crate::table::{compute_ranks, CellCoord, TableTextPair};

#[derive(Debug, Clone, PartialEq)]
pub struct CellSelection<T> {
    /// Mean token logit of every body cell, row-major.
    pub scores: Vec<(CellCoord, T)>,
    /// Cells whose sigmoid score is strictly above 0.5.
    pub selected: BTreeSet<CellCoord>,
    /// Groups of two or more cells with bit-identical scores.
    pub ties: Vec<Vec<CellCoord>>,
}

impl<T: Real> CellSelection<T> {
    pub fn score(&self, cell: CellCoord) -> Option<T> {
        self.scores.iter().find(|(c, _)| *c == cell).map(|&(_, s)| s)
    }
}

pub(crate) fn token_logits<T: Real>(hidden: &Mat<T>, head: &HeadParams<T>) -> Vec<T> {
    let b = head.bias.as_slice()[0];
    (0..hidden.rows())
        .map(|i| dot(hidden.row(i), head.weight.as_slice()) + b)
        .collect()
}

pub(crate) fn cell_scores<T: Real>(logits: &[T], groups: &[(CellCoord, Vec<usize>)]) -> Vec<(CellCoord, T)> {
    groups
        .iter()
        .map(|(coord, idx)| {
            let sum: T = idx.iter().map(|&i| logits[i]).sum();
            (*coord, sum / T::lit(idx.len() as f64))
        })
        .collect()
}

/// Scores every body cell with the linear probe and selects those above
/// the 0.5 probability threshold.
pub fn cell_select<T: Real>(
    out: &EncodedOutput<T>,
    head: &HeadParams<T>,
    seq: &LinearizedSequence,
) -> Result<CellSelection<T>> {
    if out.hidden.rows() != seq.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} encoded rows for a {}-token sequence",
            out.hidden.rows(),
            seq.len()
        )));
    }
    if head.weight.len() != out.hidden.cols() {
        return Err(Error::DimensionMismatch("probe width differs from model width".into()));
    }
    let groups = seq.cell_groups();
    if groups.is_empty() {
        return Err(Error::NoCells);
    }
    let scores = cell_scores(&token_logits(&out.hidden, head), &groups);
    // sigmoid(s) > 0.5 exactly when s > 0.
    let selected = scores.iter().filter(|(_, s)| *s > T::zero()).map(|(c, _)| *c).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .1
            .partial_cmp(&scores[b].1)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]].1 == scores[order[start]].1 {
            end += 1;
        }
        if end - start > 1 {
            let mut group: Vec<CellCoord> = order[start..end].iter().map(|&i| scores[i].0).collect();
            group.sort();
            ties.push(group);
        }
        start = end;
    }
    ties.sort();
    Ok(CellSelection { scores, selected, ties })
}

/// Linearizes `pair` under the model's scheme, encodes it and selects cells.
pub fn predict<T: Real>(model: &Model<T>, pair: &TableTextPair) -> Result<CellSelection<T>> {
    let ranks = compute_ranks(pair.table());
    let seq = linearize(pair, &ranks, model.config.scheme, &model.config.linearize_options())?;
    let out = encode(&seq, &model.params, &model.config)?;
    cell_select(&out, &model.params.head, &seq)
}
