//! Metamorphic checks under row and column permutations.
//!
//! A permutation moves table tokens around in the linearized sequence.
//! [`correspondence`] recovers where every original token ends up, which
//! lets [`check_equivariance`] compare encoder outputs token by token.
//! [`vp_metric`] counts examples whose correctness flips under a
//! perturbation.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::encoder::{encode, predict, Model, Real};
use crate::error::{Error, Result};
use crate::linearize::{linearize, LinearizedSequence, TokenKind};
use crate::rng::derive_seed;
use crate::table::{compute_ranks, permute_table, random_permutation, CellCoord, TablePermutation, TableTextPair};

/// Bijection from token indices of an original sequence to token indices
/// of its permuted counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenCorrespondence {
    map: Vec<usize>,
}

impl TokenCorrespondence {
    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &j)| i == j)
    }
}

/// (kind, 1-based row, 1-based column) of the cell a token belongs to.
type CellKey = (TokenKind, usize, usize);

fn cell_key(seq: &LinearizedSequence, i: usize) -> Option<CellKey> {
    let a = &seq.tokens[i].annotation;
    matches!(a.kind, TokenKind::Header | TokenKind::Cell).then_some((a.kind, a.row, a.column))
}

/// Token indices of every header and body cell, in sequence order.
fn cell_tokens(seq: &LinearizedSequence) -> HashMap<CellKey, Vec<usize>> {
    let mut out: HashMap<CellKey, Vec<usize>> = HashMap::new();
    for i in 0..seq.len() {
        if let Some(key) = cell_key(seq, i) {
            out.entry(key).or_default().push(i);
        }
    }
    out
}

/// Maps each token of `orig` to its position in `pert`, where `pert` is the
/// linearization of the same pair after `perm`.
///
/// Sentence-side tokens map positionally. A header or cell token moves to
/// the permuted coordinate of its cell and keeps its index within the cell.
/// Mapping goes through coordinates, so duplicate cell contents are fine.
pub fn correspondence(
    orig: &LinearizedSequence,
    pert: &LinearizedSequence,
    perm: &TablePermutation,
) -> Result<TokenCorrespondence> {
    let fail = |msg: String| Err(Error::Correspondence(msg));
    if orig.scheme != pert.scheme {
        return fail(format!("schemes differ: {} vs {}", orig.scheme, pert.scheme));
    }
    if orig.len() != pert.len() {
        return fail(format!("lengths differ: {} vs {}", orig.len(), pert.len()));
    }
    let orig_cells = cell_tokens(orig);
    let pert_cells = cell_tokens(pert);
    let mut map = vec![0; orig.len()];
    let mut hit = vec![false; pert.len()];
    for i in 0..orig.len() {
        let j = match cell_key(orig, i) {
            None => i,
            Some((kind, row, col)) => {
                if col == 0 || col > perm.col_perm().len() || row > perm.row_perm().len() {
                    return fail(format!("token {i} lies outside the permutation's table shape"));
                }
                let new_col = perm.col_perm()[col - 1] + 1;
                let new_row = if row == 0 { 0 } else { perm.row_perm()[row - 1] + 1 };
                let source = &orig_cells[&(kind, row, col)];
                let offset = source.iter().position(|&t| t == i).expect("token is in its own cell");
                match pert_cells.get(&(kind, new_row, new_col)) {
                    Some(target) if target.len() == source.len() => target[offset],
                    _ => {
                        return fail(format!(
                            "cell ({row}, {col}) has no same-length counterpart at ({new_row}, {new_col})"
                        ))
                    }
                }
            }
        };
        let (a, b) = (&orig.tokens[i], &pert.tokens[j]);
        if a.annotation.kind != b.annotation.kind || a.text != b.text {
            return fail(format!(
                "token {i} ({:?}) does not match token {j} ({:?})",
                a.text, b.text
            ));
        }
        if hit[j] {
            return fail(format!("token {j} is the image of two tokens"));
        }
        hit[j] = true;
        map[i] = j;
    }
    Ok(TokenCorrespondence { map })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub max_abs_diff: f64,
    /// Per original token, the largest absolute difference over dimensions.
    pub token_diffs: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Encodes `pair` and its permutation and compares the outputs through the
/// token correspondence.
pub fn check_equivariance<T: Real>(
    model: &Model<T>,
    pair: &TableTextPair,
    perm: &TablePermutation,
    tolerance: f64,
) -> Result<EquivarianceReport> {
    let opts = model.config.linearize_options();
    let scheme = model.config.scheme;
    let permuted = permute_table(pair, perm)?;
    let orig = linearize(pair, &compute_ranks(pair.table()), scheme, &opts)?;
    let pert = linearize(&permuted, &compute_ranks(permuted.table()), scheme, &opts)?;
    let m = correspondence(&orig, &pert, perm)?;
    let a = encode(&orig, &model.params, &model.config)?;
    let b = encode(&pert, &model.params, &model.config)?;
    let token_diffs: Vec<f64> = (0..orig.len())
        .map(|i| {
            a.hidden
                .row(i)
                .iter()
                .zip(b.hidden.row(m.apply(i)))
                .map(|(&x, &y)| (x - y).abs().to_f64().unwrap_or(f64::NAN))
                .fold(0.0, f64::max)
        })
        .collect();
    let max_abs_diff = token_diffs.iter().copied().fold(0.0, f64::max);
    let pass = token_diffs.iter().all(|d| *d <= tolerance);
    Ok(EquivarianceReport {
        max_abs_diff,
        token_diffs,
        tolerance,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flip {
    T2t,
    T2f,
    F2t,
    F2f,
}

impl Flip {
    pub fn from_correctness(before: bool, after: bool) -> Self {
        match (before, after) {
            (true, true) => Flip::T2t,
            (true, false) => Flip::T2f,
            (false, true) => Flip::F2t,
            (false, false) => Flip::F2f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpReport {
    pub t2t: usize,
    pub t2f: usize,
    pub f2t: usize,
    pub f2f: usize,
    pub vp: f64,
}

impl VpReport {
    pub fn total(&self) -> usize {
        self.t2t + self.t2f + self.f2t + self.f2f
    }

    fn from_flips(flips: impl IntoIterator<Item = Flip>) -> Self {
        let mut r = VpReport {
            t2t: 0,
            t2f: 0,
            f2t: 0,
            f2f: 0,
            vp: 0.0,
        };
        for f in flips {
            match f {
                Flip::T2t => r.t2t += 1,
                Flip::T2f => r.t2f += 1,
                Flip::F2t => r.f2t += 1,
                Flip::F2f => r.f2f += 1,
            }
        }
        r.vp = (r.t2f + r.f2t) as f64 / r.total() as f64;
        r
    }
}

/// Fraction of examples whose exact-match correctness differs between the
/// two prediction lists. All three lists use original cell coordinates.
pub fn vp_metric(
    before: &[BTreeSet<CellCoord>],
    after: &[BTreeSet<CellCoord>],
    gold: &[BTreeSet<CellCoord>],
) -> Result<VpReport> {
    if before.len() != after.len() || before.len() != gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} before, {} after, {} gold",
            before.len(),
            after.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::LengthMismatch("no examples".into()));
    }
    Ok(VpReport::from_flips(
        before
            .iter()
            .zip(after)
            .zip(gold)
            .map(|((b, a), g)| Flip::from_correctness(b == g, a == g)),
    ))
}

/// Maps cells selected on a permuted table back to original coordinates.
pub fn map_back(cells: &BTreeSet<CellCoord>, perm: &TablePermutation) -> BTreeSet<CellCoord> {
    let inv = perm.inverse();
    cells.iter().map(|&c| inv.apply(c)).collect()
}

/// Permutation used for example `index` of a perturbed evaluation.
pub fn example_permutation(pair: &TableTextPair, seed: u64, index: usize) -> TablePermutation {
    let t = pair.table();
    random_permutation(t.num_rows(), t.num_cols(), derive_seed(seed, index as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEval {
    pub vp: VpReport,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// Examples whose original prediction contained exactly tied scores.
    pub examples_with_ties: usize,
    pub flips: Vec<Flip>,
}

/// Predicts every pair before and after a seeded permutation and measures
/// prediction variation against the pairs' gold cells.
pub fn perturbation_eval<T: Real>(model: &Model<T>, pairs: &[TableTextPair], seed: u64) -> Result<PerturbationEval> {
    let mut before = Vec::with_capacity(pairs.len());
    let mut after = Vec::with_capacity(pairs.len());
    let mut gold = Vec::with_capacity(pairs.len());
    let mut examples_with_ties = 0;
    for (i, pair) in pairs.iter().enumerate() {
        let perm = example_permutation(pair, seed, i);
        let sel = predict(model, pair)?;
        if !sel.ties.is_empty() {
            examples_with_ties += 1;
        }
        before.push(sel.selected);
        after.push(map_back(&predict(model, &permute_table(pair, &perm)?)?.selected, &perm));
        gold.push(pair.gold_cells().clone());
    }
    let vp = vp_metric(&before, &after, &gold)?;
    let flips = before
        .iter()
        .zip(&after)
        .zip(&gold)
        .map(|((b, a), g)| Flip::from_correctness(b == g, a == g))
        .collect();
    let n = pairs.len() as f64;
    Ok(PerturbationEval {
        accuracy_before: (vp.t2t + vp.t2f) as f64 / n,
        accuracy_after: (vp.t2t + vp.f2t) as f64 / n,
        vp,
        examples_with_ties,
        flips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{BiasMode, EncoderConfig};
    use crate::linearize::{LinearizeOptions, PositionalScheme};
    use crate::table::Table;

    fn songs() -> TableTextPair {
        let table = Table::from_strs(
            &["Title", "Length"],
            &[&["Screwed Up", "5:02"], &["Ghetto Queen", "5:00"]],
        )
        .unwrap();
        TableTextPair::new("which one is the longest?", table, [CellCoord::new(0, 1)]).unwrap()
    }

    fn lin(pair: &TableTextPair, scheme: PositionalScheme) -> LinearizedSequence {
        linearize(pair, &compute_ranks(pair.table()), scheme, &LinearizeOptions::default()).unwrap()
    }

    fn set(cells: &[(usize, usize)]) -> BTreeSet<CellCoord> {
        cells.iter().map(|&(r, c)| CellCoord::new(r, c)).collect()
    }

    #[test]
    fn identity_permutation_gives_identity_map() {
        let p = songs();
        let s = lin(&p, PositionalScheme::Pcp);
        let m = correspondence(&s, &s, &TablePermutation::identity(2, 2)).unwrap();
        assert!(m.is_identity());
    }

    #[test]
    fn row_swap_moves_first_row_tokens() {
        let p = songs();
        let perm = TablePermutation::new(vec![1, 0], vec![0, 1], 0).unwrap();
        let q = permute_table(&p, &perm).unwrap();
        let (a, b) = (lin(&p, PositionalScheme::Pcp), lin(&q, PositionalScheme::Pcp));
        let m = correspondence(&a, &b, &perm).unwrap();
        let first_row: Vec<usize> = (0..a.len()).filter(|&i| a.tokens[i].annotation.row == 1).collect();
        let images: Vec<&str> = first_row.iter().map(|&i| b.tokens[m.apply(i)].text.as_str()).collect();
        assert_eq!(images, ["screwed", "up", "5", ":", "02"]);
        assert!(first_row.iter().all(|&i| b.tokens[m.apply(i)].annotation.row == 2));
    }

    #[test]
    fn duplicate_rows_still_biject() {
        let table = Table::from_strs(&["a", "b"], &[&["x", "y"], &["x", "y"]]).unwrap();
        let p = TableTextPair::new("q", table, []).unwrap();
        let perm = TablePermutation::new(vec![1, 0], vec![1, 0], 0).unwrap();
        let q = permute_table(&p, &perm).unwrap();
        let m = correspondence(&lin(&p, PositionalScheme::Gp), &lin(&q, PositionalScheme::Gp), &perm).unwrap();
        let mut image = m.as_slice().to_vec();
        image.sort();
        assert_eq!(image, (0..m.len()).collect::<Vec<_>>());
        assert!(!m.is_identity());
    }

    #[test]
    fn unrelated_sequences_are_rejected() {
        let p = songs();
        let other = TableTextPair::new("which one is the shortest?", p.table().clone(), []).unwrap();
        let r = correspondence(
            &lin(&p, PositionalScheme::Pcp),
            &lin(&other, PositionalScheme::Pcp),
            &TablePermutation::identity(2, 2),
        );
        assert!(matches!(r, Err(Error::Correspondence(_))));
        let r = correspondence(
            &lin(&p, PositionalScheme::Pcp),
            &lin(&p, PositionalScheme::Gp),
            &TablePermutation::identity(2, 2),
        );
        assert!(matches!(r, Err(Error::Correspondence(_))));
    }

    #[test]
    fn zero_layer_pcp_is_exact() {
        let config = EncoderConfig::new(0, 2, 8).with_vocab(64, 64);
        let model = Model::<f64>::new(config, 3).unwrap();
        let perm = TablePermutation::new(vec![1, 0], vec![1, 0], 0).unwrap();
        let r = check_equivariance(&model, &songs(), &perm, 0.0).unwrap();
        assert_eq!(r.max_abs_diff, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn pcp_is_equivariant_and_row_ids_are_not() {
        let perm = TablePermutation::new(vec![1, 0], vec![1, 0], 0).unwrap();
        for mode in BiasMode::ALL {
            let config = EncoderConfig::new(2, 2, 8).with_vocab(64, 64).with_bias_mode(mode);
            let mut model = Model::<f64>::new(config, 5).unwrap();
            model.params.randomize_bias_scalars(6, 1.0);
            let r = check_equivariance(&model, &songs(), &perm, 1e-10).unwrap();
            assert!(r.pass, "{mode}: {}", r.max_abs_diff);
        }
        let mut config = EncoderConfig::new(2, 2, 8)
            .with_vocab(64, 64)
            .with_scheme(PositionalScheme::RcGp);
        config.init_std = 0.5;
        let model = Model::<f64>::new(config, 5).unwrap();
        assert!(!check_equivariance(&model, &songs(), &perm, 1e-2).unwrap().pass);
    }

    #[test]
    fn vp_formula() {
        let g = set(&[(0, 0)]);
        let w = set(&[(1, 0)]);
        let gold = vec![g.clone(); 4];
        let before = vec![g.clone(), g.clone(), w.clone(), w.clone()];
        let after = vec![g.clone(), w.clone(), g.clone(), w.clone()];
        let r = vp_metric(&before, &after, &gold).unwrap();
        assert_eq!((r.t2t, r.t2f, r.f2t, r.f2f), (1, 1, 1, 1));
        assert_eq!(r.vp, 0.5);
        assert_eq!(vp_metric(&before, &before, &gold).unwrap().vp, 0.0);
        let swapped = vp_metric(&after, &before, &gold).unwrap();
        assert_eq!(swapped.t2f + swapped.f2t, r.t2f + r.f2t);
    }

    #[test]
    fn vp_length_errors() {
        let g = vec![set(&[(0, 0)])];
        assert!(matches!(vp_metric(&g, &[], &g), Err(Error::LengthMismatch(_))));
        assert!(matches!(vp_metric(&[], &[], &[]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn map_back_inverts_apply() {
        let perm = TablePermutation::new(vec![2, 0, 1], vec![1, 0], 0).unwrap();
        let orig = set(&[(0, 0), (2, 1)]);
        let moved: BTreeSet<_> = orig.iter().map(|&c| perm.apply(c)).collect();
        assert_eq!(map_back(&moved, &perm), orig);
    }
}
