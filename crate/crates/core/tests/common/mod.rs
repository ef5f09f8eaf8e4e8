//! Helpers shared by the integration tests: random tables and oracles that
//! work from the table itself rather than from linearizer annotations.

#![allow(dead_code)]

use proptest::prelude::*;
use relbias::linearize::tokenize;
use relbias::rng::SplitMix64;
use relbias::table::{CellCoord, Table, TableTextPair};

const WORDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "red", "blue", "north", "south", "new york", "x-ray", "o'neil", "big data",
    "tea",
];

const NUMBERS: &[&str] = &["1", "2", "10", "3.5", "-4", "5:02", "5:00", "0", "42", "7"];

/// Mixed text and numeric content; some cells empty.
fn random_text(rng: &mut SplitMix64, numeric: bool) -> String {
    match rng.below(10) {
        0 => String::new(),
        _ if numeric => NUMBERS[rng.below(NUMBERS.len() as u64) as usize].to_string(),
        _ => WORDS[rng.below(WORDS.len() as u64) as usize].to_string(),
    }
}

/// A random pair with `0..=max_rows` rows and `1..=max_cols` columns; each
/// column is numeric with probability 1/2 and about a quarter of the cells
/// are gold.
pub fn random_pair(rng: &mut SplitMix64, max_rows: usize, max_cols: usize) -> TableTextPair {
    let rows = rng.below(max_rows as u64 + 1) as usize;
    let cols = 1 + rng.below(max_cols as u64) as usize;
    random_pair_of_shape(rng, rows, cols)
}

pub fn random_pair_of_shape(rng: &mut SplitMix64, rows: usize, cols: usize) -> TableTextPair {
    let numeric: Vec<bool> = (0..cols).map(|_| rng.below(2) == 0).collect();
    let headers = (0..cols)
        .map(|_| WORDS[rng.below(WORDS.len() as u64) as usize].to_string())
        .collect();
    let body = (0..rows)
        .map(|_| (0..cols).map(|c| random_text(rng, numeric[c])).collect())
        .collect();
    let gold: Vec<CellCoord> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| CellCoord::new(r, c)))
        .filter(|_| rng.below(4) == 0)
        .collect();
    let sentence = ["which one is the longest?", "how many", "select red", "who won in 5:02"][rng.below(4) as usize];
    TableTextPair::new(sentence, Table::new(headers, body).unwrap(), gold).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Sentence,
    Header { col: usize },
    Cell { row: usize, col: usize },
}

/// Token layout recomputed from the table: one entry per token with the
/// structural role of the cell it came from.
pub fn oracle_layout(pair: &TableTextPair) -> Vec<Side> {
    let count = |text: &str| tokenize(text).len().max(1);
    let mut out = vec![Side::Sentence; tokenize(&pair.sentence).len() + 2];
    let t = pair.table();
    for (c, h) in t.headers().iter().enumerate() {
        out.extend(std::iter::repeat(Side::Header { col: c }).take(count(h)));
    }
    for (r, row) in t.rows().iter().enumerate() {
        for (c, text) in row.iter().enumerate() {
            out.extend(std::iter::repeat(Side::Cell { row: r, col: c }).take(count(text)));
        }
    }
    out
}

/// Relation code of query `a` to key `b`, written from the type glossary.
pub fn oracle_code(a: Side, b: Side) -> u8 {
    use Side::*;
    match (a, b) {
        (Sentence, Sentence) => 9,
        (Sentence, Header { .. }) => 7,
        (Sentence, Cell { .. }) => 8,
        (Header { .. }, Sentence) => 5,
        (Cell { .. }, Sentence) => 6,
        (Header { col: x }, Header { col: y }) => {
            if x == y {
                10
            } else {
                11
            }
        }
        (Header { col: x }, Cell { col: y, .. }) if x == y => 3,
        (Cell { col: x, .. }, Header { col: y }) if x == y => 4,
        (Cell { row: r1, col: c1 }, Cell { row: r2, col: c2 }) if r1 == r2 && c1 == c2 => 12,
        (Cell { row: r1, .. }, Cell { row: r2, .. }) if r1 == r2 => 1,
        (Cell { col: c1, .. }, Cell { col: c2, .. }) if c1 == c2 => 2,
        _ => 0,
    }
}

pub fn oracle_matrix(pair: &TableTextPair) -> Vec<Vec<u8>> {
    let layout = oracle_layout(pair);
    layout
        .iter()
        .map(|&a| layout.iter().map(|&b| oracle_code(a, b)).collect())
        .collect()
}

fn cell_text() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        prop::sample::select(WORDS).prop_map(String::from),
        prop::sample::select(NUMBERS).prop_map(String::from),
        (0u32..60).prop_map(|v| v.to_string()),
    ]
}

/// Tables up to `max_rows` x `max_cols` with random gold cells.
pub fn arb_pair(max_rows: usize, max_cols: usize) -> impl Strategy<Value = TableTextPair> {
    (0..=max_rows, 1..=max_cols)
        .prop_flat_map(|(rows, cols)| {
            (
                prop::collection::vec(cell_text(), cols),
                prop::collection::vec(prop::collection::vec(cell_text(), cols), rows),
                prop::collection::vec(any::<bool>(), rows * cols),
                prop::sample::select(vec!["largest value", "select red", "", "who is 5:02?"]),
            )
        })
        .prop_map(|(headers, body, gold_mask, sentence)| {
            let cols = headers.len();
            let gold: Vec<CellCoord> = gold_mask
                .iter()
                .enumerate()
                .filter(|(_, &g)| g)
                .map(|(k, _)| CellCoord::new(k / cols, k % cols))
                .collect();
            TableTextPair::new(sentence, Table::new(headers, body).unwrap(), gold).unwrap()
        })
}
