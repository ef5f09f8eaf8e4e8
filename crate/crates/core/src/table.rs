//! Table data model, row/column permutations and numeric ranks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Zero-based (row, column) coordinate of a body cell. Serialized as `[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct CellCoord {
    pub row: usize,
    pub col: usize,
}

impl CellCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl From<[usize; 2]> for CellCoord {
    fn from([row, col]: [usize; 2]) -> Self {
        Self { row, col }
    }
}

impl From<CellCoord> for [usize; 2] {
    fn from(c: CellCoord) -> Self {
        [c.row, c.col]
    }
}

/// Column headers plus an R×C grid of body cells.
///
/// Header texts may repeat; columns are identified by index, never by text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if headers.is_empty() {
            return Err(Error::InvalidTable("a table needs at least one column".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != headers.len() {
                return Err(Error::InvalidTable(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    headers.len()
                )));
            }
        }
        Ok(Self { headers, rows })
    }

    /// Convenience constructor from string slices.
    pub fn from_strs(headers: &[&str], rows: &[&[&str]]) -> Result<Self> {
        Self::new(
            headers.iter().map(|s| s.to_string()).collect(),
            rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
        )
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.headers.len()
    }

    pub fn cell(&self, coord: CellCoord) -> &str {
        &self.rows[coord.row][coord.col]
    }
}

/// A sentence paired with a table, optionally carrying gold answer cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableTextPair {
    pub sentence: String,
    table: Table,
    gold_cells: BTreeSet<CellCoord>,
}

impl TableTextPair {
    pub fn new(
        sentence: impl Into<String>,
        table: Table,
        gold_cells: impl IntoIterator<Item = CellCoord>,
    ) -> Result<Self> {
        let gold_cells: BTreeSet<CellCoord> = gold_cells.into_iter().collect();
        for g in &gold_cells {
            if g.row >= table.num_rows() || g.col >= table.num_cols() {
                return Err(Error::InvalidTable(format!(
                    "gold cell ({}, {}) outside {}x{} table",
                    g.row,
                    g.col,
                    table.num_rows(),
                    table.num_cols()
                )));
            }
        }
        Ok(Self {
            sentence: sentence.into(),
            table,
            gold_cells,
        })
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    pub fn gold_cells(&self) -> &BTreeSet<CellCoord> {
        &self.gold_cells
    }
}

/// Bijections on row and column indices. `row_perm[r]` is the new index of
/// original row `r`; likewise for columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPermutation")]
pub struct TablePermutation {
    row_perm: Vec<usize>,
    col_perm: Vec<usize>,
    pub seed: u64,
}

#[derive(Deserialize)]
struct RawPermutation {
    row_perm: Vec<usize>,
    col_perm: Vec<usize>,
    #[serde(default)]
    seed: u64,
}

impl TryFrom<RawPermutation> for TablePermutation {
    type Error = Error;

    fn try_from(raw: RawPermutation) -> Result<Self> {
        Self::new(raw.row_perm, raw.col_perm, raw.seed)
    }
}

fn check_bijection(map: &[usize], what: &str) -> Result<()> {
    let mut seen = vec![false; map.len()];
    for &v in map {
        if v >= map.len() || std::mem::replace(&mut seen[v], true) {
            return Err(Error::InvalidPermutation(format!(
                "{what} map {map:?} is not a bijection on 0..{}",
                map.len()
            )));
        }
    }
    Ok(())
}

fn invert(map: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; map.len()];
    for (i, &v) in map.iter().enumerate() {
        inv[v] = i;
    }
    inv
}

impl TablePermutation {
    pub fn new(row_perm: Vec<usize>, col_perm: Vec<usize>, seed: u64) -> Result<Self> {
        check_bijection(&row_perm, "row")?;
        check_bijection(&col_perm, "column")?;
        Ok(Self {
            row_perm,
            col_perm,
            seed,
        })
    }

    pub fn identity(rows: usize, cols: usize) -> Self {
        Self {
            row_perm: (0..rows).collect(),
            col_perm: (0..cols).collect(),
            seed: 0,
        }
    }

    pub fn row_perm(&self) -> &[usize] {
        &self.row_perm
    }

    pub fn col_perm(&self) -> &[usize] {
        &self.col_perm
    }

    pub fn inverse(&self) -> Self {
        Self {
            row_perm: invert(&self.row_perm),
            col_perm: invert(&self.col_perm),
            seed: self.seed,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.row_perm.iter().enumerate().all(|(i, &v)| i == v) && self.col_perm.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// Where an original cell lands after permutation.
    pub fn apply(&self, coord: CellCoord) -> CellCoord {
        CellCoord::new(self.row_perm[coord.row], self.col_perm[coord.col])
    }

    fn check_dims(&self, table: &Table) -> Result<()> {
        if self.row_perm.len() != table.num_rows() || self.col_perm.len() != table.num_cols() {
            return Err(Error::DimensionMismatch(format!(
                "permutation is {}x{} but table is {}x{}",
                self.row_perm.len(),
                self.col_perm.len(),
                table.num_rows(),
                table.num_cols()
            )));
        }
        Ok(())
    }
}

/// Seeded uniform permutation of `rows` rows and `cols` columns.
///
/// One SplitMix64 stream seeded with `seed` shuffles `[0, rows)` and then
/// `[0, cols)` with Fisher-Yates; each shuffled vector is read as the
/// old-to-new index map.
pub fn random_permutation(rows: usize, cols: usize, seed: u64) -> TablePermutation {
    let mut rng = SplitMix64::new(seed);
    let mut row_perm: Vec<usize> = (0..rows).collect();
    let mut col_perm: Vec<usize> = (0..cols).collect();
    rng.shuffle(&mut row_perm);
    rng.shuffle(&mut col_perm);
    TablePermutation {
        row_perm,
        col_perm,
        seed,
    }
}

/// Reorders rows and columns (headers included) and remaps gold cells.
pub fn permute_table(pair: &TableTextPair, perm: &TablePermutation) -> Result<TableTextPair> {
    let table = pair.table();
    perm.check_dims(table)?;
    let inv = perm.inverse();
    let headers = inv.col_perm.iter().map(|&c| table.headers[c].clone()).collect();
    let rows = inv
        .row_perm
        .iter()
        .map(|&r| inv.col_perm.iter().map(|&c| table.rows[r][c].clone()).collect())
        .collect();
    Ok(TableTextPair {
        sentence: pair.sentence.clone(),
        table: Table { headers, rows },
        gold_cells: pair.gold_cells.iter().map(|&g| perm.apply(g)).collect(),
    })
}

/// Per-cell dense ranks; 0 means "no rank".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankAssignment {
    ranks: Vec<Vec<u32>>,
}

impl RankAssignment {
    pub fn get(&self, coord: CellCoord) -> u32 {
        self.ranks[coord.row][coord.col]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.ranks
    }

    pub fn column(&self, col: usize) -> Vec<u32> {
        self.ranks.iter().map(|r| r[col]).collect()
    }
}

/// Dense ascending ranks for each column whose non-empty cells all parse as
/// numbers. Other columns, and empty cells, get rank 0.
pub fn compute_ranks(table: &Table) -> RankAssignment {
    let mut ranks = vec![vec![0u32; table.num_cols()]; table.num_rows()];
    for col in 0..table.num_cols() {
        let mut values = Vec::new();
        let mut rankable = true;
        for (row, cells) in table.rows.iter().enumerate() {
            let text = cells[col].trim();
            if text.is_empty() {
                continue;
            }
            match parse_numeric(text) {
                Some(v) => values.push((v, row)),
                None => {
                    rankable = false;
                    break;
                }
            }
        }
        if !rankable {
            continue;
        }
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut rank = 0u32;
        let mut prev: Option<f64> = None;
        for (v, row) in values {
            if prev != Some(v) {
                rank += 1;
                prev = Some(v);
            }
            ranks[row][col] = rank;
        }
    }
    RankAssignment { ranks }
}

fn all_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// Parses a decimal literal (`[+-]?\d+(\.\d+)?`) or a colon duration.
///
/// `a:bb` reads as `a*60 + bb` (minutes:seconds, or hours:minutes in minute
/// units) and `a:bb:cc` as `a*3600 + bb*60 + cc`; trailing components must be
/// exactly two digits below 60.
pub fn parse_numeric(text: &str) -> Option<f64> {
    let s = text.trim();
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() > 3 || !all_digits(parts[0]) {
            return None;
        }
        let mut total: f64 = parts[0].parse().ok()?;
        for p in &parts[1..] {
            if p.len() != 2 || !all_digits(p) {
                return None;
            }
            let v: f64 = p.parse().ok()?;
            if v >= 60.0 {
                return None;
            }
            total = total * 60.0 + v;
        }
        return Some(total);
    }
    let unsigned = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = match unsigned.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (unsigned, None),
    };
    if !all_digits(int) || frac.is_some_and(|f| !all_digits(f)) {
        return None;
    }
    s.parse().ok()
}
