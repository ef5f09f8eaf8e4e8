//! Structural relation types between token pairs and the dense relation
//! matrix that indexes the per-head attention bias scalars.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::{LinearizedSequence, TokenAnnotation, TokenKind};

/// The thirteen relation types. Discriminants are the wire codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum BiasTypeId {
    Others = 0,
    SameRow = 1,
    SameColumn = 2,
    HeaderToColumnCell = 3,
    CellToColumnHeader = 4,
    HeaderToSentence = 5,
    CellToSentence = 6,
    SentenceToHeader = 7,
    SentenceToCell = 8,
    SentenceToSentence = 9,
    HeaderToSameHeader = 10,
    HeaderToOtherHeader = 11,
    SameCell = 12,
}

pub const NUM_BIAS_TYPES: usize = 13;

impl BiasTypeId {
    pub const ALL: [BiasTypeId; NUM_BIAS_TYPES] = [
        Self::Others,
        Self::SameRow,
        Self::SameColumn,
        Self::HeaderToColumnCell,
        Self::CellToColumnHeader,
        Self::HeaderToSentence,
        Self::CellToSentence,
        Self::SentenceToHeader,
        Self::SentenceToCell,
        Self::SentenceToSentence,
        Self::HeaderToSameHeader,
        Self::HeaderToOtherHeader,
        Self::SameCell,
    ];

    /// The three types that carry column membership.
    pub const COLUMN_RELATED: [BiasTypeId; 3] = [Self::SameColumn, Self::HeaderToColumnCell, Self::CellToColumnHeader];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Others => "others",
            Self::SameRow => "same_row",
            Self::SameColumn => "same_column",
            Self::HeaderToColumnCell => "header_to_column_cell",
            Self::CellToColumnHeader => "cell_to_column_header",
            Self::HeaderToSentence => "header_to_sentence",
            Self::CellToSentence => "cell_to_sentence",
            Self::SentenceToHeader => "sentence_to_header",
            Self::SentenceToCell => "sentence_to_cell",
            Self::SentenceToSentence => "sentence_to_sentence",
            Self::HeaderToSameHeader => "header_to_same_header",
            Self::HeaderToOtherHeader => "header_to_other_header",
            Self::SameCell => "same_cell",
        }
    }

    /// The type of the reversed pair (key, query).
    pub fn transpose(self) -> Self {
        match self {
            Self::HeaderToColumnCell => Self::CellToColumnHeader,
            Self::CellToColumnHeader => Self::HeaderToColumnCell,
            Self::HeaderToSentence => Self::SentenceToHeader,
            Self::SentenceToHeader => Self::HeaderToSentence,
            Self::CellToSentence => Self::SentenceToCell,
            Self::SentenceToCell => Self::CellToSentence,
            other => other,
        }
    }
}

impl TryFrom<u8> for BiasTypeId {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("relation type code {code} outside 0..=12")))
    }
}

impl From<BiasTypeId> for u8 {
    fn from(t: BiasTypeId) -> u8 {
        t as u8
    }
}

impl fmt::Display for BiasTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasTypeId {
    type Err = Error;

    /// Accepts either the numeric code or the snake_case name.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(code) = s.parse::<u8>() {
            return Self::try_from(code);
        }
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown relation type {s:?}")))
    }
}

/// Relation of query token `a` to key token `b`.
pub fn classify_relation(a: &TokenAnnotation, b: &TokenAnnotation) -> BiasTypeId {
    use BiasTypeId::*;
    use TokenKind::*;
    let same_cell = a.cell_ordinal.is_some() && a.cell_ordinal == b.cell_ordinal;
    match (a.kind, b.kind) {
        (x, y) if x.is_sentence_side() && y.is_sentence_side() => SentenceToSentence,
        (x, Header) if x.is_sentence_side() => SentenceToHeader,
        (x, Cell) if x.is_sentence_side() => SentenceToCell,
        (Header, y) if y.is_sentence_side() => HeaderToSentence,
        (Cell, y) if y.is_sentence_side() => CellToSentence,
        (Header, Header) if same_cell => HeaderToSameHeader,
        (Header, Header) => HeaderToOtherHeader,
        (Header, Cell) if a.column == b.column => HeaderToColumnCell,
        (Cell, Header) if a.column == b.column => CellToColumnHeader,
        (Cell, Cell) if same_cell => SameCell,
        (Cell, Cell) if a.row == b.row => SameRow,
        (Cell, Cell) if a.column == b.column => SameColumn,
        _ => Others,
    }
}

/// Dense n×n relation matrix; row = query token, column = key token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiasTypeMatrix {
    n: usize,
    types: Vec<BiasTypeId>,
}

impl BiasTypeMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> BiasTypeId) -> Self {
        let mut types = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                types.push(f(i, j));
            }
        }
        Self { n, types }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> BiasTypeId {
        self.types[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[BiasTypeId] {
        &self.types[i * self.n..(i + 1) * self.n]
    }

    pub fn iter(&self) -> impl Iterator<Item = BiasTypeId> + '_ {
        self.types.iter().copied()
    }

    /// Nested integer grid, the `biasmap` output format.
    pub fn to_grid(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|&t| t as u8).collect())
            .collect()
    }

    pub fn from_grid(grid: &[Vec<u8>]) -> Result<Self> {
        let n = grid.len();
        let mut types = Vec::with_capacity(n * n);
        for row in grid {
            if row.len() != n {
                return Err(Error::DimensionMismatch("relation grid is not square".into()));
            }
            for &code in row {
                types.push(BiasTypeId::try_from(code)?);
            }
        }
        Ok(Self { n, types })
    }

    /// Occurrence count of each type, indexed by code.
    pub fn histogram(&self) -> [usize; NUM_BIAS_TYPES] {
        let mut h = [0; NUM_BIAS_TYPES];
        for t in &self.types {
            h[t.index()] += 1;
        }
        h
    }
}

pub fn bias_type_matrix(seq: &LinearizedSequence) -> BiasTypeMatrix {
    let ann: Vec<&TokenAnnotation> = seq.annotations().collect();
    BiasTypeMatrix::from_fn(ann.len(), |i, j| classify_relation(ann[i], ann[j]))
}

/// Remaps every entry whose type is in `remove` to OTHERS.
pub fn ablate_types(m: &BiasTypeMatrix, remove: &BTreeSet<BiasTypeId>) -> Result<BiasTypeMatrix> {
    if remove.contains(&BiasTypeId::Others) {
        return Err(Error::AblateOthers);
    }
    Ok(BiasTypeMatrix {
        n: m.n,
        types: m
            .types
            .iter()
            .map(|t| if remove.contains(t) { BiasTypeId::Others } else { *t })
            .collect(),
    })
}
