//! Tokenization and flattening of a table-text pair into id streams.
//!
//! Layout: `[CLS]`, sentence tokens, `[SEP]`, header cells left to right,
//! then body cells in row-major order. A cell whose text yields no tokens is
//! represented by a single `[EMPTY]` token so every cell owns at least one
//! position.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{CellCoord, RankAssignment, TableTextPair};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const EMPTY: &str = "[EMPTY]";

pub const DEFAULT_VOCAB_SIZE: u32 = 30_000;
pub const DEFAULT_MAX_LEN: usize = 512;

/// Which positional id streams the linearizer emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PositionalScheme {
    /// Row ids, column ids and global positions.
    #[serde(rename = "rc-gp")]
    RcGp,
    /// Column ids and global positions.
    #[serde(rename = "c-gp")]
    CGp,
    /// Global positions only.
    #[serde(rename = "gp")]
    Gp,
    /// Per-cell positions that restart at every table cell.
    #[serde(rename = "pcp")]
    Pcp,
}

impl PositionalScheme {
    pub fn uses_row_ids(self) -> bool {
        matches!(self, Self::RcGp)
    }

    pub fn uses_column_ids(self) -> bool {
        matches!(self, Self::RcGp | Self::CGp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RcGp => "rc-gp",
            Self::CGp => "c-gp",
            Self::Gp => "gp",
            Self::Pcp => "pcp",
        }
    }
}

impl fmt::Display for PositionalScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositionalScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rc-gp" | "rc_gp" => Ok(Self::RcGp),
            "c-gp" | "c_gp" => Ok(Self::CGp),
            "gp" => Ok(Self::Gp),
            "pcp" => Ok(Self::Pcp),
            other => Err(Error::InvalidConfig(format!("unknown positional scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TokenKind {
    Cls,
    Sep,
    Sentence,
    Header,
    Cell,
}

impl TokenKind {
    /// CLS and SEP share the sentence side for relation typing.
    pub fn is_sentence_side(self) -> bool {
        matches!(self, Self::Cls | Self::Sep | Self::Sentence)
    }
}

/// Structural coordinates of one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenAnnotation {
    pub kind: TokenKind,
    /// 1-based column; 0 for non-table tokens.
    pub column: usize,
    /// 1-based body row; 0 for headers and non-table tokens.
    pub row: usize,
    /// Index of the enclosing cell in linearization order (headers first).
    pub cell_ordinal: Option<usize>,
}

impl TokenAnnotation {
    fn sentence_side(kind: TokenKind) -> Self {
        Self {
            kind,
            column: 0,
            row: 0,
            cell_ordinal: None,
        }
    }

    /// Zero-based body cell coordinate, if this is a CELL token.
    pub fn cell_coord(&self) -> Option<CellCoord> {
        (self.kind == TokenKind::Cell).then(|| CellCoord::new(self.row - 1, self.column - 1))
    }
}

/// One position of a linearized sequence with every id stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub token_id: u32,
    #[serde(flatten)]
    pub annotation: TokenAnnotation,
    pub segment_id: u32,
    pub rank_id: u32,
    pub global_pos: u32,
    pub cell_pos: u32,
    pub column_id: u32,
    pub row_id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearizedSequence {
    pub scheme: PositionalScheme,
    pub tokens: Vec<Token>,
}

impl LinearizedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn annotations(&self) -> impl Iterator<Item = &TokenAnnotation> + '_ {
        self.tokens.iter().map(|t| &t.annotation)
    }

    /// Token indices of every body cell, keyed by zero-based coordinate and
    /// ordered row-major.
    pub fn cell_groups(&self) -> Vec<(CellCoord, Vec<usize>)> {
        let mut groups: Vec<(CellCoord, Vec<usize>)> = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if let Some(coord) = t.annotation.cell_coord() {
                match groups.last_mut() {
                    Some((c, idx)) if *c == coord => idx.push(i),
                    _ => groups.push((coord, vec![i])),
                }
            }
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearizeOptions {
    pub vocab_size: u32,
    pub max_len: usize,
}

impl Default for LinearizeOptions {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Lowercases, splits on whitespace, and emits every character that is
/// neither alphanumeric nor whitespace as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() {
                current.extend(ch.to_lowercase());
            } else {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(ch.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `surface`, reduced modulo `vocab_size`.
pub fn token_id(surface: &str, vocab_size: u32) -> u32 {
    assert!(vocab_size > 0, "vocabulary size must be positive");
    let hash = surface
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME));
    (hash % vocab_size as u64) as u32
}

struct Builder<'a> {
    scheme: PositionalScheme,
    opts: &'a LinearizeOptions,
    tokens: Vec<Token>,
}

impl Builder<'_> {
    fn push(&mut self, text: String, annotation: TokenAnnotation, rank: u32, cell_pos: u32) {
        let global = self.tokens.len() as u32;
        let table_side = !annotation.kind.is_sentence_side();
        let pcp = self.scheme == PositionalScheme::Pcp;
        self.tokens.push(Token {
            token_id: token_id(&text, self.opts.vocab_size),
            text,
            segment_id: table_side as u32,
            rank_id: rank,
            global_pos: if pcp { 0 } else { global },
            cell_pos: if pcp { cell_pos } else { 0 },
            column_id: if self.scheme.uses_column_ids() {
                annotation.column as u32
            } else {
                0
            },
            row_id: if self.scheme.uses_row_ids() {
                annotation.row as u32
            } else {
                0
            },
            annotation,
        });
    }

    fn push_cell(&mut self, text: &str, annotation: TokenAnnotation, rank: u32) {
        let mut pieces = tokenize(text);
        if pieces.is_empty() {
            pieces.push(EMPTY.to_string());
        }
        for (pos, piece) in pieces.into_iter().enumerate() {
            self.push(piece, annotation, rank, pos as u32);
        }
    }
}

/// Flattens `pair` into a token sequence under `scheme`.
pub fn linearize(
    pair: &TableTextPair,
    ranks: &RankAssignment,
    scheme: PositionalScheme,
    opts: &LinearizeOptions,
) -> Result<LinearizedSequence> {
    let table = pair.table();
    if ranks.rows().len() != table.num_rows() || ranks.rows().iter().any(|r| r.len() != table.num_cols()) {
        return Err(Error::DimensionMismatch(
            "rank assignment does not match the table shape".into(),
        ));
    }
    let mut b = Builder {
        scheme,
        opts,
        tokens: Vec::new(),
    };
    // Sentence side: running positions in every scheme.
    let mut pos = 0u32;
    b.push(CLS.into(), TokenAnnotation::sentence_side(TokenKind::Cls), 0, pos);
    for piece in tokenize(&pair.sentence) {
        pos += 1;
        b.push(piece, TokenAnnotation::sentence_side(TokenKind::Sentence), 0, pos);
    }
    pos += 1;
    b.push(SEP.into(), TokenAnnotation::sentence_side(TokenKind::Sep), 0, pos);

    let mut ordinal = 0;
    for (c, header) in table.headers().iter().enumerate() {
        let ann = TokenAnnotation {
            kind: TokenKind::Header,
            column: c + 1,
            row: 0,
            cell_ordinal: Some(ordinal),
        };
        b.push_cell(header, ann, 0);
        ordinal += 1;
    }
    for (r, row) in table.rows().iter().enumerate() {
        for (c, text) in row.iter().enumerate() {
            let ann = TokenAnnotation {
                kind: TokenKind::Cell,
                column: c + 1,
                row: r + 1,
                cell_ordinal: Some(ordinal),
            };
            b.push_cell(text, ann, ranks.get(CellCoord::new(r, c)));
            ordinal += 1;
        }
    }
    if b.tokens.len() > opts.max_len {
        return Err(Error::SequenceTooLong {
            len: b.tokens.len(),
            max: opts.max_len,
        });
    }
    Ok(LinearizedSequence {
        scheme,
        tokens: b.tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{compute_ranks, Table};

    fn songs() -> TableTextPair {
        let table = Table::from_strs(
            &["Title", "Length"],
            &[&["Screwed Up", "5:02"], &["Ghetto Queen", "5:00"]],
        )
        .unwrap();
        TableTextPair::new("query", table, [CellCoord::new(0, 1)]).unwrap()
    }

    fn lin(pair: &TableTextPair, scheme: PositionalScheme) -> LinearizedSequence {
        linearize(pair, &compute_ranks(pair.table()), scheme, &LinearizeOptions::default()).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Screwed Up"), ["screwed", "up"]);
        assert_eq!(tokenize("5:02"), ["5", ":", "02"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  Hi,  there!"), ["hi", ",", "there", "!"]);
    }

    #[test]
    fn token_id_is_stable() {
        assert_eq!(token_id("spain", 30_000), token_id("spain", 30_000));
        assert_eq!(token_id("spain", 1), 0);
        // FNV-1a reference value for "a": 0xaf63dc4c8601ec8c.
        assert_eq!(
            token_id("a", u32::MAX),
            (0xaf63_dc4c_8601_ec8c_u64 % u32::MAX as u64) as u32
        );
    }

    #[test]
    fn pcp_restarts_positions_per_cell() {
        let seq = lin(&songs(), PositionalScheme::Pcp);
        let screwed: Vec<&Token> = seq
            .tokens
            .iter()
            .filter(|t| t.annotation.kind == TokenKind::Cell && t.annotation.row == 1 && t.annotation.column == 1)
            .collect();
        assert_eq!(screwed.len(), 2);
        assert_eq!(screwed[0].text, "screwed");
        assert_eq!(screwed.iter().map(|t| t.cell_pos).collect::<Vec<_>>(), vec![0, 1]);
        for t in &screwed {
            assert_eq!(t.segment_id, 1);
            assert_eq!((t.row_id, t.column_id, t.global_pos), (0, 0, 0));
        }
        // "5:02" tokens restart at zero too and carry rank 2.
        let length: Vec<&Token> = seq
            .tokens
            .iter()
            .filter(|t| t.annotation.row == 1 && t.annotation.column == 2)
            .collect();
        assert_eq!(length.iter().map(|t| t.cell_pos).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(length.iter().all(|t| t.rank_id == 2));
    }

    #[test]
    fn rc_gp_global_positions() {
        let seq = lin(&songs(), PositionalScheme::RcGp);
        for (i, t) in seq.tokens.iter().enumerate() {
            assert_eq!(t.global_pos as usize, i);
            assert_eq!(t.cell_pos, 0);
        }
        let title = seq.tokens.iter().find(|t| t.text == "title").unwrap();
        assert_eq!((title.annotation.row, title.annotation.column), (0, 1));
        assert_eq!((title.row_id, title.column_id), (0, 1));
        let queen = seq.tokens.iter().find(|t| t.text == "queen").unwrap();
        assert_eq!((queen.row_id, queen.column_id), (2, 1));
    }

    #[test]
    fn scheme_stream_zeroing() {
        let pair = songs();
        let cgp = lin(&pair, PositionalScheme::CGp);
        assert!(cgp.tokens.iter().all(|t| t.row_id == 0));
        assert!(cgp.tokens.iter().any(|t| t.column_id > 0));
        let gp = lin(&pair, PositionalScheme::Gp);
        assert!(gp.tokens.iter().all(|t| t.row_id == 0 && t.column_id == 0));
    }

    #[test]
    fn layout_and_segments() {
        let seq = lin(&songs(), PositionalScheme::Pcp);
        assert_eq!(seq.tokens[0].annotation.kind, TokenKind::Cls);
        let seps: Vec<usize> = seq
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.annotation.kind == TokenKind::Sep)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(seps, vec![2]);
        for t in &seq.tokens {
            let table_side = matches!(t.annotation.kind, TokenKind::Header | TokenKind::Cell);
            assert_eq!(t.segment_id, table_side as u32);
            if t.annotation.kind != TokenKind::Cell {
                assert_eq!(t.rank_id, 0);
            }
        }
        let groups = seq.cell_groups();
        assert_eq!(groups.len(), 4);
        assert_eq!(groups[0].0, CellCoord::new(0, 0));
        assert_eq!(groups[3].0, CellCoord::new(1, 1));
    }

    #[test]
    fn empty_table_has_no_cells() {
        let t = Table::from_strs(&["x"], &[]).unwrap();
        let pair = TableTextPair::new("a b", t, []).unwrap();
        let seq = lin(&pair, PositionalScheme::Pcp);
        let kinds: Vec<TokenKind> = seq.tokens.iter().map(|t| t.annotation.kind).collect();
        assert_eq!(
            kinds,
            [
                TokenKind::Cls,
                TokenKind::Sentence,
                TokenKind::Sentence,
                TokenKind::Sep,
                TokenKind::Header
            ]
        );
    }

    #[test]
    fn empty_cell_gets_placeholder() {
        let t = Table::from_strs(&["x", ""], &[&["", "1"]]).unwrap();
        let pair = TableTextPair::new("", t, []).unwrap();
        let seq = lin(&pair, PositionalScheme::Pcp);
        assert_eq!(seq.cell_groups().len(), 2);
        assert_eq!(seq.tokens.iter().filter(|t| t.text == EMPTY).count(), 2);
    }

    #[test]
    fn overlong_sequence_is_an_error() {
        let pair = songs();
        let opts = LinearizeOptions {
            vocab_size: 100,
            max_len: 5,
        };
        let err = linearize(&pair, &compute_ranks(pair.table()), PositionalScheme::Pcp, &opts);
        assert!(matches!(err, Err(Error::SequenceTooLong { max: 5, .. })));
    }

    #[test]
    fn scheme_parsing() {
        for s in [
            PositionalScheme::RcGp,
            PositionalScheme::CGp,
            PositionalScheme::Gp,
            PositionalScheme::Pcp,
        ] {
            assert_eq!(s.as_str().parse::<PositionalScheme>().unwrap(), s);
        }
        assert!("xyz".parse::<PositionalScheme>().is_err());
    }
}
